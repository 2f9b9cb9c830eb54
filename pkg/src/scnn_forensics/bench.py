"""Wall-clock comparison of the two localizer back ends."""

import statistics
import time
from dataclasses import dataclass, field

import numpy as np

from . import localizer
from .errors import ParameterError, StateError

DEFAULT_SIZES = (128, 256, 384)
DEFAULT_REPEATS = 3
EQUALITY_TOLERANCE = 1e-5


@dataclass
class BenchRow:
    size: int
    swd: float
    fast: float
    max_abs_diff: float

    @property
    def ratio(self):
        return self.fast / self.swd

    @property
    def saved(self):
        return self.swd - self.fast


@dataclass
class BenchReport:
    stride: int
    repeats: int
    rows: list = field(default_factory=list)

    def to_text(self):
        lines = [f"# stride={self.stride} repeats={self.repeats} (median seconds per image)",
                 "size swd_s fast_s ratio saved_s max_abs_diff"]
        for r in self.rows:
            lines.append(f"{r.size} {r.swd:.4f} {r.fast:.4f} {r.ratio:.3f} {r.saved:.4f} "
                         f"{r.max_abs_diff:.2e}")
        return "\n".join(lines)


def _median_time(fn, repeats):
    times = []
    result = None
    for _ in range(repeats):
        start = time.perf_counter()
        result = fn()
        times.append(time.perf_counter() - start)
    return statistics.median(times), result


def run_bench(params, sizes=DEFAULT_SIZES, stride=2, repeats=DEFAULT_REPEATS, seed=0):
    """Time SWD and Fast SCNN on random square images of each size.

    Raises :class:`StateError` if the two maps ever disagree by more than
    ``EQUALITY_TOLERANCE``; a speedup over a wrong answer is not reported.
    """
    if repeats < 1:
        raise ParameterError(f"repeats must be >= 1, got {repeats}")
    rng = np.random.default_rng(seed)
    report = BenchReport(stride, repeats)
    for size in sizes:
        image = rng.random((size, size, 3), dtype=np.float32)
        # warm-up, so allocator and BLAS start-up costs hit neither side
        localizer.fast_scnn(params, image[:64, :64], stride)
        t_swd, m_swd = _median_time(lambda: localizer.swd(params, image, stride), repeats)
        t_fast, m_fast = _median_time(lambda: localizer.fast_scnn(params, image, stride), repeats)
        diff = float(np.abs(m_swd.scores - m_fast.scores).max())
        if diff > EQUALITY_TOLERANCE:
            raise StateError(f"back ends disagree at size {size}: max |diff| = {diff:.3g}")
        report.rows.append(BenchRow(size, t_swd, t_fast, diff))
    return report
