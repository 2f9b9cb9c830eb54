"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line (printed in the terminal summary) before
asserting, so a failing criterion still reports its measured value. The
end-to-end criteria drive the real command-line entry points.

Run alone with ``pytest tests/test_acceptance.py -v``.
"""

import itertools
import time

import numpy as np
import pytest

from scnn_forensics import bench, cli, dataset, gradcheck, imageio, localizer, model, postproc
from scnn_forensics.errors import FormatError, TensorShapeError
from scnn_forensics.localizer import ProbabilityMap
from scnn_forensics.postproc import BinaryMap, BoundingBox, Verdict

pytestmark = pytest.mark.slow

SEED = 0
HELD_OUT_SEED = 999


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Default corpus -> trained weights -> held-out corpus, all through the CLI."""
    root = tmp_path_factory.mktemp("e2e")
    start = time.perf_counter()
    assert cli.main(["gen", "--out", str(root / "train"), "--seed", str(SEED)]) == 0
    assert cli.main(["gen", "--out", str(root / "held"), "--seed", str(HELD_OUT_SEED),
                     "--count", "20"]) == 0
    assert cli.main(["train", "--corpus", str(root / "train"), "--weights",
                     str(root / "w.scnw"), "--seed", str(SEED)]) == 0
    return {"root": root, "weights": root / "w.scnw", "metrics": root / "w.csv",
            "seconds": time.perf_counter() - start}


def test_architecture_fidelity(acceptance_line):
    start = time.perf_counter()
    params = model.init_params()
    counts = params.layer_counts()
    shapes = model.stage_shapes(params, np.zeros((32, 32, 3), np.float32))[1:]
    elapsed = time.perf_counter() - start
    ok = (counts == {"conv1": 608, "conv2": 9248, "dense1": 1605696, "dense2": 65}
          and shapes == [(32, 32, 2), (30, 30, 32), (28, 28, 32), (25088,), (64,), (1,)]
          and elapsed < 1.0)
    acceptance_line("1 architecture", ok,
                    f"counts {list(counts.values())} total {params.n_params()}, "
                    f"shapes {shapes}, {elapsed:.2f}s")
    assert ok


def test_gradient_correctness(acceptance_line):
    start = time.perf_counter()
    params = model.init_params(model.TrainConfig(seed=7))
    rng = np.random.default_rng(7)
    for name, arr in params.named():
        if name.endswith("bias"):
            params[name] = rng.normal(0, 0.05, arr.shape).astype(np.float32)
    patch = rng.random((32, 32, 3)).astype(np.float32)
    results = gradcheck.check_gradients(params, patch, 1, n_coords=50, step=1e-3, seed=7)
    elapsed = time.perf_counter() - start
    worst = {r.name: r.max_rel_error for r in results}
    covered = all(r.checked == min(50, r.size) for r in results)
    ok = covered and max(worst.values()) <= 1e-3 and elapsed < 60
    acceptance_line("2 gradients", ok,
                    f"max rel error {max(worst.values()):.2e} over {len(results)} tensors "
                    f"(worst {max(worst, key=worst.get)}), {elapsed:.1f}s")
    assert ok


def test_fast_equals_sliding_window(acceptance_line):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for case in range(20):
        params = model.init_params(model.TrainConfig(seed=case))
        for name, arr in params.named():
            if name.endswith("bias"):
                params[name] = rng.normal(0, 0.1, arr.shape).astype(np.float32)
        h, w = (int(v) for v in rng.integers(32, 161, size=2))
        stride = int(rng.choice([1, 2, 4]))
        image = rng.random((h, w, 3)).astype(np.float32)
        fast = localizer.fast_scnn(params, image, stride).scores
        slow = localizer.swd(params, image, stride).scores
        assert fast.shape == slow.shape
        worst = max(worst, float(np.abs(fast - slow).max()))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-5 and elapsed < 120
    acceptance_line("3 fast == swd", ok, f"max |diff| {worst:.2e} over 20 pairs, {elapsed:.1f}s")
    assert ok


def test_speedup_ratio(pipeline, acceptance_line, capsys):
    start = time.perf_counter()
    report = cli.cmd_bench(cli.build_parser().parse_args(
        ["bench", "--weights", str(pipeline["weights"])]))
    elapsed = time.perf_counter() - start
    rows = {r.size: r for r in report.rows}
    saved = [rows[s].saved for s in sorted(rows)]
    ok = (rows[256].ratio <= 0.8 and all(r.ratio < 1.0 for r in report.rows)
          and all(a < b for a, b in zip(saved, saved[1:])) and elapsed < 300)
    detail = ", ".join(f"{r.size}px ratio {r.ratio:.3f} saved {r.saved:.2f}s"
                       for r in report.rows)
    acceptance_line("4 speedup", ok, f"{detail}; {elapsed:.0f}s")
    assert ok


def test_synthetic_end_to_end(pipeline, acceptance_line, capsys):
    start = time.perf_counter()
    rows = pipeline["metrics"].read_text().splitlines()[1:]
    val = [float(r.split(",")[2]) for r in rows]
    args = cli.build_parser().parse_args(["eval", "--corpus", str(pipeline["root"] / "held"),
                                          "--weights", str(pipeline["weights"])])
    loc = cli.cmd_eval(args)
    window = cli.cmd_eval(cli.build_parser().parse_args(
        ["eval", "--corpus", str(pipeline["root"] / "held"), "--weights",
         str(pipeline["weights"]), "--footprint", "window"]))
    elapsed = pipeline["seconds"] + time.perf_counter() - start
    ok = len(val) <= 20 and max(val) >= 0.85 and loc >= 0.70 and elapsed < 900
    acceptance_line("5 synthetic end-to-end", ok,
                    f"best val acc {max(val):.3f} in {len(val)} epochs, localization "
                    f"{loc:.2f} on 20 held-out (window-extent boxes: {window:.2f}), "
                    f"{elapsed:.0f}s")
    assert ok


def test_patch_rule(acceptance_line):
    start = time.perf_counter()
    rng = np.random.default_rng(6)
    n_boundary = n_normal = 0
    ok = True
    for i in range(12):
        spec = dataset.random_forgery_spec(rng)
        original, tampered, _ = dataset.make_pair(spec)
        mask = dataset.diff_mask(tampered, original)
        h, w = mask.shape
        records = dataset.extract_patches(tampered, mask, image_id=i)
        for r in records:
            frac = float(mask[r.top:r.top + 32, r.left:r.left + 32].mean())
            if r.label == dataset.BOUNDARY:
                n_boundary += 1
                ok &= 0.35 < frac < 0.65
            else:
                n_normal += 1
                ok &= frac == 0.0
        kept = sum(1 for t in range(0, h - 31, 10) for l in range(0, w - 31, 10)
                   if (f := float(mask[t:t + 32, l:l + 32].mean())) == 0 or 0.35 < f < 0.65)
        ok &= len(records) == kept
        ok &= dataset.window_counts(mask).size == ((h - 32) // 10 + 1) * ((w - 32) // 10 + 1)
    elapsed = time.perf_counter() - start
    ok = bool(ok) and n_boundary > 0 and n_normal > 0 and elapsed < 30
    acceptance_line("6 patch rule", ok, f"{n_boundary} boundary + {n_normal} normal patches "
                    f"re-checked, {elapsed:.1f}s")
    assert ok


def _majority(bits, k):
    h, w = bits.shape
    r = k // 2
    padded = np.pad(bits, r, mode="edge")
    return np.array([[int(2 * padded[i:i + k, j:j + k].sum() > k * k) for j in range(w)]
                     for i in range(h)], dtype=np.uint8)


def test_postprocessing_properties(acceptance_line):
    start = time.perf_counter()
    rng = np.random.default_rng(7)
    median_ok = True
    for _ in range(100):
        bits = (rng.random(rng.integers(1, 20, 2)) < 0.5).astype(np.uint8)
        k = int(rng.choice([1, 3, 5, 7]))
        median_ok &= np.array_equal(postproc.median_filter(BinaryMap(bits, 2), k).bits,
                                    _majority(bits, k))

    merge_ok = iou_ok = True
    for _ in range(200):
        boxes = [BoundingBox(t, l, t + hh, l + ww) for t, l, hh, ww in
                 rng.integers(1, 50, size=(rng.integers(0, 10), 4))]
        merged = postproc.merge_boxes(boxes)
        merge_ok &= postproc.merge_boxes(merged) == merged
        merge_ok &= not any(a.intersects(b) for a, b in itertools.combinations(merged, 2))
        for a, b in itertools.combinations(boxes[:4], 2):
            v = postproc.iou(a, b)
            iou_ok &= v == postproc.iou(b, a) and 0.0 <= v <= 1.0 and postproc.iou(a, a) == 1.0

    scores = rng.random((30, 30)).astype(np.float32)
    scores[3, 4] = 0.5
    bits = postproc.threshold(ProbabilityMap(scores, 2), 0.5).bits
    threshold_ok = bool(np.array_equal(bits, scores > 0.5)) and bits[3, 4] == 0

    mask = np.zeros((20, 20), np.uint8)
    mask[:10, :10] = 1
    half = postproc.evaluate([BoundingBox(0, 0, 10, 5)], mask)
    boundary_ok = half.best_iou == 0.5 and not half.correct

    elapsed = time.perf_counter() - start
    ok = median_ok and merge_ok and iou_ok and threshold_ok and boundary_ok and elapsed < 30
    acceptance_line("7 post-processing", ok,
                    f"median {median_ok}, merge {merge_ok}, iou {iou_ok}, "
                    f"threshold {threshold_ok}, IoU 0.5 rejected {boundary_ok}, {elapsed:.1f}s")
    assert ok


def test_format_round_trips(tmp_path, acceptance_line):
    start = time.perf_counter()
    rng = np.random.default_rng(8)
    checks = {}

    def twice(write, read, name):
        first, second = tmp_path / f"{name}.1", tmp_path / f"{name}.2"
        write(first)
        write_back = read(first)
        write(second, write_back)
        checks[name] = first.read_bytes() == second.read_bytes()

    rgb = rng.integers(0, 256, (9, 7, 3)).astype(np.uint8)
    twice(lambda p, v=rgb: p.write_bytes(imageio.encode(imageio.to_uint8(v))),
          imageio.read_image, "ppm")
    gray = rng.integers(0, 256, (5, 6)).astype(np.uint8)
    twice(lambda p, v=gray: p.write_bytes(imageio.encode(imageio.to_uint8(v))),
          imageio.read_image, "pgm")
    params = model.init_params()
    twice(lambda p, v=params: model.save_params(v, p), model.load_params, "scnw")
    recs = [dataset.PatchRecord(rng.integers(0, 256, (32, 32, 3)).astype(np.float32) / 255,
                                i % 2, i, i, 2 * i) for i in range(4)]
    twice(lambda p, v=recs: dataset.write_records(v, p), dataset.read_records, "fpd1")
    pmap = ProbabilityMap(rng.random((4, 6)).astype(np.float32), 2)
    twice(lambda p, v=pmap: localizer.write_map(v, p), localizer.read_map, "map")
    lines = [postproc.format_result(0, [BoundingBox(1, 2, 33, 34)], Verdict(True, 0.61)),
             postproc.format_result(1, [], Verdict(False, 0.0))]
    twice(lambda p, v=lines: postproc.write_results(
        v if isinstance(v[0], str) else [postproc.format_result(*x) for x in v], p),
        postproc.read_results, "boxes")

    errors = {}

    def expect(name, exc, fn):
        try:
            fn()
        except exc:
            errors[name] = True
        except Exception:  # noqa: BLE001 - the wrong error type is a failure
            errors[name] = False
        else:
            errors[name] = False

    ppm = imageio.encode(rgb)
    expect("ppm truncated", FormatError, lambda: imageio.decode(ppm[:-3]))
    expect("ppm maxval", FormatError, lambda: imageio.decode(ppm.replace(b"255", b"1023", 1)))
    scnw = (tmp_path / "scnw.1").read_bytes()
    (tmp_path / "cut.scnw").write_bytes(scnw[:len(scnw) // 2])
    expect("scnw truncated", FormatError, lambda: model.load_params(tmp_path / "cut.scnw"))
    swapped = bytearray(scnw)
    at = swapped.index(b"dense1.weights") + len(b"dense1.weights") + 4
    swapped[at:at + 8] = np.array([64, 25088], "<u4").tobytes()
    (tmp_path / "swap.scnw").write_bytes(bytes(swapped))
    expect("scnw dense1 swapped", TensorShapeError,
           lambda: model.load_params(tmp_path / "swap.scnw"))
    fpd = (tmp_path / "fpd1.1").read_bytes()
    expect("fpd1 magic", FormatError, lambda: dataset.decode_records(b"FPD2" + fpd[4:]))
    expect("fpd1 truncated", FormatError, lambda: dataset.decode_records(fpd[:-1]))
    pm = (tmp_path / "map.1").read_bytes()
    expect("map truncated", FormatError, lambda: ProbabilityMap.from_bytes(pm[:-4]))
    expect("boxes bad quad", FormatError, lambda: postproc.parse_result("0 1,2,3 0.5 correct"))

    elapsed = time.perf_counter() - start
    ok = all(checks.values()) and all(errors.values()) and elapsed < 30
    acceptance_line("8 formats", ok,
                    f"byte-identical {sum(checks.values())}/{len(checks)}, typed errors "
                    f"{sum(errors.values())}/{len(errors)}, {elapsed:.1f}s")
    assert ok, {**checks, **errors}
