"""Central finite-difference check of the network's analytic gradients.

The oracle differentiates the loss numerically with every ReLU and dropout
mask frozen at its value at the unperturbed parameters. Inside the region
where no unit changes state this is the network itself; freezing only removes
the kinks a +/- step could otherwise straddle, so every sampled coordinate
yields a meaningful difference quotient. The oracle never touches the tape or
``backward``; it reuses forward kernels only.
"""

from dataclasses import dataclass, field

import numpy as np

from . import model, nn
from .colorspace import rgb_to_crcb


@dataclass
class TensorCheck:
    name: str
    size: int
    errors: list = field(default_factory=list)

    @property
    def checked(self):
        return len(self.errors)

    @property
    def max_rel_error(self):
        return max(self.errors, default=0.0)


def rel_error(analytic, numeric):
    scale = max(abs(analytic), abs(numeric))
    return 0.0 if scale == 0 else abs(analytic - numeric) / scale


def _masked_loss(params, crcb, label, masks, drop):
    h = nn.conv2d_valid(crcb, params.conv1_filters, params.conv1_bias) * masks[0]
    h = nn.conv2d_valid(h, params.conv2_filters, params.conv2_bias) * masks[1]
    h = nn.dense(h.reshape(-1), params.dense1_weights, params.dense1_bias) * masks[2] * drop
    z = nn.dense(h, params.dense2_weights, params.dense2_bias)
    return float(nn.bce_loss(nn.sigmoid(z)[0], label))


def check_gradients(params, patch, label, n_coords=50, step=1e-3, seed=0,
                    dropout_rate=0.5, oracle_dtype=np.float64):
    """Compare backprop gradients with central differences on sampled coordinates.

    ``params`` and ``patch`` set the precision of the analytic pass. The
    numeric pass evaluates the same float values in ``oracle_dtype`` so its own
    rounding does not swamp the quotient; pass ``np.float32`` to difference in
    single precision instead. Tensors smaller than ``n_coords`` are checked
    exhaustively.
    """
    rng = np.random.default_rng(seed)
    dropout_seed = int(rng.integers(2**31))
    tape = nn.Tape()
    prob = model.forward(params, patch[None], "train", np.random.default_rng(dropout_seed),
                         dropout_rate, tape=tape)
    masks = [c["mask"][0] for k, c in tape.records if k == "relu"]
    drop = [c.get("factor") for k, c in tape.records if k in ("dropout", "identity")][0]
    drop = np.ones(model.HIDDEN) if drop is None else drop[0]
    grads = nn.backward(tape, nn.bce_grad(prob, np.asarray(label, dtype=prob.dtype))[:, None])

    oracle = model.with_dtype(params, oracle_dtype)
    crcb = rgb_to_crcb(np.asarray(patch, dtype=oracle_dtype))
    masks = [m.astype(oracle_dtype) for m in masks]
    drop = drop.astype(oracle_dtype)

    results = []
    for name, arr in oracle.named():
        flat = arr.reshape(-1)
        ga = grads[name].reshape(-1)
        res = TensorCheck(name, flat.size)
        idx = rng.choice(flat.size, size=min(n_coords, flat.size), replace=False)
        for i in idx:
            old = flat[i]
            flat[i] = old + step
            plus_value = flat[i]
            lp = _masked_loss(oracle, crcb, label, masks, drop)
            flat[i] = old - step
            minus_value = flat[i]
            lm = _masked_loss(oracle, crcb, label, masks, drop)
            flat[i] = old
            # divide by the step actually realised after rounding to the dtype
            numeric = (lp - lm) / (float(plus_value) - float(minus_value))
            res.errors.append(rel_error(float(ga[i]), numeric))
        results.append(res)
    return results
