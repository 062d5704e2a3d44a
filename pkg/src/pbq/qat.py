"""Training-time partial binarization.

A PBLinearLayer keeps full-precision latent weights. On every forward pass
the unsalient entries are re-binarized from the current latents (mu plus the
optimal scale of the centered residue, per row group); the salient entries
pass through untouched and their gradients are forced to zero, so they stay
bitwise identical to initialization for the whole run.

The backward treats mu and alpha as constants of the step and routes the
dense weight gradient through the straight-through estimator: scaled by
alpha, gated by |w - mu| <= clip, zeroed at salient positions. Replacing
sign with a saturating identity (surrogate=True) makes that gradient exact,
which is how the finite-difference tests pin it down.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .binarize import ste_backward
from .config import QuantConfig
from .pbgptq import QuantReport, evaluate, rtn_quantize
from .saliency import SaliencyMask, detect_magnitude, group_bounds
from .tensorio import check_matrix, check_vector


class PBLinearLayer:
    """Linear layer with frozen salient weights and re-binarized remainder."""

    def __init__(
        self,
        weight,
        bias,
        mask: SaliencyMask,
        group_size: int = 0,
        clip: float = 1.0,
        use_zero_point: bool = True,
    ):
        self.latent_w = check_matrix(weight, "weight").copy()
        self.bias = check_vector(bias, "bias").copy()
        if self.bias.shape[0] != self.latent_w.shape[0]:
            raise ValueError(
                f"bias has length {self.bias.shape[0]}, "
                f"weight has {self.latent_w.shape[0]} rows"
            )
        if (mask.rows, mask.cols) != self.latent_w.shape:
            raise ValueError(
                f"mask is {mask.rows}x{mask.cols}, weight is {self.latent_w.shape}"
            )
        if group_size < 0:
            raise ValueError(f"group_size must be >= 0, got {group_size}")
        if not clip > 0:
            raise ValueError(f"clip must be positive, got {clip}")
        self.mask = mask
        self.group_size = group_size
        self.clip = float(clip)
        self.use_zero_point = bool(use_zero_point)
        self._salient = mask.to_bool()
        self._salient.setflags(write=False)

    @classmethod
    def init(
        cls,
        weight,
        bias,
        fraction: float,
        group_size: int = 0,
        clip: float = 1.0,
        use_zero_point: bool = True,
    ) -> "PBLinearLayer":
        """Detect the salient set by magnitude from the initial weights."""
        mask = detect_magnitude(weight, fraction, "element", group_size)
        return cls(weight, bias, mask, group_size, clip, use_zero_point)

    @property
    def out_features(self) -> int:
        return self.latent_w.shape[0]

    @property
    def in_features(self) -> int:
        return self.latent_w.shape[1]


def layer_params(layer: PBLinearLayer) -> tuple[np.ndarray, np.ndarray]:
    """Per-(row, group) (mu, alpha) from the current unsalient latents."""
    w = layer.latent_w
    unsal = ~layer._salient
    bounds = group_bounds(layer.in_features, layer.group_size)
    rows = layer.out_features
    mu = np.zeros((rows, len(bounds)))
    alpha = np.zeros((rows, len(bounds)))
    for g, (start, stop) in enumerate(bounds):
        wg = w[:, start:stop]
        ug = unsal[:, start:stop]
        cnt = ug.sum(axis=1)
        has = cnt > 0
        if layer.use_zero_point:
            sums = np.where(ug, wg, 0.0).sum(axis=1)
            mu[:, g] = np.divide(sums, cnt, out=np.zeros(rows), where=has)
        dev = np.where(ug, np.abs(wg - mu[:, g][:, None]), 0.0).sum(axis=1)
        alpha[:, g] = np.divide(dev, cnt, out=np.zeros(rows), where=has)
    return mu, alpha


def _broadcast_params(
    layer: PBLinearLayer, params: tuple[np.ndarray, np.ndarray] | None
) -> tuple[np.ndarray, np.ndarray]:
    mu, alpha = layer_params(layer) if params is None else params
    bounds = group_bounds(layer.in_features, layer.group_size)
    mu_b = np.empty_like(layer.latent_w)
    alpha_b = np.empty_like(layer.latent_w)
    for g, (start, stop) in enumerate(bounds):
        mu_b[:, start:stop] = mu[:, g][:, None]
        alpha_b[:, start:stop] = alpha[:, g][:, None]
    return mu_b, alpha_b


def effective_weight(
    layer: PBLinearLayer,
    params: tuple[np.ndarray, np.ndarray] | None = None,
    surrogate: bool = False,
) -> np.ndarray:
    """Weights the layer actually applies: binarized unsalient, raw salient.

    surrogate=True swaps sign for a saturating identity clipped at
    layer.clip; useful only for gradient checking.
    """
    mu_b, alpha_b = _broadcast_params(layer, params)
    u = layer.latent_w - mu_b
    if surrogate:
        carrier = np.clip(u, -layer.clip, layer.clip)
    else:
        carrier = np.where(u >= 0.0, 1.0, -1.0)
    binary = mu_b + alpha_b * carrier
    return np.where(layer._salient, layer.latent_w, binary)


@dataclass
class QATGrads:
    latent_w: np.ndarray
    bias: np.ndarray
    x: np.ndarray


def _as_batch(a, rows: int, name: str) -> tuple[np.ndarray, bool]:
    arr = np.ascontiguousarray(a, dtype=np.float64)
    if arr.size and not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite values")
    if arr.ndim == 1:
        arr = arr[:, None]
        squeezed = True
    elif arr.ndim == 2:
        squeezed = False
    else:
        raise ValueError(f"{name} must be 1-D or 2-D, got ndim={arr.ndim}")
    if arr.shape[0] != rows:
        raise ValueError(f"{name} has {arr.shape[0]} rows, expected {rows}")
    return arr, squeezed


def pb_forward(
    layer: PBLinearLayer,
    x,
    params: tuple[np.ndarray, np.ndarray] | None = None,
    surrogate: bool = False,
) -> np.ndarray:
    """y = What @ x + b for a single vector or a (in_features, n) batch."""
    xb, squeezed = _as_batch(x, layer.in_features, "x")
    y = effective_weight(layer, params, surrogate) @ xb + layer.bias[:, None]
    return y[:, 0] if squeezed else y


def pb_backward(
    layer: PBLinearLayer,
    x,
    upstream,
    params: tuple[np.ndarray, np.ndarray] | None = None,
    surrogate: bool = False,
) -> QATGrads:
    """Gradients for a step, with mu and alpha held constant.

    grad latent = alpha * STE(dense grad) at unsalient positions, exactly 0 at
    salient ones; grad x flows through the effective weights.
    """
    xb, x_squeezed = _as_batch(x, layer.in_features, "x")
    ub, u_squeezed = _as_batch(upstream, layer.out_features, "upstream")
    if xb.shape[1] != ub.shape[1]:
        raise ValueError(
            f"x has {xb.shape[1]} columns, upstream has {ub.shape[1]}"
        )
    if params is None:
        params = layer_params(layer)
    mu_b, alpha_b = _broadcast_params(layer, params)
    weff = effective_weight(layer, params, surrogate)

    dense = ub @ xb.T
    gate_arg = layer.latent_w - mu_b
    grad_latent = alpha_b * ste_backward(gate_arg, dense, layer.clip)
    grad_latent[layer._salient] = 0.0

    grad_bias = ub.sum(axis=1)
    grad_x = weff.T @ ub
    return QATGrads(
        latent_w=grad_latent,
        bias=grad_bias,
        x=grad_x[:, 0] if x_squeezed else grad_x,
    )


class AdamState:
    """Adaptive-moment update, decoupled weight decay style with decay 0."""

    def __init__(self, shapes, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = float(lr)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]

    def updates(self, grads) -> list[np.ndarray]:
        self.t += 1
        out = []
        for i, g in enumerate(grads):
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * (g * g)
            mhat = self.m[i] / (1 - self.beta1**self.t)
            vhat = self.v[i] / (1 - self.beta2**self.t)
            out.append(self.lr * mhat / (np.sqrt(vhat) + self.eps))
        return out


@dataclass(frozen=True)
class TrainRecord:
    step: int
    loss: float
    alpha_snapshot: np.ndarray = field(repr=False)


DEMO_DIMS = (16, 32, 16)
DEMO_SAMPLES = 256


def demo_problem(seed: int):
    """Deterministic teacher-student regression with a heavy-tailed teacher.

    A few teacher weights are boosted well above the bulk so the network has
    genuinely salient entries, and the inputs are strongly correlated across
    features: that is what gives training room under binarization, because
    sign flips can cancel error inside the dominant data subspace. The
    student starts from the teacher's own weights, mimicking quantization of
    a trained model.
    """
    rng = np.random.default_rng(seed)
    d_in, d_hidden, d_out = DEMO_DIMS
    w1 = rng.normal(0.0, 0.8, size=(d_hidden, d_in))
    w2 = rng.normal(0.0, 0.8, size=(d_out, d_hidden))
    for w in (w1, w2):
        spikes = rng.random(w.shape) < 0.05
        w[spikes] *= 6.0
    b1 = rng.normal(0.0, 0.1, size=d_hidden)
    b2 = rng.normal(0.0, 0.1, size=d_out)
    cov = 0.95 ** np.abs(np.subtract.outer(np.arange(d_in), np.arange(d_in)))
    x = 0.25 * (np.linalg.cholesky(cov) @ rng.normal(size=(d_in, DEMO_SAMPLES)))
    y = w2 @ np.tanh(w1 @ x + b1[:, None]) + b2[:, None]
    y += 0.01 * rng.normal(size=y.shape)
    return (w1, b1, w2, b2), x, y


def train_demo(
    fraction: float,
    steps: int = 2000,
    seed: int = 0,
    lr: float = 1e-3,
    use_zero_point: bool = True,
) -> list[TrainRecord]:
    """Train the 16->32->16 demo network with both layers partially binarized.

    Full-batch MSE against the teacher targets; adaptive-moment updates with
    zero weight decay, the rate cosine-annealed from lr to zero across the
    run (full-batch training limit-cycles otherwise). Returns one record per
    step with the loss measured before that step's update.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    (w1, b1, w2, b2), x, y = demo_problem(seed)
    l1 = PBLinearLayer.init(w1, b1, fraction, use_zero_point=use_zero_point)
    l2 = PBLinearLayer.init(w2, b2, fraction, use_zero_point=use_zero_point)
    unsal1 = ~l1._salient
    unsal2 = ~l2._salient
    opt = AdamState(
        [l1.latent_w.shape, l1.bias.shape, l2.latent_w.shape, l2.bias.shape], lr
    )
    records: list[TrainRecord] = []
    n = y.size
    for step in range(1, steps + 1):
        opt.lr = lr * 0.5 * (1.0 + np.cos(np.pi * (step - 1) / steps))
        p1 = layer_params(l1)
        p2 = layer_params(l2)
        z = pb_forward(l1, x, params=p1)
        h = np.tanh(z)
        out = pb_forward(l2, h, params=p2)
        resid = out - y
        loss = float(np.mean(resid * resid))
        records.append(
            TrainRecord(
                step=step,
                loss=loss,
                alpha_snapshot=np.concatenate([p1[1].ravel(), p2[1].ravel()]),
            )
        )
        up2 = 2.0 * resid / n
        g2 = pb_backward(l2, h, up2, params=p2)
        up1 = g2.x * (1.0 - h * h)
        g1 = pb_backward(l1, x, up1, params=p1)
        d_w1, d_b1, d_w2, d_b2 = opt.updates(
            [g1.latent_w, g1.bias, g2.latent_w, g2.bias]
        )
        # masked writes keep salient latents bitwise untouched
        l1.latent_w[unsal1] -= d_w1[unsal1]
        l2.latent_w[unsal2] -= d_w2[unsal2]
        l1.bias -= d_b1
        l2.bias -= d_b2
    return records


def zero_shot_capacity_probe(
    layers,
    fractions=(0.05, 0.1, 0.3, 0.5),
) -> list[QuantReport]:
    """Direct (no training) quantization error across a fraction sweep.

    layers: iterable of (name, W, X). Each layer is quantized with the plain
    rtn path at every fraction and evaluated against its activations.
    """
    reports: list[QuantReport] = []
    for name, w, x in layers:
        for f in fractions:
            config = QuantConfig(salient_fraction=float(f))
            pb = rtn_quantize(w, config)
            rep = evaluate(w, pb, x, name=name)
            reports.append(
                QuantReport(
                    name=rep.name,
                    frobenius_error=rep.frobenius_error,
                    relative_error=rep.relative_error,
                    bits_per_weight=rep.bits_per_weight,
                    salient_count=rep.salient_count,
                    seconds=rep.seconds,
                    fraction=float(f),
                )
            )
    return reports
