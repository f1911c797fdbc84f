"""Training objectives: measurement consistency, SURE, scale-equivariance and baselines.

Every loss takes a reconstructor ``f`` (any callable mapping a measurement tensor
to an image tensor) and works on a single image ``(H, W, C)`` or a batch
``(N, H, W, C)``. Batch losses are means over batch elements.

None of the self-supervised losses accept a reference image.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import ndgrad as nd
from .operators import ForwardModel, add_gaussian_noise, apply_forward, forward_linear
from .transforms import draw_scale

Reconstructor = Callable[[nd.Tensor], nd.Tensor]


@dataclass
class LossValue:
    total: nd.Tensor
    parts: dict[str, nd.Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> float:
        return float(self.parts[name].data)

    def floats(self) -> dict[str, float]:
        out = {name: float(v.data) for name, v in self.parts.items()}
        out["total"] = float(self.total.data)
        return out


def _batched(y) -> nd.Tensor:
    y = nd.as_tensor(y)
    if y.ndim == 3:
        return nd.reshape(y, (1,) + y.shape)
    if y.ndim != 4:
        raise ValueError(f"expected an image (H, W, C) or a batch (N, H, W, C), got shape {y.shape}")
    return y


def default_delta(sigma: float, y) -> float:
    """Finite-difference step for the divergence probe."""
    return max(sigma / 10.0, 1e-4 * float(np.max(np.abs(nd.as_tensor(y).data))))


def rademacher(rng: np.random.Generator, shape, dtype=np.float64) -> np.ndarray:
    return (2 * rng.integers(0, 2, size=shape) - 1).astype(dtype)


def mc_divergence(g: Reconstructor, y, rng: np.random.Generator, delta: float, base: nd.Tensor | None = None) -> nd.Tensor:
    """One-probe Monte-Carlo divergence ``b^T (g(y + delta*b) - g(y)) / delta``.

    ``base`` may carry an already computed ``g(y)``.
    """
    if delta <= 0:
        raise ValueError("delta must be > 0")
    y = nd.as_tensor(y)
    b = rademacher(rng, y.shape, y.dtype)
    if base is None:
        base = g(y)
    perturbed = g(nd.add(y, delta * b))
    return nd.inner(b, nd.sub(perturbed, base)) / delta


def loss_mc(f: Reconstructor, model: ForwardModel, y) -> LossValue:
    y = _batched(y)
    fidelity = nd.mse(forward_linear(model, f(y)), y)
    return LossValue(fidelity, {"mc": fidelity, "data_fidelity": fidelity})


def _sure(f, model, y, rng, delta):
    x1 = f(y)
    Ay = forward_linear(model, x1)
    fidelity = nd.mse(Ay, y)
    sigma2 = model.sigma**2
    if sigma2 == 0:
        div = nd.Tensor(np.zeros((), dtype=y.dtype))
        return LossValue(fidelity, {"sure": fidelity, "data_fidelity": fidelity, "divergence_estimate": div}), x1
    if delta is None:
        delta = default_delta(model.sigma, y)
    div = mc_divergence(lambda t: forward_linear(model, f(t)), y, rng, delta, base=Ay)
    total = nd.add(nd.sub(fidelity, sigma2), div * (2.0 * sigma2 / y.size))
    parts = {"sure": total, "data_fidelity": fidelity, "divergence_estimate": div / y.shape[0]}
    return LossValue(total, parts), x1


def loss_sure(f: Reconstructor, model: ForwardModel, y, rng: np.random.Generator, delta: float | None = None) -> LossValue:
    """``(1/m)||A f(y) - y||^2 - sigma^2 + (2 sigma^2 / m) div[A f](y)``, averaged over the batch.

    With ``sigma == 0`` no probe is drawn and the value equals :func:`loss_mc`.
    """
    return _sure(f, model, _batched(y), rng, delta)[0]


def _crop_to_multiple(x: nd.Tensor, r: int) -> nd.Tensor:
    H, W = x.shape[-3], x.shape[-2]
    h, w = H - H % r, W - W % r
    if (h, w) == (H, W):
        return x
    return x[..., :h, :w, :]


def _equivariance_loss(f, model, x1, targets_fn, rng, stop_gradient) -> nd.Tensor:
    """Mean over batch of ``||f(A x2 + noise) - x2||^2 / n`` for groups of same-size ``x2``."""
    N = x1.shape[0]
    total = None
    for idx, x2 in targets_fn(x1):
        if stop_gradient:
            x2 = nd.detach(x2)
        x2 = _crop_to_multiple(x2, model.r)
        y2 = add_gaussian_noise(forward_linear(model, x2), model.sigma, rng)
        term = nd.mse(f(y2), x2) * (len(idx) / N)
        total = term if total is None else nd.add(total, term)
    return total


def loss_seq(
    f: Reconstructor,
    model: ForwardModel,
    y,
    rng: np.random.Generator,
    stop_gradient: bool = True,
    x1: nd.Tensor | None = None,
) -> LossValue:
    """Scale-equivariance loss: ``x2 = Sigma_s f(y)`` (detached), ``x3 = f(A x2 + noise)``."""
    y = _batched(y)
    if x1 is None:
        x1 = f(y)
    H, W = x1.shape[-3], x1.shape[-2]
    params = [draw_scale(rng) for _ in range(x1.shape[0])]

    def targets(x):
        # batch elements sharing a scale share an output size and run as one group
        for s in sorted({p.s for p in params}):
            idx = [i for i, p in enumerate(params) if p.s == s]
            mats = [p.matrices(H, W) for p in (params[i] for i in idx)]
            rows = np.stack([m[0] for m in mats])
            cols = np.stack([m[1] for m in mats])
            yield idx, nd.separable_linear(nd.index_select(x, idx), rows, cols)

    seq = _equivariance_loss(f, model, x1, targets, rng, stop_gradient)
    return LossValue(seq, {"seq": seq})


def loss_sei(
    f: Reconstructor,
    model: ForwardModel,
    y,
    rng: np.random.Generator,
    alpha: float = 1.0,
    stop_gradient: bool = True,
) -> LossValue:
    """``L_SURE + alpha * L_SEQ``."""
    if not alpha > 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    y = _batched(y)
    sure, x1 = _sure(f, model, y, rng, None)
    seq = loss_seq(f, model, y, rng, stop_gradient=stop_gradient, x1=x1)
    total = nd.add(sure.total, seq.total * alpha)
    parts = dict(sure.parts)
    parts["seq"] = seq.total
    return LossValue(total, parts)


def loss_css(f: Reconstructor, model: ForwardModel, y, rng: np.random.Generator) -> LossValue:
    """Re-degrade the measurement and regress back to it: ``(1/m)||y - f(A y + noise)||^2``."""
    y = _batched(y)
    y_tilde = apply_forward(model, y, rng)
    loss = nd.mse(f(y_tilde), y)
    return LossValue(loss, {"css": loss})


def loss_ei_shift(
    f: Reconstructor,
    model: ForwardModel,
    y,
    rng: np.random.Generator,
    stop_gradient: bool = True,
    shifts: list[tuple[int, int]] | None = None,
) -> LossValue:
    """Equivariance loss with random cyclic shifts in place of rescaling."""
    y = _batched(y)
    x1 = f(y)
    N, H, W = x1.shape[0], x1.shape[-3], x1.shape[-2]
    if shifts is None:
        shifts = [(int(rng.integers(H)), int(rng.integers(W))) for _ in range(N)]

    def targets(x):
        yield list(range(N)), nd.stack([nd.roll(x[i], shifts[i]) for i in range(N)])

    ei = _equivariance_loss(f, model, x1, targets, rng, stop_gradient)
    return LossValue(ei, {"ei": ei})


def loss_supervised(f: Reconstructor, y, x_gt) -> LossValue:
    y = _batched(y)
    x_gt = _batched(x_gt)
    out = f(y)
    if out.shape != x_gt.shape:
        raise ValueError(f"reconstruction shape {out.shape} does not match reference shape {x_gt.shape}")
    loss = nd.mse(out, x_gt)
    return LossValue(loss, {"supervised": loss})


__all__ = [
    "LossValue",
    "default_delta",
    "loss_css",
    "loss_ei_shift",
    "loss_mc",
    "loss_seq",
    "loss_sei",
    "loss_supervised",
    "loss_sure",
    "mc_divergence",
]
