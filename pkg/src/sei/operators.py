"""Degradation models: point-spread functions and the forward operator.

The forward operator maps a latent image ``x`` to ``subsample(h * x, r) + noise``
with periodic convolution throughout, so its linear part has an exact adjoint.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import ndgrad as nd
from .transforms import keys_kernel

PSF_KINDS = ("gaussian", "box", "delta", "bicubic")
MODES = ("blur", "bicubic")


@dataclass(frozen=True, eq=False)
class Psf:
    kernel: np.ndarray
    kind: str
    param: float = 0.0

    def __post_init__(self):
        if self.kind not in PSF_KINDS:
            raise ValueError(f"unknown PSF kind {self.kind!r}")
        k = np.asarray(self.kernel, dtype=np.float64)
        if k.ndim != 2 or k.shape[0] % 2 == 0 or k.shape[1] % 2 == 0:
            raise ValueError(f"PSF kernel must be 2-D with odd extents, got {k.shape}")
        object.__setattr__(self, "kernel", k)

    def __eq__(self, other):
        return (
            isinstance(other, Psf)
            and self.kind == other.kind
            and self.param == other.param
            and np.array_equal(self.kernel, other.kernel)
        )

    @property
    def spec(self) -> str:
        """Short textual form, e.g. ``gaussian:2``."""
        if self.kind == "delta":
            return "delta"
        p = int(self.param) if float(self.param).is_integer() else self.param
        return f"{self.kind}:{p}"

    def flipped(self) -> np.ndarray:
        return self.kernel[::-1, ::-1]


def gaussian_psf(sigma: float, support: int | None = None) -> Psf:
    if sigma <= 0:
        raise ValueError("gaussian PSF needs sigma > 0")
    if support is None:
        support = 2 * math.ceil(3 * sigma) + 1
    if support % 2 == 0 or support < 1:
        raise ValueError(f"PSF support must be a positive odd integer, got {support}")
    c = np.arange(support) - support // 2
    g = np.exp(-(c[:, None] ** 2 + c[None, :] ** 2) / (2.0 * sigma**2))
    return Psf(g / g.sum(), "gaussian", float(sigma))


def box_psf(radius: int) -> Psf:
    if radius < 1 or int(radius) != radius:
        raise ValueError(f"box radius must be an integer >= 1, got {radius}")
    n = 2 * int(radius) + 1
    return Psf(np.full((n, n), 1.0 / (n * n)), "box", float(radius))


def delta_psf() -> Psf:
    return Psf(np.ones((1, 1)), "delta", 0.0)


def bicubic_psf(r: int) -> Psf:
    """Keys (a=-0.5) kernel stretched by ``r``; blur-then-subsample gives bicubic decimation."""
    if r < 1 or int(r) != r:
        raise ValueError(f"bicubic factor must be an integer >= 1, got {r}")
    t = np.arange(-(2 * r - 1), 2 * r)
    k1 = keys_kernel(t / r) / r
    k1 = k1 / k1.sum()
    return Psf(np.outer(k1, k1), "bicubic", float(r))


def parse_kernel(spec: str) -> tuple[Psf, int]:
    """Parse ``gaussian:<sigma>``, ``box:<radius>``, ``bicubic:<r>`` or ``delta``.

    Returns the PSF and the subsampling factor it implies (``r`` for bicubic, else 1).
    """
    kind, _, arg = spec.partition(":")
    try:
        if kind == "delta" and not arg:
            return delta_psf(), 1
        if kind == "gaussian":
            return gaussian_psf(float(arg)), 1
        if kind == "box":
            return box_psf(int(arg)), 1
        if kind == "bicubic":
            r = int(arg)
            return bicubic_psf(r), r
    except ValueError as exc:
        raise ValueError(f"bad kernel spec {spec!r}: {exc}") from None
    raise ValueError(f"bad kernel spec {spec!r}; expected gaussian:<sigma>, box:<radius>, bicubic:<r> or delta")


def save_psf_text(psf: Psf, path) -> None:
    """Write the kernel as a plain-text grid, one row per line."""
    rows = [" ".join(repr(float(v)) for v in row) for row in psf.kernel]
    Path(path).write_text("\n".join(rows) + "\n")


def load_psf_text(path, kind: str = "gaussian", param: float = 0.0) -> Psf:
    k = np.array([[float(v) for v in line.split()] for line in Path(path).read_text().splitlines() if line.strip()])
    return Psf(k, kind, param)


@dataclass(frozen=True)
class ForwardModel:
    psf: Psf
    r: int = 1
    sigma: float = 0.0
    phase: tuple[int, int] = (0, 0)
    mode: str = "blur"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.r < 1 or int(self.r) != self.r:
            raise ValueError(f"subsampling factor must be an integer >= 1, got {self.r}")
        if self.mode == "bicubic" and self.r not in (2, 3, 4):
            raise ValueError(f"super-resolution mode needs r in {{2, 3, 4}}, got {self.r}")
        if self.sigma < 0:
            raise ValueError("noise level must be >= 0")
        if not all(0 <= p < self.r for p in self.phase):
            raise ValueError(f"phase {self.phase} outside [0, {self.r})")
        object.__setattr__(self, "phase", tuple(int(p) for p in self.phase))

    @classmethod
    def from_spec(cls, kernel: str, sigma: float = 0.0, phase=(0, 0)) -> "ForwardModel":
        psf, r = parse_kernel(kernel)
        return cls(psf, r, float(sigma), tuple(phase), "bicubic" if psf.kind == "bicubic" else "blur")

    def to_dict(self) -> dict:
        return {"kernel": self.psf.spec, "r": self.r, "sigma": self.sigma, "phase": list(self.phase), "mode": self.mode}

    @classmethod
    def from_dict(cls, d: dict) -> "ForwardModel":
        psf, implied_r = parse_kernel(d["kernel"])
        mode = d.get("mode", "bicubic" if psf.kind == "bicubic" else "blur")
        return cls(psf, int(d.get("r", implied_r)), float(d.get("sigma", 0.0)), tuple(d.get("phase", (0, 0))), mode)

    def out_extents(self, H: int, W: int) -> tuple[int, int]:
        return H // self.r, W // self.r


def forward_linear(model: ForwardModel, x) -> nd.Tensor:
    """Noiseless ``A x = subsample(h * x, r)``."""
    x = nd.as_tensor(x)
    H, W = x.shape[-3], x.shape[-2]
    if H % model.r or W % model.r:
        raise ValueError(f"image extents {(H, W)} not divisible by r={model.r}")
    blurred = x if model.psf.kind == "delta" else nd.conv2d_periodic(x, model.psf.kernel)
    return nd.subsample(blurred, model.r, model.phase)


def add_gaussian_noise(x, sigma: float, rng: np.random.Generator | None) -> nd.Tensor:
    x = nd.as_tensor(x)
    if sigma < 0:
        raise ValueError("noise level must be >= 0")
    if sigma == 0:
        return x
    if rng is None:
        raise ValueError("an rng is required when sigma > 0")
    noise = (rng.standard_normal(x.shape) * sigma).astype(x.dtype)
    return nd.add(x, noise)


def apply_forward(model: ForwardModel, x, rng: np.random.Generator | None = None) -> nd.Tensor:
    if model.sigma > 0 and rng is None:
        raise ValueError("apply_forward needs an rng when sigma > 0")
    return add_gaussian_noise(forward_linear(model, x), model.sigma, rng)


def apply_adjoint(model: ForwardModel, y) -> nd.Tensor:
    """``A^T y``: zero-insertion upsampling followed by convolution with the flipped PSF."""
    y = nd.as_tensor(y)
    up = nd.upsample_zero(y, model.r, model.phase)
    if model.psf.kind == "delta":
        return up
    return nd.conv2d_periodic(up, np.ascontiguousarray(model.psf.flipped()))
