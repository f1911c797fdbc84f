"""Group actions on periodic images: bicubic rescaling and cyclic shifts."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ndgrad as nd

KEYS_A = -0.5
SCALES = (0.5, 0.75)


def keys_kernel(t, a: float = KEYS_A) -> np.ndarray:
    """Keys cubic convolution kernel (support [-2, 2])."""
    t = np.abs(np.asarray(t, dtype=np.float64))
    t2, t3 = t * t, t * t * t
    inner = (a + 2) * t3 - (a + 3) * t2 + 1
    outer = a * t3 - 5 * a * t2 + 8 * a * t - 4 * a
    return np.where(t <= 1, inner, np.where(t < 2, outer, 0.0))


def resample_matrix(n_in: int, n_out: int, step: float, offset: float = 0.0, width: float = 1.0) -> np.ndarray:
    """Periodic bicubic sampling matrix of shape ``(n_out, n_in)``.

    Row ``i`` samples the periodic signal at ``offset + step * i``. With
    ``width > 1`` the kernel is stretched by ``width`` (and divided by it), which
    turns interpolation into anti-aliased decimation.
    """
    mat = np.zeros((n_out, n_in))
    reach = int(math.ceil(2 * width))
    for i in range(n_out):
        p = offset + step * i
        base = math.floor(p)
        taps = np.arange(base - reach + 1, base + reach + 1)
        w = keys_kernel((p - taps) / width) / width
        np.add.at(mat[i], taps % n_in, w)
    return mat


def scaled_extent(n: int, s: float) -> int:
    # tolerance absorbs binary representation error in s * n
    return int(math.floor(s * n + 1e-9))


@dataclass(frozen=True)
class ScaleParams:
    s: float
    offset: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not (0 < self.s <= 1):
            raise ValueError(f"scale factor must lie in (0, 1], got {self.s}")

    def extents(self, H: int, W: int) -> tuple[int, int]:
        return scaled_extent(H, self.s), scaled_extent(W, self.s)

    def matrices(self, H: int, W: int) -> tuple[np.ndarray, np.ndarray]:
        h, w = self.extents(H, W)
        step = 1.0 / self.s
        return (
            resample_matrix(H, h, step, self.offset[0]),
            resample_matrix(W, w, step, self.offset[1]),
        )


@dataclass(frozen=True)
class ShiftParams:
    v: tuple[int, int] = (0, 0)


def scale_transform(x, params: ScaleParams) -> nd.Tensor:
    """Downscale a periodic image by resampling it on a grid with spacing ``1/s`` pixels.

    No anti-aliasing filter is applied; content above the new Nyquist aliases.
    """
    x = nd.as_tensor(x)
    rows, cols = params.matrices(x.shape[-3], x.shape[-2])
    return nd.separable_linear(x, rows, cols)


def draw_scale(rng: np.random.Generator, scales=SCALES) -> ScaleParams:
    s = float(scales[rng.integers(len(scales))])
    du, dv = rng.uniform(0.0, 1.0 / s, size=2)
    return ScaleParams(s, (float(du), float(dv)))


def random_scale(x, rng: np.random.Generator) -> tuple[nd.Tensor, ScaleParams]:
    params = draw_scale(rng)
    return scale_transform(x, params), params


def cyclic_shift(x, params: ShiftParams | tuple[int, int]) -> nd.Tensor:
    v = params.v if isinstance(params, ShiftParams) else params
    return nd.roll(x, v)


def bicubic_upsample(x, r: int) -> nd.Tensor:
    """Periodic bicubic upsampling; output pixel ``r*i`` coincides with input pixel ``i``."""
    x = nd.as_tensor(x)
    if r == 1:
        return x
    H, W = x.shape[-3], x.shape[-2]
    return nd.separable_linear(x, resample_matrix(H, r * H, 1.0 / r), resample_matrix(W, r * W, 1.0 / r))


def bicubic_downsample(x, r: int, phase: tuple[int, int] = (0, 0)) -> nd.Tensor:
    """Anti-aliased periodic bicubic decimation by an integer factor (kernel stretched by ``r``)."""
    x = nd.as_tensor(x)
    H, W = x.shape[-3], x.shape[-2]
    if H % r or W % r:
        raise ValueError(f"image extents {(H, W)} not divisible by r={r}")
    rows = resample_matrix(H, H // r, r, phase[0], width=r)
    cols = resample_matrix(W, W // r, r, phase[1], width=r)
    return nd.separable_linear(x, rows, cols)


def radial_frequency(H: int, W: int) -> np.ndarray:
    """DFT-bin radius in cycles per image."""
    fy = np.fft.fftfreq(H) * H
    fx = np.fft.fftfreq(W) * W
    return np.hypot(fy[:, None], fx[None, :])


def measured_bandwidth(x, energy_fraction: float = 0.99) -> float:
    """Smallest radius R (cycles per image) holding ``energy_fraction`` of the DFT energy."""
    if not (0 < energy_fraction < 1):
        raise ValueError("energy_fraction must lie in (0, 1)")
    a = np.asarray(nd.as_tensor(x).data, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    H, W = a.shape[-3], a.shape[-2]
    spec = np.abs(np.fft.fft2(a, axes=(-3, -2))) ** 2
    energy = spec.sum(axis=-1).reshape(-1, H * W).sum(axis=0)
    radius = radial_frequency(H, W).ravel()
    total = energy.sum()
    if total == 0:
        return 0.0
    order = np.argsort(radius, kind="stable")
    radii, cum = radius[order], np.cumsum(energy[order])
    # only radii that close a full shell are candidates
    last_of_shell = np.r_[radii[1:] != radii[:-1], True]
    ok = (cum >= energy_fraction * total * (1 - 1e-12)) & last_of_shell
    return float(radii[np.argmax(ok)])
