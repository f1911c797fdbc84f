"""Exact frequency-domain checks of the identification theory on closed-form spectra.

Spectra are finite sums of compactly supported bumps ``amp * (1 - |xi - c|^2 / rho^2)^k``
combined through products, dilations, modulations and rotations. Everything is evaluated
pointwise in float64, so the identities below can be checked to near machine precision.

Conventions: frequencies in cycles per unit length, ``Sigma_s z(u) = z(u / s)`` and hence
``FT[Sigma_s z](xi) = s^dim * z_hat(s xi)``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

THRESHOLD = 1e-10


class HypothesisError(ValueError):
    """Raised when an input violates a hypothesis of the identification results."""


# ---------------------------------------------------------------- spectra


def _as_xi(xi, dim: int) -> np.ndarray:
    xi = np.asarray(xi, dtype=np.float64)
    if dim == 1 and (xi.ndim == 0 or xi.shape[-1] != 1):
        xi = xi[..., None]
    if xi.shape[-1] != dim:
        raise ValueError(f"frequencies have trailing extent {xi.shape[-1]}, expected dim={dim}")
    return xi


class SpectrumFn:
    """A Fourier transform known in closed form, with a declared support radius."""

    dim: int

    @property
    def support(self) -> float:
        raise NotImplementedError

    def _eval(self, xi: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, xi) -> np.ndarray:
        xi = _as_xi(xi, self.dim)
        out = self._eval(xi)
        # exact zero outside the declared support, whatever the expression
        out[np.linalg.norm(xi, axis=-1) >= self.support] = 0
        return out


@dataclass(frozen=True)
class Bump:
    """``amplitude * (1 - t^2)^order`` on the open disk ``t = |xi - center| / radius < 1``.

    ``order=0`` is the flat disk indicator (an ideal low-pass).
    """

    center: tuple[float, ...]
    radius: float
    amplitude: complex = 1.0
    order: int = 2

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if not self.radius > 0:
            raise ValueError("bump radius must be > 0")
        if self.order < 0:
            raise ValueError("bump order must be >= 0")

    @property
    def reach(self) -> float:
        return math.hypot(*self.center) + self.radius

    def disjoint(self, other: "Bump") -> bool:
        d = math.dist(self.center, other.center)
        return d >= self.radius + other.radius


@dataclass(frozen=True, eq=False)
class BumpSum(SpectrumFn):
    bumps: tuple[Bump, ...] = ()
    dim: int = 2

    def __post_init__(self):
        object.__setattr__(self, "bumps", tuple(self.bumps))
        for b in self.bumps:
            if len(b.center) != self.dim:
                raise ValueError(f"bump center {b.center} does not have dim={self.dim}")

    @property
    def support(self) -> float:
        return max((b.reach for b in self.bumps), default=0.0)

    def _eval(self, xi):
        out = np.zeros(xi.shape[:-1], dtype=np.complex128)
        for b in self.bumps:
            t2 = np.sum((xi - np.asarray(b.center)) ** 2, axis=-1) / (b.radius * b.radius)
            inside = t2 < 1
            out[inside] += complex(b.amplitude) * (1 - t2[inside]) ** b.order
        return out


@dataclass(frozen=True, eq=False)
class Product(SpectrumFn):
    a: SpectrumFn
    b: SpectrumFn

    @property
    def dim(self) -> int:
        return self.a.dim

    @property
    def support(self) -> float:
        return min(self.a.support, self.b.support)

    def _eval(self, xi):
        return self.a(xi) * self.b(xi)


@dataclass(frozen=True, eq=False)
class Scaled(SpectrumFn):
    """``s^dim * z(s xi)``: the spectrum of ``Sigma_s z``."""

    z: SpectrumFn
    s: float

    @property
    def dim(self) -> int:
        return self.z.dim

    @property
    def support(self) -> float:
        return self.z.support / self.s

    def _eval(self, xi):
        return self.s**self.dim * self.z(xi * self.s)


@dataclass(frozen=True, eq=False)
class Modulated(SpectrumFn):
    """Spectrum of the translate ``z(u - shift)``: multiplies by ``exp(-2i pi xi . shift)``."""

    z: SpectrumFn
    shift: tuple[float, ...]

    @property
    def dim(self) -> int:
        return self.z.dim

    @property
    def support(self) -> float:
        return self.z.support

    def phase(self, xi) -> np.ndarray:
        xi = _as_xi(xi, self.dim)
        return np.exp(-2j * np.pi * (xi @ np.asarray(self.shift, dtype=np.float64)))

    def _eval(self, xi):
        return self.z(xi) * self.phase(xi)


@dataclass(frozen=True, eq=False)
class Rotated(SpectrumFn):
    """Spectrum of ``z(P u)`` for an orthogonal ``P``, which is ``z_hat(P xi)``."""

    z: SpectrumFn
    matrix: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        P = np.asarray(self.matrix, dtype=np.float64)
        if P.shape != (self.z.dim, self.z.dim) or not np.allclose(P @ P.T, np.eye(self.z.dim), atol=1e-12):
            raise ValueError("rotation matrix must be orthogonal with the spectrum's dim")
        object.__setattr__(self, "matrix", tuple(map(tuple, P.tolist())))

    @property
    def dim(self) -> int:
        return self.z.dim

    @property
    def support(self) -> float:
        return self.z.support

    def _eval(self, xi):
        return self.z(xi @ np.asarray(self.matrix).T)


def rotation(theta: float, dim: int = 2) -> tuple:
    """Rotation by ``theta`` in 2-D; in 1-D the orthogonal group is {+1, -1}, pick by sign of cos."""
    if dim == 1:
        return ((1.0 if math.cos(theta) >= 0 else -1.0,),)
    c, s = math.cos(theta), math.sin(theta)
    return ((c, -s), (s, c))


@dataclass(frozen=True)
class FilterSpec:
    spectrum: SpectrumFn
    bandwidth: float = field(init=False)
    dc_nonzero: bool = field(init=False)

    def __post_init__(self):
        dc = self.spectrum(np.zeros(self.spectrum.dim))
        object.__setattr__(self, "bandwidth", float(self.spectrum.support))
        object.__setattr__(self, "dc_nonzero", bool(abs(dc) > 0))

    @property
    def dc(self) -> float:
        return float(abs(self.spectrum(np.zeros(self.spectrum.dim))))


def spectrum_multiply(a: SpectrumFn, b: SpectrumFn) -> SpectrumFn:
    """Pointwise product (the spectrum of a convolution)."""
    if a.dim != b.dim:
        raise ValueError("spectra of different dimension")
    if isinstance(a, BumpSum) and isinstance(b, BumpSum):
        if all(p.disjoint(q) for p in a.bumps for q in b.bumps):
            return BumpSum((), a.dim)
    return Product(a, b)


def scale_spectrum(z: SpectrumFn, s: float) -> SpectrumFn:
    if not s > 0:
        raise ValueError("scale must be > 0")
    if s == 1:
        return z
    return Scaled(z, float(s))


# ---------------------------------------------------------------- sampling


def sample_ball(rng: np.random.Generator, n: int, radius: float, dim: int = 2) -> np.ndarray:
    """``n`` points uniform in the ball of the given radius."""
    d = rng.standard_normal((n, dim))
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    return d * (radius * rng.uniform(0, 1, (n, 1)) ** (1 / dim))


def sample_annulus(rng: np.random.Generator, n: int, inner: float, outer: float, dim: int = 2) -> np.ndarray:
    d = rng.standard_normal((n, dim))
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    return d * rng.uniform(inner, outer, (n, 1))


def _radial_grid(radius: float, dim: int, n_radii: int = 257, n_angles: int = 64) -> np.ndarray:
    rad = np.linspace(0.0, radius, n_radii)
    if dim == 1:
        return np.concatenate([rad, -rad])[:, None]
    ang = np.linspace(0, 2 * np.pi, n_angles, endpoint=False)
    dirs = np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    return (rad[:, None, None] * dirs[None]).reshape(-1, 2)


def _clears_zero(values: np.ndarray, floor: float, dim: int, n_radii: int = 257) -> bool:
    """True if ``|values| >= floor`` on a :func:`_radial_grid` and no ray crosses a zero between samples.

    A phase jump above pi/2 between neighbouring radii means the spectrum passed
    through (or close to) zero there.
    """
    if np.any(np.abs(values) < floor):
        return False
    rays = values.reshape(2, n_radii).T if dim == 1 else values.reshape(n_radii, -1)
    turn = np.abs(np.angle(rays[1:] * np.conj(rays[:-1])))
    return bool(np.all(turn <= np.pi / 2))


def random_bumps(rng: np.random.Generator, bandwidth: float, n: int = 3, dim: int = 2, orders=(2, 3, 4)) -> BumpSum:
    """Random bump sum whose support stays within ``bandwidth``."""
    bumps = []
    for _ in range(n):
        radius = rng.uniform(0.15, 0.5) * bandwidth
        c = sample_ball(rng, 1, bandwidth - radius, dim)[0]
        amp = complex(rng.standard_normal(), rng.standard_normal())
        bumps.append(Bump(tuple(c), radius, amp, int(rng.choice(orders))))
    return BumpSum(tuple(bumps), dim)


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """``max|a - b| / max|b|``; absolute when ``b`` vanishes."""
    scale = float(np.max(np.abs(b), initial=0.0))
    diff = float(np.max(np.abs(a - b), initial=0.0))
    return diff / scale if scale > 0 else diff


# ---------------------------------------------------------------- scale-invariance recovery


def nonvanishing_radius(h: FilterSpec, tol: float = 1e-6) -> float:
    """Largest radius ``R`` (to resolution ``tol``) with ``|h(xi)| >= tol |h(0)|`` on ``|xi| <= R``."""
    if not h.dc_nonzero:
        raise HypothesisError("the filter spectrum vanishes at zero frequency")
    if not tol > 0:
        raise ValueError("tol must be > 0")
    floor = tol * h.dc

    def ok(R):
        return _clears_zero(h.spectrum(_radial_grid(R, h.spectrum.dim)), floor, h.spectrum.dim)

    lo, hi = 0.0, h.bandwidth
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


def theorem2_choose_s(h: FilterSpec, xi_phi: float, tol: float = 1e-6) -> float:
    """Dilation factor ``xi_phi / R_h`` that keeps the rescaled filter away from its zeros on the band."""
    R = nonvanishing_radius(h, tol)
    if R <= 0:
        raise HypothesisError("filter spectrum drops below tolerance arbitrarily close to zero frequency")
    return xi_phi / R


@dataclass(frozen=True, eq=False)
class Recovered(SpectrumFn):
    """``phi(xi) y(xi/s) / (s^power h(xi/s))`` inside the band of ``phi``, zero outside."""

    y: SpectrumFn
    h: SpectrumFn
    phi: SpectrumFn
    s: float
    power: int
    floor: float

    @property
    def dim(self) -> int:
        return self.phi.dim

    @property
    def support(self) -> float:
        return self.phi.support

    def _eval(self, xi):
        u = xi * (1.0 / self.s)
        band = np.linalg.norm(xi, axis=-1) < self.phi.support
        den = self.h(u)
        if np.any(np.abs(den[band]) < self.floor):
            raise HypothesisError("filter denominator below tolerance inside the band")
        out = np.zeros(xi.shape[:-1], dtype=np.complex128)
        out[band] = self.phi(xi[band]) * self.y(u[band]) / (self.s**self.power * den[band])
        return out


def theorem2_recover(y: SpectrumFn, h: FilterSpec, phi: FilterSpec, s: float, power: int | None = None, tol: float = 1e-6) -> SpectrumFn:
    """Closed-form latent spectrum determined by an observed spectrum ``y``.

    ``power`` is the Jacobian exponent on ``s``; it defaults to the dimension, which is
    what makes the round trip exact (``power=1`` reproduces the one-dimensional form).
    """
    dim = phi.spectrum.dim
    power = dim if power is None else power
    floor = tol * h.dc
    # the band is open, so stop just short of its edge
    if not _clears_zero(h.spectrum(_radial_grid(phi.bandwidth / s * (1 - 1e-9), dim)), floor, dim):
        raise HypothesisError("filter spectrum vanishes inside the rescaled band; s is too small")
    return Recovered(y, h.spectrum, phi.spectrum, float(s), int(power), floor)


@dataclass
class SetCheckReport:
    s: float
    R_h: float
    dim: int
    n_members: int
    n_frequencies: int
    max_mismatch: float
    mismatch_forward: float
    mismatch_backward: float
    mismatch_by_power: dict
    threshold: float = THRESHOLD

    @property
    def passed(self) -> bool:
        return self.max_mismatch < self.threshold

    def to_dict(self) -> dict:
        return {**asdict(self), "passed": self.passed}


def _set_mismatch(members, h, phi, s, power, xi, tol):
    fwd = bwd = 0.0
    for z in members:
        # observed y = h z  ->  recovered must equal phi * Sigma_{1/s} z
        y = spectrum_multiply(h.spectrum, z)
        x_y = theorem2_recover(y, h, phi, s, power, tol)
        fwd = max(fwd, rel_error(x_y(xi), spectrum_multiply(phi.spectrum, scale_spectrum(z, 1.0 / s))(xi)))
        # latent x = phi z  ->  recovered from y_s = h Sigma_s z must equal x
        y_s = spectrum_multiply(h.spectrum, scale_spectrum(z, s))
        x = spectrum_multiply(phi.spectrum, z)
        bwd = max(bwd, rel_error(theorem2_recover(y_s, h, phi, s, power, tol)(xi), x(xi)))
    return fwd, bwd


def theorem2_set_check(
    seed_spectra,
    h: FilterSpec,
    phi: FilterSpec,
    scale_grid=(1.0,),
    n_frequencies: int = 1000,
    seed: int = 0,
    tol: float = 1e-6,
) -> SetCheckReport:
    """Both set inclusions between the recovered set and the latent set.

    Members are matched through the explicit correspondence of the argument (``x_y`` for
    ``y = h z`` pairs with ``phi Sigma_{1/s} z``), not by unordered set matching.
    """
    seeds = list(seed_spectra)
    if not seeds:
        raise ValueError("need at least one seed spectrum")
    dim = phi.spectrum.dim
    members = [scale_spectrum(z, t) for z in seeds for t in scale_grid]
    R = nonvanishing_radius(h, tol)
    s = phi.bandwidth / R
    rng = np.random.default_rng(seed)
    xi = sample_ball(rng, n_frequencies, 1.25 * phi.bandwidth, dim)
    fwd, bwd = _set_mismatch(members, h, phi, s, dim, xi, tol)
    by_power = {}
    for p in sorted({1, dim}):
        by_power[str(p)] = max(_set_mismatch(members, h, phi, s, p, xi, tol)) if p != dim else max(fwd, bwd)
    return SetCheckReport(s, R, dim, len(members), n_frequencies, max(fwd, bwd), fwd, bwd, by_power)


# ---------------------------------------------------------------- roto-translations are not enough


@dataclass
class CounterexampleReport:
    xi_h: float
    xi_phi: float
    witness_support: float
    witness_energy_above_xi_h: float
    witness_in_full_set: bool
    witness_in_bandlimited_set: bool
    max_phase_modulus_error: float
    bandwidth_preserved: bool
    max_filtered_energy_above_xi_h: float
    n_members: int

    @property
    def passed(self) -> bool:
        return (
            self.witness_in_full_set
            and not self.witness_in_bandlimited_set
            and self.witness_support > self.xi_h
            and self.max_phase_modulus_error < 1e-14
            and self.bandwidth_preserved
            and self.max_filtered_energy_above_xi_h == 0.0
        )

    def to_dict(self) -> dict:
        return {**asdict(self), "passed": self.passed}


def theorem1_counterexample(h: FilterSpec, phi: FilterSpec, n_members: int = 10, n_frequencies: int = 1000, seed: int = 0) -> CounterexampleReport:
    """Two roto-translation invariant latent sets with identical measurements but different images.

    The small set holds images of bandwidth at most ``xi_h``, the large one everything;
    the witness ``phi * phi`` reaches past ``xi_h`` so it separates the image sets.
    """
    xi_h, xi_phi = h.bandwidth, phi.bandwidth
    if xi_h >= xi_phi:
        raise HypothesisError(f"need filter bandwidth {xi_h} < reconstruction bandwidth {xi_phi}")
    dim = phi.spectrum.dim
    rng = np.random.default_rng(seed)

    witness = spectrum_multiply(phi.spectrum, phi.spectrum)
    band = sample_annulus(rng, n_frequencies, xi_h, xi_phi, dim)
    energy = float(np.sum(np.abs(witness(band)) ** 2))
    in_x1 = witness.support <= xi_h or energy == 0.0

    phase_err, preserved, filtered = 0.0, True, 0.0
    outside = sample_annulus(rng, n_frequencies, xi_h, 2 * xi_h + xi_phi, dim)
    for _ in range(n_members):
        z = random_bumps(rng, xi_h, dim=dim)
        shift = tuple(rng.uniform(-10, 10, dim))
        moved = Modulated(z, shift)
        turned = Rotated(z, rotation(float(rng.uniform(0, 2 * np.pi)), dim))
        xi = sample_ball(rng, n_frequencies, 2 * xi_h, dim)
        phase_err = max(phase_err, float(np.max(np.abs(np.abs(moved.phase(xi)) - 1))))
        for t in (moved, turned):
            preserved &= t.support == z.support and not np.any(t(outside))
        filtered = max(filtered, float(np.sum(np.abs(spectrum_multiply(h.spectrum, z)(outside)) ** 2)))

    return CounterexampleReport(
        xi_h=xi_h,
        xi_phi=xi_phi,
        witness_support=witness.support,
        witness_energy_above_xi_h=energy,
        witness_in_full_set=True,  # phi * phi is phi convolved with a Schwartz image
        witness_in_bandlimited_set=bool(in_x1),
        max_phase_modulus_error=phase_err,
        bandwidth_preserved=bool(preserved),
        max_filtered_energy_above_xi_h=filtered,
        n_members=n_members,
    )


# ---------------------------------------------------------------- spatial realisation


def _bump_kernel(r: np.ndarray, order: int) -> np.ndarray:
    """Inverse 2-D Fourier transform of ``(1 - t^2)^order`` on the unit disk, at radius ``r``."""
    from scipy.special import jv

    a = 2 * np.pi * np.asarray(r, dtype=np.float64)
    out = np.full(a.shape, np.pi / (order + 1))
    nz = a > 1e-8
    out[nz] = 2 * np.pi * 2**order * math.factorial(order) * jv(order + 1, a[nz]) / a[nz] ** (order + 1)
    return out


def render_spatial(z: SpectrumFn, u) -> np.ndarray:
    """Closed-form inverse transform of a 2-D bump sum (optionally dilated) at points ``u``."""
    u = np.asarray(u, dtype=np.float64)
    if isinstance(z, Scaled):
        return render_spatial(z.z, u / z.s)
    if not isinstance(z, BumpSum) or z.dim != 2:
        raise TypeError("spatial rendering supports 2-D bump sums and their dilations")
    out = np.zeros(u.shape[:-1], dtype=np.complex128)
    for b in z.bumps:
        rho = b.radius
        radial = _bump_kernel(rho * np.linalg.norm(u, axis=-1), b.order)
        out += complex(b.amplitude) * rho**2 * radial * np.exp(2j * np.pi * (u @ np.asarray(b.center)))
    return out


def dense_grid_check(z: SpectrumFn, n: int = 512, spacing: float | None = None) -> float:
    """Relative error between the DFT of a fine spatial sampling and the closed-form spectrum."""
    spacing = spacing or 1.0 / (4 * z.support)
    if spacing >= 1.0 / (2 * z.support):
        raise ValueError("grid too coarse: the spectrum would alias")
    coords = np.fft.fftfreq(n) * n * spacing
    u = np.stack(np.meshgrid(coords, coords, indexing="ij"), axis=-1)
    dft = np.fft.fft2(render_spatial(z, u)) * spacing**2
    f = np.fft.fftfreq(n, d=spacing)
    xi = np.stack(np.meshgrid(f, f, indexing="ij"), axis=-1)
    return rel_error(dft, z(xi))


# ---------------------------------------------------------------- demos and reports


def demo_filters(dim: int = 2, xi_h: float = 0.25, xi_phi: float = 0.5, order: int = 2) -> tuple[FilterSpec, FilterSpec]:
    """Centred filters; ``order=0`` gives ideal low-pass disks."""
    origin = (0.0,) * dim
    h = FilterSpec(BumpSum((Bump(origin, xi_h, 1.0, order),), dim))
    phi = FilterSpec(BumpSum((Bump(origin, xi_phi, 1.0, order),), dim))
    return h, phi


def radial_profile_rows(curves: dict, radius: float, n: int = 201) -> list[list]:
    r = np.linspace(0.0, radius, n)
    first = next(iter(curves.values()))
    xi = np.zeros((n, first.dim))
    xi[:, 0] = r
    cols = [np.abs(fn(xi)) for fn in curves.values()]
    return [[repr(float(r[i]))] + [repr(float(c[i])) for c in cols] for i in range(n)]


def write_radial_csv(path, curves: dict, radius: float, n: int = 201) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["radius"] + list(curves))
        w.writerows(radial_profile_rows(curves, radius, n))


def write_json(path, report: dict) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")


def run_theorem2_demo(n_seeds: int = 10, dim: int = 2, seed: int = 0, scale_grid=(0.5, 1.0, 2.0), xi_h: float = 0.25, xi_phi: float = 0.5):
    """Returns (report dict, radial curves, plot radius)."""
    h, phi = demo_filters(dim, xi_h, xi_phi)
    rng = np.random.default_rng(seed)
    seeds = [random_bumps(rng, 0.4, dim=dim) for _ in range(n_seeds)]
    per_seed = [theorem2_set_check([z], h, phi, scale_grid, seed=seed + i) for i, z in enumerate(seeds)]
    s = per_seed[0].s
    report = {
        "demo": "theorem2",
        "dim": dim,
        "s": s,
        "R_h": per_seed[0].R_h,
        "xi_h": h.bandwidth,
        "xi_phi": phi.bandwidth,
        "scale_grid": list(scale_grid),
        "threshold": THRESHOLD,
        "mismatch": [r.max_mismatch for r in per_seed],
        "max_mismatch": max(r.max_mismatch for r in per_seed),
        "mismatch_by_power": {p: max(r.mismatch_by_power[p] for r in per_seed) for p in per_seed[0].mismatch_by_power},
    }
    report["passed"] = report["max_mismatch"] < THRESHOLD
    z = seeds[0]
    curves = {
        "h": h.spectrum,
        "phi": phi.spectrum,
        "z": z,
        "recovered": theorem2_recover(spectrum_multiply(h.spectrum, z), h, phi, s),
        "latent": spectrum_multiply(phi.spectrum, scale_spectrum(z, 1.0 / s)),
    }
    return report, curves, 1.25 * phi.bandwidth


def run_theorem1_demo(dim: int = 2, seed: int = 0, xi_h: float = 0.25, xi_phi: float = 0.5):
    h, phi = demo_filters(dim, xi_h, xi_phi, order=0)
    rep = theorem1_counterexample(h, phi, seed=seed)
    report = {"demo": "theorem1", "dim": dim, **rep.to_dict()}
    witness = spectrum_multiply(phi.spectrum, phi.spectrum)
    curves = {"h": h.spectrum, "phi": phi.spectrum, "witness": witness}
    return report, curves, 1.25 * xi_phi
