import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sei import ndgrad as nd
from sei.oracle import (
    THRESHOLD,
    Bump,
    BumpSum,
    FilterSpec,
    HypothesisError,
    Modulated,
    Product,
    Rotated,
    Scaled,
    dense_grid_check,
    demo_filters,
    nonvanishing_radius,
    random_bumps,
    rel_error,
    render_spatial,
    rotation,
    run_theorem1_demo,
    run_theorem2_demo,
    sample_ball,
    scale_spectrum,
    spectrum_multiply,
    theorem1_counterexample,
    theorem2_choose_s,
    theorem2_recover,
    theorem2_set_check,
)


def disk(radius, order=2, amp=1.0, center=(0.0, 0.0)):
    return BumpSum((Bump(center, radius, amp, order),), len(center))


def test_bump_values_and_support():
    z = disk(0.5, order=2, amp=2.0)
    assert z(np.zeros(2)) == 2.0
    assert z(np.array([0.25, 0.0])) == pytest.approx(2 * 0.75**2)
    assert z(np.array([0.5, 0.0])) == 0
    assert z.support == 0.5
    with pytest.raises(ValueError):
        Bump((0, 0), 0.0)
    with pytest.raises(ValueError):
        BumpSum((Bump((0.0,), 1.0),), 2)


def test_spectrum_multiply_cases():
    a = disk(0.2, center=(0.5, 0.0))
    b = disk(0.2, center=(-0.5, 0.0))
    empty = spectrum_multiply(a, b)
    assert isinstance(empty, BumpSum) and empty.bumps == ()
    assert not np.any(empty(sample_ball(np.random.default_rng(0), 50, 1.0)))
    c = disk(0.4, order=1)
    p = spectrum_multiply(c, c)
    assert isinstance(p, Product) and p.support == 0.4
    xi = np.array([[0.2, 0.0]])
    assert p(xi)[0] == pytest.approx(0.75**2)
    with pytest.raises(ValueError):
        spectrum_multiply(c, disk(0.4, center=(0.0,)))


@given(s=st.floats(0.1, 10), seed=st.integers(0, 1000))
def test_scale_spectrum_law(s, seed):
    g = np.random.default_rng(seed)
    z = random_bumps(g, 0.4)
    zs = scale_spectrum(z, s)
    assert zs.support == pytest.approx(z.support / s, rel=1e-15)
    xi = sample_ball(g, 64, 1.0)
    np.testing.assert_allclose(zs(xi), s**2 * z(s * xi) * (np.linalg.norm(xi, axis=-1) < z.support / s), atol=1e-14)
    # scaling by s then 1/s returns the original values
    np.testing.assert_allclose(scale_spectrum(zs, 1 / s)(xi), z(xi), atol=1e-12 * max(1, np.abs(z(xi)).max()))


def test_scale_spectrum_edge_cases():
    z = disk(0.3)
    assert scale_spectrum(z, 1) is z
    for bad in (0, -1):
        with pytest.raises(ValueError):
            scale_spectrum(z, bad)


def test_modulation_and_rotation():
    g = np.random.default_rng(3)
    z = random_bumps(g, 0.3)
    xi = sample_ball(g, 100, 0.5)
    m = Modulated(z, (1.5, -2.0))
    np.testing.assert_allclose(np.abs(m(xi)), np.abs(z(xi)), atol=1e-15)
    r = Rotated(z, rotation(0.7))
    assert r.support == z.support
    np.testing.assert_allclose(r(xi), z(xi @ np.asarray(rotation(0.7)).T))
    with pytest.raises(ValueError):
        Rotated(z, ((1.0, 0.5), (0.0, 1.0)))
    assert rotation(np.pi, dim=1) == ((-1.0,),)


def test_rel_error():
    assert rel_error(np.array([1.0, 2.0]), np.array([1.0, 2.0])) == 0
    assert rel_error(np.array([1.0, 3.0]), np.array([1.0, 2.0])) == 0.5
    assert rel_error(np.array([0.1]), np.array([0.0])) == 0.1


def test_dense_grid_matches_closed_form():
    g = np.random.default_rng(0)
    z = random_bumps(g, 0.4, orders=(4, 5, 6))
    assert dense_grid_check(z, n=512) < 1e-6
    assert dense_grid_check(Scaled(z, 2.0), n=512) < 1e-6
    with pytest.raises(ValueError):
        dense_grid_check(z, spacing=2.0)
    with pytest.raises(TypeError):
        render_spatial(Modulated(z, (1.0, 0.0)), np.zeros((1, 2)))


def test_convolution_engine_agrees_with_spectrum_product():
    # samples of two smooth bumps, convolved by the periodic engine, versus the product spectrum
    n, spacing = 255, 1.0
    coords = (np.arange(n) - n // 2) * spacing
    u = np.stack(np.meshgrid(coords, coords, indexing="ij"), axis=-1)
    a, b = disk(0.3, order=6), disk(0.35, order=6)
    ka = render_spatial(a, u).real
    img = np.fft.ifftshift(render_spatial(b, u).real)
    out = nd.conv2d_periodic(img[..., None], ka, method="fft").data[..., 0]
    f = np.fft.fftfreq(n, d=spacing)
    xi = np.stack(np.meshgrid(f, f, indexing="ij"), axis=-1)
    assert rel_error(np.fft.fft2(out) * spacing**4, spectrum_multiply(a, b)(xi)) < 1e-6


def test_nonvanishing_radius_cases():
    flat = FilterSpec(disk(0.25, order=0))
    assert nonvanishing_radius(flat, 1e-6) == pytest.approx(0.25, abs=2e-6)
    ring = FilterSpec(BumpSum((Bump((0.0, 0.0), 0.3, 1.0, 0), Bump((0.0, 0.0), 0.3, -1.0, 1)), 2))
    # 1 - (1 - t^2) = t^2 vanishes at the centre, so dc is zero
    assert not ring.dc_nonzero
    with pytest.raises(HypothesisError):
        nonvanishing_radius(ring)
    dip = FilterSpec(BumpSum((Bump((0.0, 0.0), 0.3, 1.0, 0), Bump((0.0, 0.0), 0.3, -2.0, 2)), 2))
    # 1 - 2(1 - t^2)^2 is zero at t^2 = 1 - 1/sqrt(2); dc is -1
    rho = 0.3 * np.sqrt(1 - 1 / np.sqrt(2))
    R = nonvanishing_radius(dip, 1e-6)
    assert R < rho
    xi = sample_ball(np.random.default_rng(1), 2000, R)
    assert np.all(np.abs(dip.spectrum(xi)) >= 1e-6 * dip.dc)


def test_choose_s():
    h, phi = demo_filters(2, 0.25, 0.5)
    s = theorem2_choose_s(h, phi.bandwidth)
    assert s == pytest.approx(phi.bandwidth / nonvanishing_radius(h))
    assert s > 2


def test_recover_cases():
    h, phi = demo_filters(2, 0.25, 0.5)
    s = theorem2_choose_s(h, 0.5)
    g = np.random.default_rng(2)
    xi = sample_ball(g, 500, 0.8)
    zero = theorem2_recover(BumpSum((), 2), h, phi, s)
    assert not np.any(zero(xi))
    z = random_bumps(g, 0.3)
    x = theorem2_recover(spectrum_multiply(h.spectrum, z), h, phi, s)
    # nothing outside the reconstruction band
    out = xi[np.linalg.norm(xi, axis=-1) >= 0.5]
    assert not np.any(x(out))
    expected = spectrum_multiply(phi.spectrum, scale_spectrum(z, 1 / s))
    assert rel_error(x(xi), expected(xi)) < THRESHOLD
    with pytest.raises(HypothesisError):
        theorem2_recover(spectrum_multiply(h.spectrum, z), h, phi, 1.0)


def test_set_check_passes_and_power_one_fails():
    h, phi = demo_filters(2, 0.25, 0.5)
    g = np.random.default_rng(4)
    rep = theorem2_set_check([random_bumps(g, 0.4) for _ in range(3)], h, phi, (0.5, 1.0, 2.0))
    assert rep.passed and rep.n_members == 9
    assert rep.mismatch_by_power["1"] > 0.1
    d = rep.to_dict()
    assert d["passed"] is True
    with pytest.raises(ValueError):
        theorem2_set_check([], h, phi)


@settings(max_examples=10)
@given(seed=st.integers(0, 2**31))
def test_set_check_random_seeds(seed):
    h, phi = demo_filters(2, 0.25, 0.5)
    z = random_bumps(np.random.default_rng(seed), 0.4)
    assert theorem2_set_check([z], h, phi, seed=seed).max_mismatch < THRESHOLD


def test_one_dimensional_mode():
    h, phi = demo_filters(1, 0.25, 0.5)
    z = random_bumps(np.random.default_rng(0), 0.4, dim=1)
    rep = theorem2_set_check([z], h, phi, (0.5, 1.0))
    assert rep.passed and rep.dim == 1
    assert set(rep.mismatch_by_power) == {"1"}
    assert theorem1_counterexample(*demo_filters(1, 0.25, 0.5, order=0)).passed


def test_theorem1_cases():
    h, phi = demo_filters(2, 0.25, 0.5, order=0)
    rep = theorem1_counterexample(h, phi)
    assert rep.passed
    assert rep.witness_in_full_set and not rep.witness_in_bandlimited_set
    assert rep.witness_support == 0.5 and rep.witness_energy_above_xi_h > 0
    with pytest.raises(HypothesisError):
        theorem1_counterexample(phi, h)


def test_demos():
    rep, curves, radius = run_theorem2_demo(n_seeds=3)
    assert rep["passed"] and rep["max_mismatch"] < THRESHOLD
    assert set(curves) == {"h", "phi", "z", "recovered", "latent"}
    rep1, _, _ = run_theorem1_demo()
    assert rep1["passed"]


def test_choose_s_guarantee_on_band():
    flat = FilterSpec(disk(0.25, order=0))
    assert theorem2_choose_s(flat, 0.5) == pytest.approx(0.5 / 0.25, rel=1e-4)
    dip = FilterSpec(BumpSum((Bump((0.0, 0.0), 0.3, 1.0, 0), Bump((0.0, 0.0), 0.3, -2.0, 2)), 2))
    s = theorem2_choose_s(dip, 0.5)
    xi = sample_ball(np.random.default_rng(8), 1000, 0.5)
    assert np.all(np.abs(dip.spectrum(xi / s)) >= 1e-6 * dip.dc)


def test_spectrum_multiply_pointwise():
    g = np.random.default_rng(6)
    a, b = random_bumps(g, 0.4), random_bumps(g, 0.3)
    xi = sample_ball(g, 1000, 0.6)
    assert np.array_equal(spectrum_multiply(a, b)(xi), a(xi) * b(xi))
    one = disk(1.0, order=0)
    np.testing.assert_array_equal(spectrum_multiply(one, b)(xi), b(xi))


def test_set_check_unit_grid_and_zero_seed():
    h, phi = demo_filters(2, 0.25, 0.5)
    z = random_bumps(np.random.default_rng(12), 0.4)
    assert theorem2_set_check([z], h, phi, (1.0,)).max_mismatch < THRESHOLD
    assert theorem2_set_check([BumpSum((), 2)], h, phi, (1.0, 2.0)).max_mismatch == 0


def test_theorem1_member_checks():
    rep = theorem1_counterexample(*demo_filters(2, 0.25, 0.5, order=0), n_members=10)
    assert rep.max_phase_modulus_error < 1e-14
    assert rep.max_filtered_energy_above_xi_h == 0.0
    assert rep.bandwidth_preserved
