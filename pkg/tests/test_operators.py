import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sei import ndgrad as nd
from sei.operators import (
    ForwardModel,
    add_gaussian_noise,
    apply_adjoint,
    apply_forward,
    bicubic_psf,
    box_psf,
    delta_psf,
    forward_linear,
    gaussian_psf,
    load_psf_text,
    parse_kernel,
    save_psf_text,
)
from sei.transforms import bicubic_downsample

SIX_PSFS = [gaussian_psf(1), gaussian_psf(2), gaussian_psf(3), box_psf(2), box_psf(3), box_psf(4)]


def test_gaussian_psf_properties():
    p = gaussian_psf(1.0, 11)
    assert p.kernel.shape == (11, 11)
    assert abs(p.kernel.sum() - 1) < 1e-12
    assert np.array_equal(p.kernel, p.kernel[::-1, ::-1])
    assert np.all(p.kernel >= 0)
    with pytest.raises(ValueError):
        gaussian_psf(1.0, 10)


def test_gaussian_center_tap_formula():
    p = gaussian_psf(2.0, 13)
    c = np.arange(13) - 6
    Z = sum(np.exp(-(i * i + j * j) / 8.0) for i in c for j in c)
    assert p.kernel[6, 6] == pytest.approx(1 / Z, rel=1e-14)


def test_gaussian_default_support():
    assert gaussian_psf(2).kernel.shape == (13, 13)
    assert gaussian_psf(1).kernel.shape == (7, 7)


def test_box_psf():
    p = box_psf(2)
    assert p.kernel.shape == (5, 5)
    assert np.all(p.kernel == 1 / 25)
    assert abs(p.kernel.sum() - 1) < 1e-12
    out = nd.conv2d_periodic(np.full((12, 12, 1), 0.3), p.kernel).data
    np.testing.assert_allclose(out, 0.3, atol=1e-15)
    with pytest.raises(ValueError):
        box_psf(0)


def test_parse_kernel_specs():
    psf, r = parse_kernel("gaussian:2")
    assert psf == gaussian_psf(2) and r == 1
    psf, r = parse_kernel("bicubic:3")
    assert psf.kind == "bicubic" and r == 3
    assert parse_kernel("box:4")[0] == box_psf(4)
    for bad in ("gauss:1", "box:x", "bicubic", "gaussian:-1", ""):
        with pytest.raises(ValueError):
            parse_kernel(bad)


def test_psf_text_round_trip(tmp_path):
    p = gaussian_psf(1.5)
    save_psf_text(p, tmp_path / "k.txt")
    assert load_psf_text(tmp_path / "k.txt", "gaussian", 1.5) == p


def test_forward_model_validation():
    with pytest.raises(ValueError):
        ForwardModel(gaussian_psf(1), sigma=-1)
    with pytest.raises(ValueError):
        ForwardModel(bicubic_psf(5), r=5, mode="bicubic")
    with pytest.raises(ValueError):
        ForwardModel(gaussian_psf(1), r=2, phase=(2, 0))
    m = ForwardModel.from_spec("bicubic:2", 0.01)
    assert m.mode == "bicubic" and m.r == 2
    assert ForwardModel.from_dict(m.to_dict()) == m


def test_delta_forward_is_identity(rng):
    x = rng.standard_normal((8, 8, 1))
    assert np.array_equal(apply_forward(ForwardModel(delta_psf()), x).data, x)
    assert np.array_equal(apply_adjoint(ForwardModel(delta_psf()), x).data, x)


def test_forward_noise_reproducible(rng):
    m = ForwardModel(gaussian_psf(2), sigma=5 / 255)
    x = rng.standard_normal((16, 16, 1))
    a = apply_forward(m, x, np.random.default_rng(3)).data
    b = apply_forward(m, x, np.random.default_rng(3)).data
    assert a.tobytes() == b.tobytes()
    with pytest.raises(ValueError):
        apply_forward(m, x)
    with pytest.raises(ValueError):
        apply_forward(ForwardModel(gaussian_psf(2), r=2), np.zeros((15, 16, 1)))


def test_forward_is_composition(rng):
    m = ForwardModel(gaussian_psf(2), r=2)
    x = rng.standard_normal((16, 16, 1))
    expected = nd.subsample(nd.conv2d_periodic(x, gaussian_psf(2).kernel), 2).data
    assert np.array_equal(apply_forward(m, x).data, expected)


def test_box_adjoint_is_same_convolution(rng):
    m = ForwardModel(box_psf(3))
    y = rng.standard_normal((12, 12, 1))
    np.testing.assert_allclose(apply_adjoint(m, y).data, nd.conv2d_periodic(y, box_psf(3).kernel).data, atol=1e-15)


@pytest.mark.parametrize("psf", SIX_PSFS, ids=lambda p: p.spec)
@pytest.mark.parametrize("r", [1, 2, 3, 4])
def test_adjoint_inner_product(psf, r):
    m = ForwardModel(psf, r=r)
    gen = np.random.default_rng(r)
    for _ in range(20):
        x = gen.standard_normal((24, 24, 1))
        y = gen.standard_normal((24 // r, 24 // r, 1))
        lhs = np.vdot(forward_linear(m, x).data, y)
        rhs = np.vdot(x, apply_adjoint(m, y).data)
        assert abs(lhs - rhs) / (np.linalg.norm(x) * np.linalg.norm(y)) < 1e-12


def test_noise_statistics():
    eps = add_gaussian_noise(np.zeros(100_000), 0.02, np.random.default_rng(0)).data
    assert abs(eps.mean()) < 0.01 * 0.02
    assert abs(eps.std() - 0.02) < 0.01 * 0.02
    x = np.ones(4)
    assert np.array_equal(add_gaussian_noise(x, 0.0, None).data, x)


def test_bicubic_mode_matches_resampling_route(rng):
    x = rng.standard_normal((2, 24, 24, 1))
    for r in (2, 3, 4):
        m = ForwardModel.from_spec(f"bicubic:{r}")
        np.testing.assert_allclose(forward_linear(m, x).data, bicubic_downsample(x, r).data, atol=1e-13)


@given(seed=st.integers(0, 2**32 - 1), which=st.integers(0, 5), r=st.sampled_from([1, 2, 4]))
def test_noiseless_forward_is_max_norm_lipschitz(seed, which, r):
    g = np.random.default_rng(seed)
    m = ForwardModel(SIX_PSFS[which], r=r)
    a, b = g.standard_normal((2, 24, 24, 1))
    lhs = np.max(np.abs(forward_linear(m, a).data - forward_linear(m, b).data))
    assert lhs <= np.max(np.abs(a - b)) + 1e-12
