"""Acceptance suite, one test per criterion.

Criteria 6 to 9 train real networks and take most of the wall time; each experiment
runs once per session (plus once more for the determinism rerun).
"""

import time
from pathlib import Path

import numpy as np
import pytest

from conftest import CRITERIA
from sei import ndgrad as nd
from sei.experiments import Setup, ablation, finetune_shift, method_ordering
from sei.losses import loss_seq, loss_sei, loss_sure
from sei.metrics import psnr, ssim
from sei.network import Network, NetworkConfig, build_network
from sei.operators import ForwardModel, apply_adjoint, box_psf, forward_linear, gaussian_psf
from sei.oracle import THRESHOLD, run_theorem1_demo, run_theorem2_demo

SIGMA = 5 / 255


def record(k: int, ok: bool, detail: str) -> None:
    CRITERIA[k] = (bool(ok), detail)
    print(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")


# ---------------------------------------------------------------- 1. adjoint suite


def test_c01_adjoint_suite():
    t0 = time.perf_counter()
    psfs = [gaussian_psf(1), gaussian_psf(2), gaussian_psf(3), box_psf(2), box_psf(3), box_psf(4)]
    worst = 0.0
    for psf in psfs:
        for r in (1, 2, 3, 4):
            m = ForwardModel(psf, r=r)
            g = np.random.default_rng([r, psf.kernel.shape[0], int(psf.kind == "box")])
            for _ in range(20):
                x = g.standard_normal((48, 48, 1))
                y = g.standard_normal((48 // r, 48 // r, 1))
                lhs = np.vdot(forward_linear(m, x).data, y)
                rhs = np.vdot(x, apply_adjoint(m, y).data)
                worst = max(worst, abs(lhs - rhs) / (np.linalg.norm(x) * np.linalg.norm(y)))
    dt = time.perf_counter() - t0
    ok = worst < 1e-12 and dt < 10
    record(1, ok, f"max adjoint mismatch {worst:.2e} (< 1e-12), {dt:.1f}s (< 10s)")
    assert ok


# ---------------------------------------------------------------- 2. gradient suite


def _tiny_setup(seed):
    g = np.random.default_rng(seed)
    cfg = NetworkConfig(channels=8, depth=3)
    assert cfg.parameter_count() <= 5000
    params = build_network(cfg, g, dtype=np.float64)
    model = ForwardModel(gaussian_psf(1), sigma=SIGMA)
    y = g.uniform(0, 1, (2, 16, 16, 1))
    return cfg, params, model, y


def _max_rel(analytic, numeric):
    # per parameter tensor: max |analytic - numeric| / max |analytic|. Entries far below the
    # tensor's scale are dominated by difference round-off (~1e-16 |L| / eps), not by autodiff
    return float(np.max(np.abs(analytic - numeric)) / np.max(np.abs(analytic)))


def _max_rel_elementwise(analytic, numeric, floor=1e-8):
    return float(np.max(np.abs(analytic - numeric) / (np.abs(analytic) + floor)))


def _fd_grad(loss_fn, params, name, eps=1e-6):
    base = params[name]
    out = np.zeros_like(base)
    flat, gflat = base.ravel(), out.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = loss_fn(params)
        flat[i] = orig - eps
        down = loss_fn(params)
        flat[i] = orig
        gflat[i] = (up - down) / (2 * eps)
    return out


def test_c02_gradient_suite():
    t0 = time.perf_counter()
    cfg, params, model, y = _tiny_setup(0)
    seed = 11

    def analytic(stop):
        net = Network(cfg, params)
        value = loss_sei(net, model, y, np.random.default_rng(seed), stop_gradient=stop)
        names = net.names()
        return dict(zip(names, nd.grad(value.total, [net.params[n] for n in names])))

    def full_loss(p):
        return loss_sei(Network(cfg, p), model, y, np.random.default_rng(seed), stop_gradient=False).total.item()

    # with the target frozen at the current parameters, the loss as a function of the
    # parameters is exactly what the stopped gradient differentiates
    x1_frozen = nd.Tensor(Network(cfg, params)(y).data)

    def frozen_loss(p):
        net, g = Network(cfg, p), np.random.default_rng(seed)
        sure = loss_sure(net, model, y, g)
        seq = loss_seq(net, model, y, g, x1=x1_frozen)
        return sure.total.item() + seq.total.item()

    worst, elementwise = {}, 0.0
    for stop, fn in ((False, full_loss), (True, frozen_loss)):
        grads = analytic(stop)
        numeric = {n: _fd_grad(fn, params, n) for n in grads}
        worst[stop] = max(_max_rel(grads[n], numeric[n]) for n in grads)
        elementwise = max(elementwise, max(_max_rel_elementwise(grads[n], numeric[n]) for n in grads))
    dt = time.perf_counter() - t0
    err = max(worst.values())
    ok = err < 1e-5 and dt < 120
    record(
        2,
        ok,
        f"max rel grad error {err:.2e} (no stop {worst[False]:.1e}, stop {worst[True]:.1e}; < 1e-5; "
        f"elementwise {elementwise:.1e}), {cfg.parameter_count()} params, {dt:.1f}s",
    )
    assert ok


# ---------------------------------------------------------------- 3. SURE unbiasedness


def test_c03_sure_unbiased():
    t0 = time.perf_counter()
    g = np.random.default_rng(2024)
    model = ForwardModel(gaussian_psf(2), sigma=SIGMA)
    x = g.uniform(0, 1, (32, 32, 1))
    w = gaussian_psf(1).kernel  # fixed linear reconstructor: a mild blur

    def f(t):
        return nd.conv2d_periodic(t, w)

    # closed form: B = A W is circulant, E||B y - A x||^2 / m = ||(B - I) A x||^2 / m + sigma^2 ||b||^2
    Ax = forward_linear(model, x).data
    bias = np.mean((forward_linear(model, f(Ax)).data - Ax) ** 2)
    delta = np.zeros((32, 32, 1))
    delta[0, 0] = 1
    b = forward_linear(model, f(delta)).data
    expected = bias + SIGMA**2 * np.sum(b**2)

    values = np.empty(10_000)
    for i in range(values.size):
        y = Ax + SIGMA * g.standard_normal(Ax.shape)
        values[i] = loss_sure(f, model, y, g).total.item()
    se = values.std(ddof=1) / np.sqrt(values.size)
    gap = abs(values.mean() - expected)
    dt = time.perf_counter() - t0
    ok = gap < 3 * se and dt < 300
    record(3, ok, f"|mean SURE - true MSE| = {gap:.2e} vs 3 SE = {3 * se:.2e}, {dt:.1f}s")
    assert ok


# ---------------------------------------------------------------- 4. gradient-stop equivalence


def test_c04_stop_gradient_equivalence():
    worst = 0.0
    for k in range(10):
        cfg, params, model, y = _tiny_setup(100 + k)
        net = Network(cfg, params)
        p = list(net.params.values())
        stopped = nd.grad(loss_seq(net, model, y, np.random.default_rng(k), stop_gradient=True).total, p)
        const = nd.Tensor(net(y).data)
        substituted = nd.grad(loss_seq(net, model, y, np.random.default_rng(k), x1=const).total, p)
        worst = max(worst, max(float(np.max(np.abs(a - b))) for a, b in zip(stopped, substituted)))
    ok = worst <= 1e-12
    record(4, ok, f"max |grad difference| {worst:.2e} (<= 1e-12) over 10 instances")
    assert ok


# ---------------------------------------------------------------- 5. identification oracle


def test_c05_oracle():
    t0 = time.perf_counter()
    rep2, _, _ = run_theorem2_demo(n_seeds=10)
    rep1, _, _ = run_theorem1_demo()
    dt = time.perf_counter() - t0
    ok = rep2["max_mismatch"] < THRESHOLD and rep1["passed"] and rep1["bandwidth_preserved"] and dt < 60
    record(
        5,
        ok,
        f"scale recovery mismatch {rep2['max_mismatch']:.1e} (< 1e-10); witness in full set {rep1['witness_in_full_set']}, "
        f"in band-limited set {rep1['witness_in_bandlimited_set']}, bandwidth preserved {rep1['bandwidth_preserved']}; {dt:.1f}s",
    )
    assert ok


# ---------------------------------------------------------------- 6-9. desk-scale experiments

SETUP = Setup()  # Gaussian sigma=2, noise 5/255, 48x48 crops of 8 textures, 2000 steps, batch 8


def _timed(fn, *args, **kw):
    t0 = time.perf_counter()
    out = fn(*args, **kw)
    return out, time.perf_counter() - t0


def _experiments(root: Path):
    return {
        "ordering": _timed(method_ordering, SETUP, root / "ordering", seed=0),
        "ablation": _timed(ablation, SETUP, root / "ablation", seeds=(0, 1, 2)),
        "finetune": _timed(finetune_shift, out=root / "finetune", seed=0),
    }


@pytest.fixture(scope="session")
def runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("experiments")
    return root, _experiments(root)


def test_c06_method_ordering(runs):
    summary, dt = runs[1]["ordering"]
    p = summary["psnr"]
    ok = p["sei"] >= p["sure"] + 0.3 and p["sei"] > p["blurry"] and dt < 1800
    record(6, ok, f"PSNR sei {p['sei']:.2f} / sure {p['sure']:.2f} / blurry {p['blurry']:.2f} dB (need sei >= sure + 0.3, sei > blurry), {dt / 60:.1f} min")
    assert ok


def test_c07_stop_gradient_ablation(runs):
    summary, dt = runs[1]["ablation"]
    med = summary["median"]
    ok = med["stop"] >= med["no_stop"] and dt < 5400
    record(7, ok, f"median PSNR with stop {med['stop']:.2f} vs without {med['no_stop']:.2f} dB over seeds 0,1,2, {dt / 60:.1f} min")
    assert ok


def test_c08_finetune_direction(runs):
    summary, dt = runs[1]["finetune"]
    p = summary["psnr"]
    ok = p["after"] >= p["before"] and dt < 1800
    record(8, ok, f"PSNR before {p['before']:.2f} -> after {p['after']:.2f} dB, {dt / 60:.1f} min")
    assert ok


def test_c09_determinism(runs, tmp_path_factory):
    root, _ = runs
    again = tmp_path_factory.mktemp("rerun")
    _experiments(again)
    first = sorted(p.relative_to(root) for p in root.rglob("*.csv"))
    second = sorted(p.relative_to(again) for p in again.rglob("*.csv"))
    same = first == second and all((root / p).read_bytes() == (again / p).read_bytes() for p in first)
    summaries = all((root / d / "summary.json").read_bytes() == (again / d / "summary.json").read_bytes() for d in ("ordering", "ablation", "finetune"))
    ok = same and summaries and len(first) > 0
    record(9, ok, f"{len(first)} metrics/log CSVs from criteria 6-8 bitwise identical on rerun: {same}")
    assert ok


# ---------------------------------------------------------------- 10. metric units


def test_c10_metric_units():
    g = np.random.default_rng(0)
    a = np.zeros((16, 16))
    p = psnr(a, a + 0.1)
    x = g.uniform(size=(32, 32))
    s = ssim(x, x)
    ok = p == pytest.approx(20.0, abs=1e-12) and abs(s - 1) <= 1e-12
    record(10, ok, f"psnr(mse 0.01) = {p:.12f} dB, ssim(x, x) = {s:.15f}")
    assert ok
