"""Optimizers, the training loop for every loss kind, and fine-tuning."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import ndgrad as nd
from .checkpoint import Checkpoint
from .losses import loss_css, loss_ei_shift, loss_mc, loss_seq, loss_sei, loss_supervised, loss_sure
from .network import Network, NetworkConfig, build_network
from .operators import ForwardModel

log = logging.getLogger(__name__)

SELF_SUPERVISED = ("sei", "seq", "sure", "mc", "css", "ei")
LOSS_KINDS = SELF_SUPERVISED + ("sup",)
METRIC_COLUMNS = ["epoch", "step", "loss_total", "loss_sure", "loss_seq", "psnr_val"]


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    loss: str = "sei"
    epochs: int = 1
    batch_size: int = 8
    lr: float = 5e-4
    optimizer: str = "adam"
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    crop_size: int | None = 48
    alpha: float = 1.0
    stop_gradient: bool = True
    val_every: int = 1
    dtype: str = "float64"

    def __post_init__(self):
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.loss!r}; expected one of {LOSS_KINDS}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        object.__setattr__(self, "betas", tuple(self.betas))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------- optimizers


def adam_step(params: dict, grads: dict, state: dict, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
    """Bias-corrected Adam. ``state`` holds ``t``, ``m`` and ``v``; returns new (params, state)."""
    b1, b2 = betas
    t = state.get("t", 0) + 1
    m_old, v_old = state.get("m", {}), state.get("v", {})
    new_params, m, v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name} {p.shape}")
        m[name] = b1 * m_old.get(name, np.zeros_like(p)) + (1 - b1) * g
        v[name] = b2 * v_old.get(name, np.zeros_like(p)) + (1 - b2) * g * g
        m_hat = m[name] / (1 - b1**t)
        v_hat = v[name] / (1 - b2**t)
        new_params[name] = (p - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype)
    return new_params, {"t": t, "m": m, "v": v}


def sgd_step(params: dict, grads: dict, lr: float) -> dict:
    out = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name} {p.shape}")
        out[name] = (p - lr * g).astype(p.dtype)
    return out


# ---------------------------------------------------------------- training loop


def _streams(seed: int) -> dict[str, np.random.Generator]:
    init, data, loss = np.random.SeedSequence(seed).spawn(3)
    return {"init": np.random.default_rng(init), "data": np.random.default_rng(data), "loss": np.random.default_rng(loss)}


def _as_images(items, dtype) -> list[np.ndarray]:
    out = []
    for a in items:
        a = np.asarray(a, dtype=dtype)
        out.append(a[..., None] if a.ndim == 2 else a)
    return out


def _crop(rng, ys, xs, idx, crop, r):
    yb, xb = [], []
    for i in idx:
        y = ys[i]
        H, W = y.shape[:2]
        if crop is None or crop >= min(H, W):
            yb.append(y)
            if xs is not None:
                xb.append(xs[i])
            continue
        top = int(rng.integers(H - crop + 1))
        left = int(rng.integers(W - crop + 1))
        yb.append(y[top : top + crop, left : left + crop])
        if xs is not None:
            xb.append(xs[i][r * top : r * (top + crop), r * left : r * (left + crop)])
    return np.stack(yb), (np.stack(xb) if xs is not None else None)


def _loss(kind: str, net, model, yb, xb, rng, cfg: TrainConfig):
    if kind == "sup":
        return loss_supervised(net, yb, xb)
    if kind == "sei":
        return loss_sei(net, model, yb, rng, alpha=cfg.alpha, stop_gradient=cfg.stop_gradient)
    if kind == "seq":
        return loss_seq(net, model, yb, rng, stop_gradient=cfg.stop_gradient)
    if kind == "sure":
        return loss_sure(net, model, yb, rng)
    if kind == "mc":
        return loss_mc(net, model, yb)
    if kind == "css":
        return loss_css(net, model, yb, rng)
    return loss_ei_shift(net, model, yb, rng, stop_gradient=cfg.stop_gradient)


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def _run(
    net: Network,
    measurements: Sequence[np.ndarray],
    model: ForwardModel,
    cfg: TrainConfig,
    references: Sequence[np.ndarray] | None,
    evaluator: Callable[[Network], float] | None,
    streams: dict[str, np.random.Generator],
    opt_state: dict,
    epoch0: int,
    meta: dict,
) -> tuple[Checkpoint, list[dict]]:
    dtype = nd._DTYPES[cfg.dtype]
    ys = _as_images(measurements, dtype)
    xs = _as_images(references, dtype) if references is not None else None
    n = len(ys)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    rows: list[dict] = []
    step = epoch0 * steps_per_epoch
    for epoch in range(epoch0 + 1, epoch0 + cfg.epochs + 1):
        order = streams["data"].permutation(n)
        sums: dict[str, float] = {}
        for b in range(steps_per_epoch):
            idx = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            yb, xb = _crop(streams["data"], ys, xs, idx, cfg.crop_size, model.r)
            value = _loss(cfg.loss, net, model, yb, xb, streams["loss"], cfg)
            scalars = value.floats()
            if not all(math.isfinite(v) for v in scalars.values()):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, step {step + 1}: {scalars}")
            leaves = nd.backward(value.total)
            grads = {name: leaves.get(id(t), np.zeros_like(t.data)) for name, t in net.params.items()}
            state = net.state()
            if cfg.optimizer == "adam":
                new, opt_state = adam_step(state, grads, opt_state, cfg.lr, cfg.betas, cfg.eps)
            else:
                new = sgd_step(state, grads, cfg.lr)
            net.load_state(new)
            for t in net.params.values():
                t.grad = None
            step += 1
            for k, v in scalars.items():
                sums[k] = sums.get(k, 0.0) + v
        means = {k: v / steps_per_epoch for k, v in sums.items()}
        psnr_val = None
        if evaluator is not None and cfg.val_every > 0 and (epoch % cfg.val_every == 0 or epoch == epoch0 + cfg.epochs):
            psnr_val = evaluator(net)
        rows.append(
            {
                "epoch": epoch,
                "step": step,
                "loss_total": means.get("total"),
                "loss_sure": means.get("sure"),
                "loss_seq": means.get("seq"),
                "psnr_val": psnr_val,
            }
        )
        log.debug("epoch %d step %d loss %.6g", epoch, step, means.get("total", float("nan")))
    ckpt = Checkpoint(
        network=net.cfg,
        params={k: v.copy() for k, v in net.state().items()},
        optimizer={"kind": cfg.optimizer, **opt_state} if cfg.optimizer == "adam" else {"kind": "sgd"},
        rng_state={k: g.bit_generator.state for k, g in streams.items()},
        epoch=epoch0 + cfg.epochs,
        meta=meta,
    )
    return ckpt, rows


def _check_references(kind: str, references) -> None:
    if kind == "sup" and references is None:
        raise ValueError("supervised training needs reference images")
    if kind in SELF_SUPERVISED and references is not None:
        raise ValueError(f"self-supervised loss {kind!r} must not receive reference images")


def train(
    measurements: Sequence[np.ndarray],
    model: ForwardModel,
    cfg: TrainConfig,
    net_cfg: NetworkConfig | None = None,
    *,
    references: Sequence[np.ndarray] | None = None,
    evaluator: Callable[[Network], float] | None = None,
) -> tuple[Checkpoint, list[dict]]:
    """Train a fresh network. Self-supervised kinds only ever see ``measurements``.

    ``evaluator`` is called with the network for the validation PSNR column; its
    result is logged and never fed back into training.
    """
    if len(measurements) == 0:
        raise ValueError("empty dataset")
    _check_references(cfg.loss, references)
    net_cfg = net_cfg or NetworkConfig(r=model.r)
    if net_cfg.r != model.r:
        raise ValueError(f"network upsampling factor {net_cfg.r} does not match forward model r={model.r}")
    streams = _streams(cfg.seed)
    net = Network(net_cfg, build_network(net_cfg, streams["init"], dtype=nd._DTYPES[cfg.dtype]))
    meta = {"forward": model.to_dict(), "train": cfg.to_dict()}
    return _run(net, measurements, model, cfg, references, evaluator, streams, {}, 0, meta)


def finetune(
    ckpt: Checkpoint,
    measurements: Sequence[np.ndarray],
    model: ForwardModel,
    cfg: TrainConfig | None = None,
    net_cfg: NetworkConfig | None = None,
    *,
    evaluator: Callable[[Network], float] | None = None,
) -> tuple[Checkpoint, list[dict]]:
    """Continue training from ``ckpt`` with SGD (lr 0.01 by default) on measurements only."""
    cfg = cfg or TrainConfig(loss="sei", optimizer="sgd", lr=0.01)
    if cfg.loss not in SELF_SUPERVISED:
        raise ValueError("fine-tuning runs on measurements only; use a self-supervised loss")
    if net_cfg is not None and net_cfg != ckpt.network:
        raise ValueError(f"network config {net_cfg} does not match checkpoint {ckpt.network}")
    if ckpt.network.r != model.r:
        raise ValueError(f"checkpoint upsampling factor {ckpt.network.r} does not match forward model r={model.r}")
    dtype = nd._DTYPES[cfg.dtype]
    net = Network(ckpt.network, {k: v.astype(dtype) for k, v in ckpt.params.items()})
    streams = _streams(cfg.seed)
    meta = dict(ckpt.meta, finetune={"forward": model.to_dict(), "train": cfg.to_dict()})
    return _run(net, measurements, model, cfg, None, evaluator, streams, {}, ckpt.epoch, meta)


# ---------------------------------------------------------------- metrics log


def log_csv_text(rows: list[dict]) -> str:
    """Render a metrics log as CSV text (floats via ``repr`` so reruns compare bytewise)."""
    lines = [",".join(METRIC_COLUMNS)]
    for row in rows:
        lines.append(",".join([str(row["epoch"]), str(row["step"])] + [_fmt(row[c]) for c in METRIC_COLUMNS[2:]]))
    return "\n".join(lines) + "\n"


def write_log_csv(rows: list[dict], path) -> None:
    Path(path).write_text(log_csv_text(rows))
