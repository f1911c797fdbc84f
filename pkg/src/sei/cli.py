"""Command-line entry points: degrade, train, eval, oracle, report.

Exit codes: 0 success, 1 validation error, 2 runtime or numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import oracle
from .checkpoint import load_checkpoint, save_checkpoint
from .data import Dataset, list_images, load_image, save_image
from .metrics import image_metrics, write_metrics_csv
from .network import Network, NetworkConfig
from .operators import ForwardModel, apply_forward
from .train import LOSS_KINDS, TrainConfig, TrainingDiverged, train, write_log_csv

log = logging.getLogger("sei")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class ValidationError(ValueError):
    pass


# ---------------------------------------------------------------- config


DATA_KEYS = {"measurements", "references", "val_measurements", "val_references", "manifest"}
RUN_KEYS = {"forward", "train", "network", "data", "output"}


@dataclass(frozen=True)
class RunConfig:
    forward: ForwardModel
    train: TrainConfig
    network: NetworkConfig
    data: dict
    output: str | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        unknown = set(d) - RUN_KEYS
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        data = dict(d.get("data", {}))
        bad = set(data) - DATA_KEYS
        if bad:
            raise ValidationError(f"unknown data keys: {sorted(bad)}")
        if "forward" in d:
            fwd = d["forward"]
            bad = set(fwd) - {"kernel", "r", "sigma", "phase", "mode"}
            if bad:
                raise ValidationError(f"unknown forward keys: {sorted(bad)}")
            forward = ForwardModel.from_dict(fwd)
        elif "manifest" in data:
            forward = ForwardModel.from_dict(json.loads(Path(data["manifest"]).read_text())["forward"])
        else:
            raise ValidationError("config needs a 'forward' section or data.manifest")
        train_cfg = TrainConfig.from_dict(d.get("train", {}))
        if "seed" not in d.get("train", {}):
            raise ValidationError("train.seed must be given explicitly")
        net = dict(d.get("network", {}))
        net.setdefault("r", forward.r)
        return cls(forward, train_cfg, NetworkConfig.from_dict(net), data, d.get("output"))

    def to_dict(self) -> dict:
        return {
            "forward": self.forward.to_dict(),
            "train": self.train.to_dict(),
            "network": self.network.to_dict(),
            "data": self.data,
            "output": self.output,
        }


def load_run_config(path) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None
    return RunConfig.from_dict(raw)


def _image_ext(channels: int) -> str:
    return ".pgm" if channels == 1 else ".ppm"


def _mean_psnr(net: Network, ys, xs) -> float:
    from .metrics import luminance, psnr

    vals = [psnr(luminance(net(y[None]).data[0]), luminance(x)) for y, x in zip(ys, xs)]
    return float(np.mean(vals))


def _crop_reference(x: np.ndarray, y: np.ndarray, r: int) -> np.ndarray:
    H, W = y.shape[0] * r, y.shape[1] * r
    if x.shape[0] < H or x.shape[1] < W:
        raise ValidationError(f"reference {x.shape[:2]} smaller than r x measurement {(H, W)}")
    return x[:H, :W]


# ---------------------------------------------------------------- commands


def cmd_degrade(args) -> int:
    model = ForwardModel.from_spec(args.kernel, args.sigma)
    src = list_images(args.input)
    if not src:
        raise ValidationError(f"no images in {args.input}")
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for index, path in enumerate(src):
        x = load_image(path)
        r = model.r
        H, W = (x.shape[0] // r) * r, (x.shape[1] // r) * r
        x = x[:H, :W]
        rng = np.random.default_rng(np.random.SeedSequence([args.seed, index]))
        y = apply_forward(model, x, rng).data
        name = path.stem + _image_ext(y.shape[-1])
        save_image(y, out / name, bits=16)
        files.append({"index": index, "source": path.name, "measurement": name, "seed": [args.seed, index], "cropped_extents": [H, W]})
    manifest = {"forward": model.to_dict(), "seed": args.seed, "input": str(args.input), "bits": 16, "files": files}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(files)} measurements to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    overrides = {}
    if args.loss:
        overrides["loss"] = args.loss
    if args.seed is not None:
        overrides["seed"] = args.seed
    if overrides:
        cfg = RunConfig(cfg.forward, TrainConfig.from_dict({**cfg.train.to_dict(), **overrides}), cfg.network, cfg.data, cfg.output)
    data = dict(cfg.data)
    if args.measurements:
        data["measurements"] = args.measurements
    if args.references:
        data["references"] = args.references
    output = Path(args.output or cfg.output or ".")
    if "measurements" not in data:
        raise ValidationError("no measurement directory given")
    kind = cfg.train.loss
    self_supervised = kind != "sup"
    refs_dir = data.get("references")
    if not self_supervised and not refs_dir:
        raise ValidationError("--loss sup needs reference images (data.references or --references)")
    ds = Dataset.from_dirs(data["measurements"], None if self_supervised else refs_dir)
    if len(ds) == 0:
        raise ValidationError(f"no images in {data['measurements']}")
    ys = ds.load_measurements()
    xs = None if self_supervised else [_crop_reference(x, y, cfg.forward.r) for x, y in zip(ds.load_references(), ys)]
    evaluator = None
    if data.get("val_measurements") and data.get("val_references"):
        val = Dataset.from_dirs(data["val_measurements"], data["val_references"], split="test")
        vy = val.load_measurements()
        vx = [_crop_reference(x, y, cfg.forward.r) for x, y in zip(val.load_references(), vy)]
        evaluator = lambda net: _mean_psnr(net, vy, vx)  # noqa: E731
    ckpt, rows = train(ys, cfg.forward, cfg.train, cfg.network, references=xs, evaluator=evaluator)
    output.mkdir(parents=True, exist_ok=True)
    save_checkpoint(ckpt, output / "checkpoint.seik")
    write_log_csv(rows, output / "metrics.csv")
    resolved = cfg.to_dict()
    resolved["data"], resolved["output"] = data, str(output)
    (output / "config.json").write_text(json.dumps(resolved, indent=2, sort_keys=True) + "\n")
    print(f"trained {kind} for {ckpt.epoch} epochs; checkpoint in {output}")
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    trained_fwd = ckpt.meta.get("forward")
    if args.manifest:
        fwd = json.loads(Path(args.manifest).read_text())["forward"]
        model = ForwardModel.from_dict(fwd)
        if model.r != ckpt.network.r:
            raise ValidationError(f"checkpoint upsamples by {ckpt.network.r} but the data was degraded with r={model.r}")
        if trained_fwd is not None and trained_fwd != model.to_dict():
            log.warning("degradation %s differs from the training configuration %s", model.to_dict(), trained_fwd)
    ds = Dataset.from_dirs(args.measurements, args.references, split="test")
    if len(ds) == 0:
        raise ValidationError(f"no images in {args.measurements}")
    net = Network(ckpt.network, ckpt.params)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for sample, y, x in zip(ds.samples, ds.load_measurements(), ds.load_references()):
        if y.shape[-1] != ckpt.network.in_channels:
            raise ValidationError(f"{sample.measurement.name}: {y.shape[-1]} channels, network expects {ckpt.network.in_channels}")
        est = net(y[None]).data[0]
        x = _crop_reference(x, y, ckpt.network.r)
        rows.append(image_metrics(sample.measurement.stem, est, x))
        if args.save_images:
            save_image(est, out / f"{sample.measurement.stem}.png", bits=8 if est.shape[-1] == 3 else 16)
    write_metrics_csv(rows, out / "metrics.csv")
    mean_psnr = float(np.mean([r.psnr_y for r in rows]))
    mean_ssim = float(np.mean([r.ssim_y for r in rows]))
    print(f"{len(rows)} images: PSNR {mean_psnr:.3f} dB, SSIM {mean_ssim:.4f}")
    return EXIT_OK


def cmd_oracle(args) -> int:
    out = Path(args.output)
    try:
        if args.demo == "theorem2":
            report, curves, radius = oracle.run_theorem2_demo(args.seeds, args.dim, args.seed, xi_h=args.xi_h, xi_phi=args.xi_phi)
        else:
            report, curves, radius = oracle.run_theorem1_demo(args.dim, args.seed, xi_h=args.xi_h, xi_phi=args.xi_phi)
    except oracle.HypothesisError as exc:
        out.mkdir(parents=True, exist_ok=True)
        oracle.write_json(out / f"{args.demo}_report.json", {"demo": args.demo, "error": "hypothesis_violation", "message": str(exc), "passed": False})
        print(f"hypothesis violation: {exc}", file=sys.stderr)
        return EXIT_INVALID
    out.mkdir(parents=True, exist_ok=True)
    oracle.write_json(out / f"{args.demo}_report.json", report)
    oracle.write_radial_csv(out / f"{args.demo}_radial.csv", curves, radius)
    status = "passed" if report["passed"] else "FAILED"
    print(f"{args.demo} (dim {args.dim}): {status}")
    return EXIT_OK if report["passed"] else EXIT_RUNTIME


def _read_summary(path) -> tuple[float, float]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["id", "psnr_y", "ssim_y"]:
            raise ValidationError(f"{path}: expected columns id,psnr_y,ssim_y, got {reader.fieldnames}")
        rows = list(reader)
    body = [r for r in rows if r["id"] != "mean"]
    if not body:
        raise ValidationError(f"{path}: no metric rows")
    return float(np.mean([float(r["psnr_y"]) for r in body])), float(np.mean([float(r["ssim_y"]) for r in body]))


def render_report(entries: list[tuple[str, str, float, float]]) -> str:
    """Markdown table, rows = methods, columns = (degradation, metric); best per column in bold."""
    methods = list(dict.fromkeys(m for m, *_ in entries))
    degradations = list(dict.fromkeys(d for _, d, *_ in entries))
    cells = {(m, d): (p, s) for m, d, p, s in entries}
    if len(cells) != len(entries):
        raise ValidationError("duplicate method/degradation pair")
    best = {}
    for d in degradations:
        vals = [cells[m, d] for m in methods if (m, d) in cells]
        best[d] = (max(v[0] for v in vals), max(v[1] for v in vals))
    header = "| Method | " + " | ".join(f"{d} PSNR | {d} SSIM" for d in degradations) + " |"
    sep = "|---|" + "---:|---:|" * len(degradations)
    lines = [header, sep]
    for m in methods:
        row = [m]
        for d in degradations:
            if (m, d) not in cells:
                row += ["-", "-"]
                continue
            p, s = cells[m, d]
            row.append(f"**{p:.2f}**" if p == best[d][0] else f"{p:.2f}")
            row.append(f"**{s:.4f}**" if s == best[d][1] else f"{s:.4f}")
        lines.append("| " + " | ".join(row) + " |")
    return "\n".join(lines) + "\n"


def cmd_report(args) -> int:
    entries = []
    for item in args.inputs:
        label, sep, path = item.partition("=")
        if not sep:
            raise ValidationError(f"expected METHOD[:DEGRADATION]=PATH, got {item!r}")
        method, _, degradation = label.partition(":")
        entries.append((method, degradation or "result", *_read_summary(path)))
    text = render_report(entries)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sei", description="Scale-equivariant self-supervised deblurring and super-resolution.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("degrade", help="blur, subsample and add noise to a directory of images")
    d.add_argument("--input", required=True)
    d.add_argument("--output", required=True)
    d.add_argument("--kernel", required=True, help="gaussian:<sigma> | box:<radius> | bicubic:<r> | delta")
    d.add_argument("--sigma", type=float, required=True, help="noise std in [0, 1] intensity units (5/255 = 0.019608)")
    d.add_argument("--seed", type=int, required=True)
    d.set_defaults(func=cmd_degrade)

    t = sub.add_parser("train", help="train a reconstruction network")
    t.add_argument("--config", required=True)
    t.add_argument("--loss", choices=LOSS_KINDS)
    t.add_argument("--seed", type=int)
    t.add_argument("--measurements")
    t.add_argument("--references")
    t.add_argument("--output")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="PSNR/SSIM of a checkpoint on a test set")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--measurements", required=True)
    e.add_argument("--references", required=True)
    e.add_argument("--output", required=True)
    e.add_argument("--manifest", help="degradation manifest to check against the checkpoint")
    e.add_argument("--save-images", action="store_true")
    e.set_defaults(func=cmd_eval)

    o = sub.add_parser("oracle", help="frequency-domain identification demos")
    o.add_argument("--demo", choices=("theorem1", "theorem2"), required=True)
    o.add_argument("--dim", type=int, choices=(1, 2), default=2)
    o.add_argument("--seeds", type=int, default=10)
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--xi-h", type=float, default=0.25)
    o.add_argument("--xi-phi", type=float, default=0.5)
    o.add_argument("--output", required=True)
    o.set_defaults(func=cmd_oracle)

    r = sub.add_parser("report", help="Markdown table from metrics CSVs")
    r.add_argument("inputs", nargs="+", metavar="METHOD[:DEGRADATION]=CSV")
    r.add_argument("--output")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (TrainingDiverged, FloatingPointError, ArithmeticError, OSError, RuntimeError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
