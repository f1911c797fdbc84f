"""SEI with and without gradient stopping over several seeds; writes CSVs and summary.json to OUT."""

import argparse
import json

from sei.experiments import Setup, ablation

p = argparse.ArgumentParser()
p.add_argument("out")
p.add_argument("--steps", type=int, default=2000)
p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
args = p.parse_args()

s = ablation(Setup(steps=args.steps), args.out, seeds=tuple(args.seeds))
print(json.dumps({"psnr": s["psnr"], "median": s["median"]}, indent=2))
print(f"{s['seconds'] / 60:.1f} min")
