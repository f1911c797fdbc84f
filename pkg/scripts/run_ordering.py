"""Blurry input vs. SURE-only vs. SEI at desk scale; writes CSVs and summary.json to OUT."""

import argparse
import json

from sei.experiments import Setup, method_ordering

p = argparse.ArgumentParser()
p.add_argument("out")
p.add_argument("--steps", type=int, default=2000)
p.add_argument("--seed", type=int, default=0)
args = p.parse_args()

s = method_ordering(Setup(steps=args.steps), args.out, seed=args.seed)
print(json.dumps(s["psnr"], indent=2))
print(f"{s['seconds'] / 60:.1f} min")
