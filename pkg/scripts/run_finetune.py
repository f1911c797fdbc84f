"""Supervised pretraining, then SEI fine-tuning on measurements from a shifted texture family."""

import argparse
import json

from sei.experiments import finetune_shift

p = argparse.ArgumentParser()
p.add_argument("out")
p.add_argument("--test-slope", type=float, default=2.0)
p.add_argument("--steps", type=int, default=500, help="fine-tuning steps")
p.add_argument("--seed", type=int, default=0)
args = p.parse_args()

s = finetune_shift(out=args.out, test_slope=args.test_slope, finetune_steps=args.steps, seed=args.seed)
print(json.dumps(s["psnr"], indent=2))
print(f"{s['seconds'] / 60:.1f} min")
