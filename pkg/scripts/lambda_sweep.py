#!/usr/bin/env python3
"""Sweep the attention-consistency weight over {0, 0.01, 0.1, 1} on one dataset."""
import argparse
import json
from dataclasses import replace
from pathlib import Path

from acronn.pipeline import PipelineConfig, build_dataset, run_mode_on_dataset


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--mode", default="B2")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/lambda_sweep")
    args = ap.parse_args()

    cfg = PipelineConfig(mode=args.mode, seed=args.seed)
    dataset = build_dataset(cfg)
    rows = {}
    for lam in (0.0, 0.01, 0.1, 1.0):
        swept = replace(cfg, train=replace(cfg.train, lambda_gamma=lam))
        result = run_mode_on_dataset(swept, dataset)
        rows[lam] = result.metrics.macro_f1
        print(f"lambda={lam}: macro F1 {result.metrics.macro_f1:.3f}")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "lambda_sweep.json", "w") as fh:
        json.dump({"mode": args.mode, "seed": args.seed, "macro_f1": rows}, fh, indent=2)


if __name__ == "__main__":
    main()
