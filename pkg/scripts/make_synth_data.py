#!/usr/bin/env python3
"""Write a synthetic dataset to disk in the ingest CSV schemas."""
import argparse
from dataclasses import replace

from acronn import synth


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--subjects", type=int, default=None)
    ap.add_argument("--hours", type=float, default=None)
    args = ap.parse_args()

    cfg = synth.SynthConfig(seed=args.seed)
    if args.subjects is not None:
        cfg = replace(cfg, n_subjects=args.subjects)
    if args.hours is not None:
        cfg = replace(cfg, hours_per_subject=args.hours)
    subjects = synth.generate_dataset(cfg)
    out = synth.write_dataset(subjects, args.out)
    total = sum(s.recording.channels["eda"].end_ms - s.recording.channels["eda"].start_ms for s in subjects)
    print(f"wrote {len(subjects)} subjects ({total / 3.6e6:.1f} h total) to {out}")


if __name__ == "__main__":
    main()
