"""Command-line front end.

Every stage of the pipeline is a subcommand; `run` chains them end to end
for one mode and seed. Configuration comes from an optional flat
`key = value` file plus `--key value` overrides (dotted keys reach nested
sections, e.g. `--train.lr 0.05`, `--cvxeda.alpha 1e-3`).
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import context as ctx
from . import har, ingest, nn, synth
from .features import DEFAULT_LAYOUT, assemble_segments, prepare_recording
from .pipeline import (
    MODES,
    PipelineConfig,
    PreparedDataset,
    SubjectData,
    apply_overrides,
    build_dataset,
    evaluate_metrics,
    fit_scaler,
    load_config,
    load_data_dir,
    read_features_dir,
    run_comparison,
    run_pipeline,
    write_features_csv,
)


def _split_overrides(extra: list[str]) -> dict[str, str]:
    if len(extra) % 2 != 0:
        raise SystemExit(f"override arguments must come in '--key value' pairs, got {extra!r}")
    overrides = {}
    for key, value in zip(extra[::2], extra[1::2]):
        if not key.startswith("--"):
            raise SystemExit(f"expected an override key starting with '--', got {key!r}")
        overrides[key[2:]] = value
    return overrides


def _config(args, extra) -> PipelineConfig:
    overrides = _split_overrides(extra)
    for name in ("mode", "seed", "data_dir", "out_dir"):
        value = getattr(args, name, None)
        if value is not None:
            overrides.setdefault(name, str(value))
    return load_config(args.config, overrides)


def _scaled_dataset(dataset: PreparedDataset, scaler_path=None):
    if scaler_path:
        obj = json.loads(Path(scaler_path).read_text())
        mu, sd = np.asarray(obj["mean"]), np.asarray(obj["std"])
    else:
        mu, sd = fit_scaler([seg.matrix for s in dataset.subjects for seg in s.segments])
    subjects = [
        SubjectData(s.subject_id, [replace(seg, matrix=(seg.matrix - mu) / sd) for seg in s.segments])
        for s in dataset.subjects
    ]
    return PreparedDataset(subjects=subjects, scheme=dataset.scheme), mu, sd


def _save_scaler(path, mu, sd) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps({"mean": list(map(float, mu)), "std": list(map(float, sd))}))


def cmd_synth(args, extra) -> int:
    cfg = _config(args, extra)
    subjects = synth.generate_dataset(replace(cfg.synth, seed=cfg.seed))
    out = synth.write_dataset(subjects, args.out)
    print(f"wrote {len(subjects)} subjects to {out}")
    return 0


def cmd_preprocess(args, extra) -> int:
    cfg = _config(args, extra)
    for rec in load_data_dir(args.data):
        rec = ingest.exclude_low_coverage_days(rec, cfg.exclude_threshold, cfg.tz_offset_min)
        model = None
        if cfg.impute_mode == "recurrent":
            model = ingest.train_imputer(list(rec.channels.values()), seed=cfg.seed)
        rec = ingest.impute_gaps(rec, mode=cfg.impute_mode, model=model)
        ingest.save_recording(rec, Path(args.out) / rec.subject_id)
        print(f"preprocessed {rec.subject_id}")
    return 0


def cmd_featurize(args, extra) -> int:
    cfg = _config(args, extra)
    for rec in load_data_dir(args.data):
        rec = ingest.exclude_low_coverage_days(rec, cfg.exclude_threshold, cfg.tz_offset_min)
        rec = ingest.impute_gaps(rec, mode="linear")
        proc = prepare_recording(rec, cfg.dsp)
        segments = assemble_segments(proc, scheme=cfg.scheme)
        path = write_features_csv(SubjectData(rec.subject_id, segments), args.out)
        print(f"featurized {rec.subject_id}: {len(segments)} segments -> {path}")
    return 0


def cmd_train_har(args, extra) -> int:
    cfg = _config(args, extra)
    dataset, mu, sd = _scaled_dataset(read_features_dir(args.features, cfg.scheme))
    segments = [seg for s in dataset.subjects for seg in s.segments]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _save_scaler(out / "scaler.json", mu, sd)
    for kind, n_classes, name in (
        ("gestural", har.N_GESTURE_CLASSES, "har_gestural.json"),
        ("postural", har.N_POSTURE_CLASSES, "har_postural.json"),
    ):
        runs = har.training_runs(segments, kind)
        model = nn.init_model(8, cfg.har_hidden_dim, n_classes, seed=cfg.seed, lambda_gamma=cfg.har_train.lambda_gamma)
        model, history = nn.train(model, runs, cfg.har_train)
        nn.save_checkpoint(model, out / name)
        print(f"{kind}: {len(runs)} runs, best val loss {history['best_val']:.4f} -> {out / name}")
    return 0


def cmd_train_fatigue(args, extra) -> int:
    cfg = _config(args, extra)
    dataset, mu, sd = _scaled_dataset(read_features_dir(args.features, cfg.scheme))
    data = [
        (seg.matrix, seg.label)
        for s in dataset.subjects
        for seg in s.segments
        if seg.label is not None
    ]
    from .features import scheme_classes

    model = nn.init_model(DEFAULT_LAYOUT.dim, cfg.hidden_dim, scheme_classes(cfg.scheme), seed=cfg.seed, lambda_gamma=cfg.train.lambda_gamma)
    model, history = nn.train(model, data, cfg.train)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _save_scaler(out / "scaler.json", mu, sd)
    nn.save_checkpoint(model, out / "stage1.json")
    print(f"stage 1: {len(data)} segments, best val loss {history['best_val']:.4f} -> {out / 'stage1.json'}")
    return 0


def _load_context_models(args):
    model_g = nn.load_checkpoint(Path(args.har) / "har_gestural.json")
    model_p = nn.load_checkpoint(Path(args.har) / "har_postural.json")
    stage1 = nn.load_checkpoint(args.stage1)
    return model_g, model_p, stage1


def cmd_detect(args, extra) -> int:
    cfg = _config(args, extra)
    dataset, _, _ = _scaled_dataset(read_features_dir(args.features, cfg.scheme), Path(args.har) / "scaler.json")
    model_g, model_p, _ = _load_context_models(args) if args.stage1 else (
        nn.load_checkpoint(Path(args.har) / "har_gestural.json"),
        nn.load_checkpoint(Path(args.har) / "har_postural.json"),
        None,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        fh.write("segment_id,kind,class,t0,t1,confidence\n")
        for s in dataset.subjects:
            for seg in s.segments:
                for box in har.detect_activities(model_g, model_p, seg):
                    fh.write(
                        f"{seg.segment_id},{box.kind},{box.activity_class},{box.t0},{box.t1},{box.confidence!r}\n"
                    )
    print(f"wrote detections to {out}")
    return 0


def cmd_context(args, extra) -> int:
    cfg = _config(args, extra)
    from .features import scheme_classes

    n_classes = scheme_classes(cfg.scheme)
    dataset, _, _ = _scaled_dataset(read_features_dir(args.features, cfg.scheme), Path(args.har) / "scaler.json")
    model_g, model_p, stage1 = _load_context_models(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "cfm.csv", "w") as fh_cfm, open(out / "scores.csv", "w") as fh_sc:
        fh_cfm.write("segment_id,x,y,c,value\n")
        fh_sc.write("segment_id,kind,class,t0,t1,confidence,score1,score2\n")
        for s in dataset.subjects:
            for seg in s.segments:
                boxes = har.detect_activities(model_g, model_p, seg)
                probs = nn.forward(stage1, seg.matrix).per_step
                tensor = ctx.build_context(seg, boxes, probs, n_classes)
                h, w, c = tensor.maps.shape
                for ci in range(c):
                    for x in range(h):
                        for y in range(w):
                            v = tensor.maps[x, y, ci]
                            if v != 0.0:
                                fh_cfm.write(f"{seg.segment_id},{x},{y},{ci},{v!r}\n")
                for box, s1, s2 in tensor.per_box_scores:
                    fh_sc.write(
                        f"{seg.segment_id},{box.kind},{box.activity_class},{box.t0},{box.t1},"
                        f"{box.confidence!r},{s1!r},{s2!r}\n"
                    )
    print(f"wrote contextual maps and scores to {out}")
    return 0


def cmd_train_stage2(args, extra) -> int:
    cfg = _config(args, extra)
    from .features import scheme_classes

    n_classes = scheme_classes(cfg.scheme)
    dataset, _, _ = _scaled_dataset(read_features_dir(args.features, cfg.scheme), Path(args.har) / "scaler.json")
    model_g, model_p, stage1 = _load_context_models(args)
    data = []
    for s in dataset.subjects:
        for seg in s.segments:
            if seg.label is None:
                continue
            boxes = har.detect_activities(model_g, model_p, seg)
            probs = nn.forward(stage1, seg.matrix).per_step
            tensor = ctx.build_context(seg, boxes, probs, n_classes)
            data.append((ctx.assemble_stage2_input(seg, tensor, boxes), seg.label))
    model = nn.init_model(
        DEFAULT_LAYOUT.dim + n_classes + 2, cfg.stage2_hidden_dim, n_classes,
        seed=cfg.seed, lambda_gamma=cfg.train.lambda_gamma,
    )
    model, history = nn.train(model, data, cfg.train)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    nn.save_checkpoint(model, out / "stage2.json")
    print(f"stage 2: {len(data)} segments, best val loss {history['best_val']:.4f} -> {out / 'stage2.json'}")
    return 0


def _read_labels_column(path) -> list[int]:
    labels = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line and not line[0].isalpha():
                labels.append(int(float(line.split(",")[-1])))
    return labels


def cmd_evaluate(args, extra) -> int:
    pred = _read_labels_column(args.pred)
    truth = _read_labels_column(args.truth)
    report = evaluate_metrics(pred, truth, args.classes)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        json.dump(report.to_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(f"macro F1 {report.macro_f1:.4f} -> {out}")
    return 0


def cmd_gradcheck(args, extra) -> int:
    rng = np.random.default_rng(args.seed)
    worst = 0.0
    for trial in range(args.trials):
        hidden = int(rng.integers(2, 9))
        t_len = int(rng.integers(2, 7))
        d = int(rng.integers(2, 7))
        c = int(rng.integers(2, 4))
        lam = 0.0 if trial % 2 == 0 else 0.1
        model = nn.init_model(d, hidden, c, seed=int(rng.integers(1 << 31)), lambda_gamma=lam, dtype=np.float64)
        x = rng.normal(size=(t_len, d))
        err = nn.grad_check(model, x, int(rng.integers(c)))
        worst = max(worst, err)
        print(f"trial {trial}: dims=({t_len}x{d}) hidden={hidden} classes={c} lambda={lam} max rel err={err:.3g}")
    print(f"worst over {args.trials} trials: {worst:.3g}")
    return 0 if worst < 1e-4 else 1


def cmd_run(args, extra) -> int:
    cfg = _config(args, extra)
    if args.compare:
        summary = run_comparison(cfg, seeds=tuple(range(args.seeds)))
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "comparison.json", "w") as fh:
            json.dump(summary, fh, sort_keys=True, indent=2)
            fh.write("\n")
        for mode, stats in summary["modes"].items():
            print(f"{mode}: macro F1 {stats['macro_f1_mean']:.3f} +/- {stats['macro_f1_std']:.3f}")
        return 0
    report = run_pipeline(cfg)
    print(f"mode {cfg.mode} seed {cfg.seed}: macro F1 {report.macro_f1:.4f} -> {cfg.out_dir}/metrics.json")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="acronn",
        description="Activity-aware fatigue estimation pipeline over wearable recordings.",
    )
    parser.add_argument("--config", help="flat key = value config file")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a labeled synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="day filtering and gap imputation")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("featurize", help="windowed feature sequences as CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train-har", help="train gestural and postural recognizers")
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_har)

    p = sub.add_parser("train-fatigue", help="train the stage-1 fatigue classifier")
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_fatigue)

    p = sub.add_parser("detect", help="emit activity boxes for each segment")
    p.add_argument("--features", required=True)
    p.add_argument("--har", required=True, help="directory with har checkpoints and scaler")
    p.add_argument("--stage1", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("context", help="emit contextual feature maps and box scores")
    p.add_argument("--features", required=True)
    p.add_argument("--har", required=True)
    p.add_argument("--stage1", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_context)

    p = sub.add_parser("train-stage2", help="train the activity-aware fatigue learner")
    p.add_argument("--features", required=True)
    p.add_argument("--har", required=True)
    p.add_argument("--stage1", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_stage2)

    p = sub.add_parser("evaluate", help="metrics from prediction and truth label files")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--out", default="metrics.json")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gradcheck", help="finite-difference check of the hand-derived gradients")
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("run", help="full pipeline for one mode")
    p.add_argument("--mode", choices=sorted(MODES), default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--data", dest="data_dir", default=None)
    p.add_argument("--out", dest="out_dir", default=None)
    p.add_argument("--compare", action="store_true", help="run every mode over several seeds")
    p.add_argument("--seeds", type=int, default=5, help="number of seeds for --compare")
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    return args.func(args, extra)


if __name__ == "__main__":
    sys.exit(main())
