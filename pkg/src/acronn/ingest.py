"""Loading, day-level quality filtering, and gap imputation of raw recordings.

CSV schemas (one file per sensor, header row required, optional
``#rate_hz=<float>`` sidecar line first):

    acc.csv     t_ms,x_g,y_g,z_g
    eda.csv     t_ms,eda_us
    bvp.csv     t_ms,bvp
    labels.csv  start_ms,end_ms,sss[,gesture_id][,posture_id]

A missing sample is an empty value field; timestamps must follow the
uniform grid implied by the rate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import nn

MS_PER_DAY = 86_400_000

DEFAULT_RATES = {"acc": 32.0, "eda": 4.0, "bvp": 64.0}

_CHANNEL_SCHEMAS = {
    ("t_ms", "x_g", "y_g", "z_g"): ("acc", ("acc_x", "acc_y", "acc_z")),
    ("t_ms", "eda_us"): ("eda", ("eda",)),
    ("t_ms", "bvp"): ("bvp", ("bvp",)),
}


class ParseError(ValueError):
    def __init__(self, path, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


class SchemaError(ValueError):
    pass


@dataclass
class UniformSeries:
    """Evenly sampled values anchored at an epoch timestamp; NaN marks missing."""

    start_ms: float
    rate_hz: float
    values: np.ndarray

    def __post_init__(self):
        if self.rate_hz <= 0:
            raise ValueError("rate_hz must be positive")
        self.values = np.asarray(self.values, dtype=np.float64)

    @property
    def period_ms(self) -> float:
        return 1000.0 / self.rate_hz

    @property
    def end_ms(self) -> float:
        return self.start_ms + len(self.values) * self.period_ms

    def times_ms(self) -> np.ndarray:
        return self.start_ms + np.arange(len(self.values)) * self.period_ms

    def missing_fraction(self) -> float:
        if len(self.values) == 0:
            return 0.0
        return float(np.isnan(self.values).mean())


@dataclass
class LabelSpan:
    """One annotated interval: sleepiness rating plus optional activity ids."""

    start_ms: float
    end_ms: float
    sss: int
    gesture_id: int | None = None
    posture_id: int | None = None

    def __post_init__(self):
        if not self.start_ms < self.end_ms:
            raise ValueError(f"label span must have start_ms < end_ms, got [{self.start_ms}, {self.end_ms}]")
        if not 1 <= self.sss <= 7:
            raise ValueError(f"sss must be in [1, 7], got {self.sss}")
        if self.gesture_id is not None and not 0 <= self.gesture_id <= 7:
            raise ValueError(f"gesture_id must be in [0, 7], got {self.gesture_id}")
        if self.posture_id is not None and not 0 <= self.posture_id <= 3:
            raise ValueError(f"posture_id must be in [0, 3], got {self.posture_id}")


@dataclass
class RawRecording:
    subject_id: str
    channels: dict[str, UniformSeries]
    labels: list[LabelSpan] = field(default_factory=list)


def _parse_float(token: str):
    return math.nan if token == "" else float(token)


def _read_lines(path):
    with open(path) as fh:
        return fh.read().splitlines()


def read_channel_file(path) -> dict[str, UniformSeries]:
    """Parse one sensor CSV into its channel series (acc expands to three)."""
    lines = _read_lines(path)
    line_no = 0
    rate = None
    if lines and lines[0].startswith("#rate_hz="):
        rate = float(lines[0].split("=", 1)[1])
        line_no = 1
    if line_no >= len(lines):
        raise ParseError(path, line_no + 1, "missing header row")
    header = tuple(col.strip() for col in lines[line_no].split(","))
    if header not in _CHANNEL_SCHEMAS:
        raise SchemaError(f"{path}: unrecognized header {','.join(header)!r}")
    kind, channel_ids = _CHANNEL_SCHEMAS[header]
    if rate is None:
        rate = DEFAULT_RATES[kind]
    period = 1000.0 / rate
    n_cols = len(header)
    times: list[float] = []
    cols: list[list[float]] = [[] for _ in channel_ids]
    t0 = None
    prev_t = -math.inf
    for offset, line in enumerate(lines[line_no + 1 :]):
        file_line = line_no + 2 + offset
        if line == "":
            continue
        tokens = line.split(",")
        if len(tokens) != n_cols:
            raise ParseError(path, file_line, f"expected {n_cols} fields, got {len(tokens)}")
        if tokens[0].strip() == "":
            raise ParseError(path, file_line, "timestamp field is empty")
        try:
            t = float(tokens[0])
            vals = [_parse_float(tok.strip()) for tok in tokens[1:]]
        except ValueError as exc:
            raise ParseError(path, file_line, f"malformed numeric field ({exc})") from None
        if t <= prev_t:
            raise ParseError(path, file_line, f"timestamp {t} is not strictly increasing")
        if t0 is None:
            t0 = t
        expected = t0 + len(times) * period
        if abs(t - expected) > 0.01 * period:
            raise SchemaError(
                f"{path}:{file_line}: timestamp {t} deviates from the {rate} Hz grid (expected {expected})"
            )
        prev_t = t
        times.append(t)
        for col, val in zip(cols, vals):
            col.append(val)
    start = t0 if t0 is not None else 0.0
    return {
        cid: UniformSeries(start_ms=start, rate_hz=rate, values=np.array(col))
        for cid, col in zip(channel_ids, cols)
    }


def read_labels_file(path) -> list[LabelSpan]:
    lines = _read_lines(path)
    line_no = 0
    if lines and lines[0].startswith("#"):
        line_no = 1
    if line_no >= len(lines):
        return []
    header = [col.strip() for col in lines[line_no].split(",")]
    base = ["start_ms", "end_ms", "sss"]
    if header[:3] != base or any(col not in ("gesture_id", "posture_id") for col in header[3:]):
        raise SchemaError(f"{path}: unrecognized labels header {','.join(header)!r}")
    spans = []
    for offset, line in enumerate(lines[line_no + 1 :]):
        file_line = line_no + 2 + offset
        if line == "":
            continue
        tokens = [tok.strip() for tok in line.split(",")]
        if len(tokens) != len(header):
            raise ParseError(path, file_line, f"expected {len(header)} fields, got {len(tokens)}")
        try:
            kwargs = {}
            for col, tok in zip(header, tokens):
                if col in ("gesture_id", "posture_id"):
                    kwargs[col] = None if tok == "" else int(tok)
                elif col == "sss":
                    kwargs[col] = int(tok)
                else:
                    kwargs[col] = float(tok)
            spans.append(LabelSpan(**kwargs))
        except ValueError as exc:
            raise ParseError(path, file_line, str(exc)) from None
    return spans


def load_recording(paths, label_path, subject_id: str = "") -> RawRecording:
    """Assemble a recording from per-sensor CSV paths plus a labels CSV."""
    channels: dict[str, UniformSeries] = {}
    for path in dict(paths).values():
        if not Path(path).exists():
            raise FileNotFoundError(f"missing input file: {path}")
        channels.update(read_channel_file(path))
    if not Path(label_path).exists():
        raise FileNotFoundError(f"missing input file: {label_path}")
    return RawRecording(subject_id=subject_id, channels=channels, labels=read_labels_file(label_path))


def _fmt(v: float) -> str:
    return "" if math.isnan(v) else repr(float(v))


def save_recording(rec: RawRecording, out_dir) -> dict[str, Path]:
    """Write a recording back to the CSV schemas; inverse of load_recording."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: dict[str, Path] = {}
    groups: list[tuple[str, tuple[str, ...], tuple[str, ...]]] = [
        ("acc.csv", ("acc_x", "acc_y", "acc_z"), ("t_ms", "x_g", "y_g", "z_g")),
        ("eda.csv", ("eda",), ("t_ms", "eda_us")),
        ("bvp.csv", ("bvp",), ("t_ms", "bvp")),
    ]
    for fname, channel_ids, header in groups:
        if not all(cid in rec.channels for cid in channel_ids):
            continue
        series = [rec.channels[cid] for cid in channel_ids]
        ref = series[0]
        path = out_dir / fname
        with open(path, "w") as fh:
            fh.write(f"#rate_hz={repr(ref.rate_hz)}\n")
            fh.write(",".join(header) + "\n")
            times = ref.times_ms()
            for i, t in enumerate(times):
                row = [repr(float(t))] + [_fmt(s.values[i]) for s in series]
                fh.write(",".join(row) + "\n")
        written[fname] = path
    path = out_dir / "labels.csv"
    with open(path, "w") as fh:
        fh.write("start_ms,end_ms,sss,gesture_id,posture_id\n")
        for span in rec.labels:
            g = "" if span.gesture_id is None else str(span.gesture_id)
            p = "" if span.posture_id is None else str(span.posture_id)
            fh.write(f"{repr(float(span.start_ms))},{repr(float(span.end_ms))},{span.sss},{g},{p}\n")
    written["labels.csv"] = path
    return written


def _day_index(t_ms: np.ndarray, tz_offset_min: int) -> np.ndarray:
    return np.floor((t_ms + tz_offset_min * 60_000.0) / MS_PER_DAY).astype(np.int64)


def _subtract_intervals(span: LabelSpan, holes: list[tuple[float, float]]) -> list[LabelSpan]:
    pieces = [(span.start_ms, span.end_ms)]
    for h0, h1 in holes:
        next_pieces = []
        for a, b in pieces:
            if h1 <= a or h0 >= b:
                next_pieces.append((a, b))
                continue
            if a < h0:
                next_pieces.append((a, h0))
            if h1 < b:
                next_pieces.append((h1, b))
        pieces = next_pieces
    return [replace(span, start_ms=a, end_ms=b) for a, b in pieces if a < b]


def exclude_low_coverage_days(rec: RawRecording, threshold: float = 0.8, tz_offset_min: int = 0) -> RawRecording:
    """Drop calendar days in which any channel is more than `threshold` missing.

    A dropped day is cleared to the missing marker in every channel and cut
    out of the label spans, so it carries no supervision downstream. Days at
    exactly the threshold are retained. Idempotent.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must be in (0, 1)")
    bad_days: set[int] = set()
    for series in rec.channels.values():
        if len(series.values) == 0:
            continue
        days = _day_index(series.times_ms(), tz_offset_min)
        missing = np.isnan(series.values)
        for day in np.unique(days):
            sel = days == day
            if missing[sel].mean() > threshold:
                bad_days.add(int(day))
    if not bad_days:
        return RawRecording(rec.subject_id, dict(rec.channels), list(rec.labels))
    channels = {}
    for cid, series in rec.channels.items():
        values = series.values.copy()
        days = _day_index(series.times_ms(), tz_offset_min)
        values[np.isin(days, sorted(bad_days))] = np.nan
        channels[cid] = UniformSeries(series.start_ms, series.rate_hz, values)
    holes = [
        (day * MS_PER_DAY - tz_offset_min * 60_000.0, (day + 1) * MS_PER_DAY - tz_offset_min * 60_000.0)
        for day in sorted(bad_days)
    ]
    labels: list[LabelSpan] = []
    for span in rec.labels:
        labels.extend(_subtract_intervals(span, holes))
    return RawRecording(rec.subject_id, channels, labels)


# ---------------------------------------------------------------------------
# gap imputation


@dataclass
class ImputerModel:
    """Forward-only recurrent regressor over (last value, observed mask, gap age)."""

    hidden_dim: int
    params: dict[str, np.ndarray]


def _imputer_inputs(values: np.ndarray, observed: np.ndarray, mean: float, std: float) -> np.ndarray:
    """Per-step inputs built from observations only: no leakage from targets."""
    n = len(values)
    feats = np.zeros((n, 3))
    last = 0.0
    age = 1.0
    for t in range(n):
        feats[t, 0] = last
        feats[t, 1] = 1.0 if t > 0 and observed[t - 1] else 0.0
        feats[t, 2] = min(age, 5.0)
        if observed[t]:
            last = (values[t] - mean) / std
            age = 0.1
        else:
            age += 0.1
    return feats


def _imputer_loss_grads(params, feats, targets, target_mask, want_grads=True):
    """Mean squared error on observed targets plus its hand-derived gradient."""
    hs, cache = nn.lstm_forward(params, feats[None, :, :])
    hs = hs[0]
    pred = hs @ params["w_out"] + params["b_out"][0]
    err = np.where(target_mask, pred - targets, 0.0)
    n_obs = max(int(target_mask.sum()), 1)
    value = float(err @ err) / n_obs
    if not want_grads:
        return value, None
    dpred = 2.0 * err / n_obs
    grads = {
        "w_out": hs.T @ dpred,
        "b_out": np.array([dpred.sum()]),
    }
    dhs = dpred[:, None] * params["w_out"]
    grads.update(nn.lstm_backward(params, cache, dhs[None, :, :]))
    return value, grads


def init_imputer(hidden_dim: int = 8, seed: int = 0) -> ImputerModel:
    rng = np.random.default_rng(seed)
    params = {}
    for gate in ("i", "f", "g", "o"):
        params[f"wx_{gate}"] = rng.normal(0.0, 1.0 / math.sqrt(3), (hidden_dim, 3))
        params[f"wh_{gate}"] = rng.normal(0.0, 1.0 / math.sqrt(hidden_dim), (hidden_dim, hidden_dim))
        params[f"b_{gate}"] = np.zeros(hidden_dim)
    params["b_f"] += 1.0
    params["w_out"] = rng.normal(0.0, 1.0 / math.sqrt(hidden_dim), hidden_dim)
    params["b_out"] = np.zeros(1)
    return ImputerModel(hidden_dim=hidden_dim, params=params)


def train_imputer(
    series_list,
    hidden_dim: int = 8,
    epochs: int = 30,
    lr: float = 0.01,
    seed: int = 0,
    window: int = 120,
    mask_fraction: float = 0.25,
) -> ImputerModel:
    """Fit the recurrent imputer on (possibly gappy) series, self-supervised.

    A fraction of observed points is hidden from the inputs each epoch so the
    model learns to bridge gaps rather than copy the previous sample.
    """
    arrays = []
    for s in series_list:
        v = s.values if isinstance(s, UniformSeries) else np.asarray(s, dtype=np.float64)
        if np.isfinite(v).sum() >= 8:
            arrays.append(v)
    if not arrays:
        raise ValueError("no series with enough observed samples to train on")
    model = init_imputer(hidden_dim=hidden_dim, seed=seed)
    state = nn.AdamState(model.params)
    rng = np.random.default_rng(seed)
    for _ in range(epochs):
        for v in arrays:
            observed = np.isfinite(v)
            mean = float(v[observed].mean())
            std = float(v[observed].std()) or 1.0
            hidden = observed & (rng.random(len(v)) < mask_fraction)
            inputs_obs = observed & ~hidden
            feats = _imputer_inputs(v, inputs_obs, mean, std)
            targets = np.where(observed, (v - mean) / std, 0.0)
            for start in range(0, len(v), window):
                sl = slice(start, min(start + window, len(v)))
                if not observed[sl].any():
                    continue
                _, grads = _imputer_loss_grads(model.params, feats[sl], targets[sl], observed[sl])
                nn.adam_update(model.params, grads, state, lr)
    return model


def impute_series(model: ImputerModel, values: np.ndarray) -> np.ndarray:
    """Fill missing samples with model predictions; observed samples untouched."""
    observed = np.isfinite(values)
    mean = float(values[observed].mean())
    std = float(values[observed].std()) or 1.0
    feats = _imputer_inputs(values, observed, mean, std)
    hs, _ = nn.lstm_forward(model.params, feats[None, :, :])
    pred = hs[0] @ model.params["w_out"] + model.params["b_out"][0]
    out = values.copy()
    out[~observed] = pred[~observed] * std + mean
    return out


def impute_gaps(rec: RawRecording, mode: str = "linear", model=None) -> RawRecording:
    """Fill every missing sample; observed samples are preserved bit for bit.

    linear: interpolate between nearest observed neighbors, holding the
    nearest value across edge gaps. recurrent: substitute the forward
    recurrent regressor's predictions at missing positions only.
    """
    if mode not in ("linear", "recurrent"):
        raise ValueError(f"unknown imputation mode {mode!r}")
    if mode == "recurrent" and model is None:
        raise ValueError("recurrent mode requires a trained ImputerModel")
    channels = {}
    for cid, series in rec.channels.items():
        v = series.values
        missing = np.isnan(v)
        if len(v) and missing.all():
            raise ValueError(f"channel {cid!r} is entirely missing; cannot impute")
        if not missing.any():
            channels[cid] = series
            continue
        if mode == "linear":
            idx = np.arange(len(v), dtype=np.float64)
            filled = v.copy()
            filled[missing] = np.interp(idx[missing], idx[~missing], v[~missing])
        else:
            m = model[cid] if isinstance(model, dict) else model
            filled = impute_series(m, v)
        channels[cid] = UniformSeries(series.start_ms, series.rate_hz, filled)
    return RawRecording(rec.subject_id, channels, list(rec.labels))
