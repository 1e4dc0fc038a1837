"""Recurrent sequence classifier with consistency self-attention.

Everything is plain numpy with hand-derived gradients: a single-layer LSTM,
additive attention over time whose weights are penalized for temporal
total variation, a softmax head, Adam, and a finite-difference gradient
checker to keep the backward pass honest.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

CHECKPOINT_VERSION = 1

_LSTM_GATES = ("i", "f", "g", "o")

# Serialization order of the flat weight arrays in a checkpoint file.
PARAM_ORDER = tuple(
    f"{w}_{gate}" for gate in _LSTM_GATES for w in ("wx", "wh", "b")
) + ("w_att", "b_att", "w_head", "b_head")


@dataclass
class TrainConfig:
    """Optimizer and schedule settings shared by every classifier in the pipeline."""

    lr: float = 0.02
    epochs: int = 60
    batch: int = 16
    seed: int = 0
    lambda_gamma: float = 0.1
    early_stop_patience: int = 8
    val_fraction: float = 0.2
    min_delta: float = 0.0  # held-out loss must improve by this much to count


@dataclass
class LstmCsaModel:
    """One LSTM + consistency-self-attention classifier.

    ``params`` maps parameter names (see :data:`PARAM_ORDER`) to arrays:
    per-gate input/recurrent matrices and biases, the attention score
    vector/bias, and the class head.
    """

    input_dim: int
    hidden_dim: int
    num_classes: int
    params: dict[str, np.ndarray]
    lambda_gamma: float = 0.1

    def copy(self) -> "LstmCsaModel":
        return LstmCsaModel(
            self.input_dim,
            self.hidden_dim,
            self.num_classes,
            {k: v.copy() for k, v in self.params.items()},
            self.lambda_gamma,
        )


@dataclass
class ForwardResult:
    probs: np.ndarray      # (C,) class probabilities from the attention-pooled state
    alpha: np.ndarray      # (T,) attention weights, sum to 1
    per_step: np.ndarray   # (T, C) class probabilities of each hidden state


def param_shapes(input_dim: int, hidden_dim: int, num_classes: int) -> dict[str, tuple]:
    shapes: dict[str, tuple] = {}
    for gate in _LSTM_GATES:
        shapes[f"wx_{gate}"] = (hidden_dim, input_dim)
        shapes[f"wh_{gate}"] = (hidden_dim, hidden_dim)
        shapes[f"b_{gate}"] = (hidden_dim,)
    shapes["w_att"] = (hidden_dim,)
    shapes["b_att"] = (1,)
    shapes["w_head"] = (num_classes, hidden_dim)
    shapes["b_head"] = (num_classes,)
    return shapes


def init_model(
    input_dim: int,
    hidden_dim: int,
    num_classes: int,
    seed: int = 0,
    lambda_gamma: float = 0.1,
    dtype=np.float32,
) -> LstmCsaModel:
    """Gaussian init scaled by fan-in; forget-gate bias starts at 1."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(input_dim, hidden_dim, num_classes).items():
        if name.startswith("b"):
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            fan_in = shape[-1] if len(shape) > 1 else shape[0]
            params[name] = rng.normal(0.0, 1.0 / math.sqrt(fan_in), shape).astype(dtype)
    params["b_f"] += np.asarray(1.0, dtype=dtype)
    return LstmCsaModel(input_dim, hidden_dim, num_classes, params, lambda_gamma)


def _softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def lstm_forward(params: dict[str, np.ndarray], xs: np.ndarray):
    """Run the LSTM over a batch of equal-length sequences.

    xs: (B, T, D). Returns hidden states (B, T, H) and the per-step cache
    needed by :func:`lstm_backward`.
    """
    B, T, _ = xs.shape
    H = params["wh_i"].shape[0]
    dtype = params["wh_i"].dtype
    h = np.zeros((B, H), dtype=dtype)
    c = np.zeros((B, H), dtype=dtype)
    hs = np.empty((B, T, H), dtype=dtype)
    cache = []
    for t in range(T):
        x = np.ascontiguousarray(xs[:, t, :], dtype=dtype)
        i = expit(x @ params["wx_i"].T + h @ params["wh_i"].T + params["b_i"])
        f = expit(x @ params["wx_f"].T + h @ params["wh_f"].T + params["b_f"])
        g = np.tanh(x @ params["wx_g"].T + h @ params["wh_g"].T + params["b_g"])
        o = expit(x @ params["wx_o"].T + h @ params["wh_o"].T + params["b_o"])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        cache.append((x, h, c, i, f, g, o, tc))
        h = o * tc
        c = c_new
        hs[:, t, :] = h
    return hs, cache


def lstm_backward(params: dict[str, np.ndarray], cache, dhs: np.ndarray) -> dict[str, np.ndarray]:
    """Backprop through time given upstream gradients on every hidden state."""
    B, T, H = dhs.shape
    grads = {
        name: np.zeros_like(params[name])
        for name in params
        if name.split("_")[-1] in _LSTM_GATES
    }
    dh = np.zeros((B, H), dtype=dhs.dtype)
    dc = np.zeros((B, H), dtype=dhs.dtype)
    for t in range(T - 1, -1, -1):
        x, h_prev, c_prev, i, f, g, o, tc = cache[t]
        dh = dh + dhs[:, t, :]
        do = dh * tc
        dcur = dc + dh * o * (1.0 - tc * tc)
        di = dcur * g
        dg = dcur * i
        df = dcur * c_prev
        da = {
            "i": di * i * (1.0 - i),
            "f": df * f * (1.0 - f),
            "g": dg * (1.0 - g * g),
            "o": do * o * (1.0 - o),
        }
        for gate, d in da.items():
            grads[f"wx_{gate}"] += d.T @ x
            grads[f"wh_{gate}"] += d.T @ h_prev
            grads[f"b_{gate}"] += d.sum(axis=0)
        dh = sum(da[gate] @ params[f"wh_{gate}"] for gate in _LSTM_GATES)
        dc = dcur * f
    return grads


def _attention(params: dict[str, np.ndarray], hs: np.ndarray):
    """Additive attention scores over time: e_t = w_att . tanh(h_t) + b."""
    th = np.tanh(hs)
    e = th @ params["w_att"] + params["b_att"][0]
    alpha = _softmax(e, axis=1)
    v = np.einsum("bt,bth->bh", alpha, hs)
    logits = v @ params["w_head"].T + params["b_head"]
    return th, e, alpha, v, logits


def forward(model: LstmCsaModel, x: np.ndarray) -> ForwardResult:
    """Classify one T x D sequence; also exposes attention and per-step probabilities."""
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ValueError(
            f"expected input of shape (T, {model.input_dim}), got {x.shape}"
        )
    hs, _ = lstm_forward(model.params, x[None, :, :])
    _, _, alpha, _, logits = _attention(model.params, hs)
    probs = _softmax(logits, axis=1)[0]
    per_step = _softmax(hs[0] @ model.params["w_head"].T + model.params["b_head"], axis=1)
    return ForwardResult(probs=probs, alpha=alpha[0], per_step=per_step)


def consistency_penalty(alpha):
    """Total-variation penalty on the attention weights, scaled by sequence length.

    Returns T * sum_t |alpha_t - alpha_{t-1}|. Works on any numeric sequence
    (including exact types such as Fraction) so the closed-form values can be
    checked without float rounding.
    """
    a = np.asarray(alpha)
    if a.ndim != 1 or len(a) < 1:
        raise ValueError("alpha must be a non-empty 1-d sequence")
    return len(a) * np.abs(np.diff(a)).sum()


def _group_by_length(batch):
    """Group (x, label) pairs by sequence length so each group batches cleanly."""
    groups: dict[int, list[int]] = {}
    for idx, (x, _) in enumerate(batch):
        groups.setdefault(len(x), []).append(idx)
    for t in sorted(groups):
        idxs = groups[t]
        xs = np.stack([np.asarray(batch[i][0]) for i in idxs])
        labels = np.array([batch[i][1] for i in idxs], dtype=int)
        yield xs, labels


def _group_loss_grads(model: LstmCsaModel, xs: np.ndarray, labels: np.ndarray, want_grads: bool):
    """Sum of per-sequence losses over one equal-length group, plus gradients of that sum."""
    params = model.params
    B, T, _ = xs.shape
    hs, cache = lstm_forward(params, xs)
    th, _, alpha, v, logits = _attention(params, hs)
    logp = logits - logits.max(axis=1, keepdims=True)
    logp = logp - np.log(np.exp(logp).sum(axis=1, keepdims=True))
    ce = -logp[np.arange(B), labels]
    tv = np.abs(np.diff(alpha, axis=1)).sum(axis=1) if T > 1 else np.zeros(B)
    gamma = T * tv
    loss_sum = float(ce.sum(dtype=np.float64)) + model.lambda_gamma * float(gamma.sum(dtype=np.float64))
    if not want_grads:
        return loss_sum, None

    probs = np.exp(logp)
    dlogits = probs.copy()
    dlogits[np.arange(B), labels] -= 1.0
    grads = {
        "w_head": dlogits.T @ v,
        "b_head": dlogits.sum(axis=0),
    }
    dv = dlogits @ params["w_head"]
    dalpha = np.einsum("bth,bh->bt", hs, dv)
    dhs = alpha[:, :, None] * dv[:, None, :]
    if T > 1:
        s = np.sign(np.diff(alpha, axis=1))
        dgamma = np.zeros_like(alpha)
        dgamma[:, 1:] += s
        dgamma[:, :-1] -= s
        dalpha = dalpha + model.lambda_gamma * T * dgamma
    de = alpha * (dalpha - (alpha * dalpha).sum(axis=1, keepdims=True))
    grads["w_att"] = np.einsum("bth,bt->h", th, de)
    grads["b_att"] = np.array([de.sum()], dtype=de.dtype)
    dhs = dhs + de[:, :, None] * params["w_att"] * (1.0 - th * th)
    grads.update(lstm_backward(params, cache, dhs))
    return loss_sum, grads


def loss(model: LstmCsaModel, batch) -> float:
    """Mean cross-entropy plus lambda-weighted consistency penalty over a batch."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    total = 0.0
    for xs, labels in _group_by_length(batch):
        group_sum, _ = _group_loss_grads(model, xs, labels, want_grads=False)
        total += group_sum
    return total / len(batch)


def loss_and_grads(model: LstmCsaModel, batch):
    """Loss plus gradient of the loss w.r.t. every parameter (mean over the batch)."""
    total = 0.0
    acc: dict[str, np.ndarray] = {k: np.zeros_like(v) for k, v in model.params.items()}
    for xs, labels in _group_by_length(batch):
        group_sum, grads = _group_loss_grads(model, xs, labels, want_grads=True)
        total += group_sum
        for k, g in grads.items():
            acc[k] += g
    n = len(batch)
    for k in acc:
        acc[k] /= n
    return total / n, acc


def grad_check(model: LstmCsaModel, x: np.ndarray, label: int, eps: float = 1e-4) -> float:
    """Compare analytic gradients against central finite differences.

    Runs in float64 regardless of the model dtype. Returns the maximum over
    all parameter entries of |g_a - g_n| / max(1e-8, |g_a| + |g_n|).
    """
    if not 1e-6 <= eps <= 1e-4:
        raise ValueError("eps must lie in [1e-6, 1e-4]")
    m = model.copy()
    for k in m.params:
        m.params[k] = m.params[k].astype(np.float64)
    x = np.asarray(x, dtype=np.float64)
    _, analytic = loss_and_grads(m, [(x, label)])
    worst = 0.0
    for name, p in m.params.items():
        flat = p.reshape(-1)
        ga = analytic[name].reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            up = loss(m, [(x, label)])
            flat[j] = orig - eps
            down = loss(m, [(x, label)])
            flat[j] = orig
            gn = (up - down) / (2.0 * eps)
            rel = abs(ga[j] - gn) / max(1e-8, abs(ga[j]) + abs(gn))
            worst = max(worst, rel)
    return worst


class AdamState:
    """First/second moment accumulators, one pair per parameter."""

    def __init__(self, params: dict[str, np.ndarray]):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0


def adam_update(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    state.t += 1
    b1t = 1.0 - beta1 ** state.t
    b2t = 1.0 - beta2 ** state.t
    for k, p in params.items():
        g = grads[k]
        state.m[k] = beta1 * state.m[k] + (1.0 - beta1) * g
        state.v[k] = beta2 * state.v[k] + (1.0 - beta2) * (g * g)
        step = (state.m[k] / b1t) / (np.sqrt(state.v[k] / b2t) + eps)
        p -= np.asarray(lr * step, dtype=p.dtype)


def train(
    model: LstmCsaModel,
    data,
    cfg: TrainConfig,
    grad_mask: dict[str, np.ndarray] | None = None,
    val_data=None,
):
    """Adam training with a seeded shuffle and early stopping on a held-out split.

    Returns (best model by held-out loss, history dict with per-epoch
    train/val losses and the best epoch index). Deterministic given cfg.seed.
    `grad_mask` multiplies gradients entrywise, freezing zeroed entries.
    When `val_data` is given it is used as the held-out split; otherwise a
    seeded `val_fraction` of `data` is held out.
    """
    if len(data) == 0:
        raise ValueError("no training data")
    classes = {int(label) for _, label in data}
    if len(classes) < 2:
        raise ValueError("training data contains a single class")
    rng = np.random.default_rng(cfg.seed)
    n = len(data)
    if val_data is not None:
        val_set = list(val_data)
        train_set = list(data)
    else:
        order = rng.permutation(n)
        n_val = min(max(1, int(round(cfg.val_fraction * n))), n - 1)
        val_set = [data[i] for i in order[:n_val]]
        train_set = [data[i] for i in order[n_val:]]

    model = model.copy()
    model.lambda_gamma = cfg.lambda_gamma
    state = AdamState(model.params)
    # the starting point competes too: a warm-started model is only replaced
    # if an epoch actually improves the held-out loss
    best_val = loss(model, val_set)
    history = {"train": [], "val": [], "best_epoch": -1, "init_val": best_val, "best_val": best_val}
    best_params = {k: v.copy() for k, v in model.params.items()}
    stale = 0
    for epoch in range(cfg.epochs):
        perm = rng.permutation(len(train_set))
        for start in range(0, len(perm), cfg.batch):
            batch = [train_set[i] for i in perm[start : start + cfg.batch]]
            _, grads = loss_and_grads(model, batch)
            if grad_mask is not None:
                for k, mask in grad_mask.items():
                    grads[k] = grads[k] * mask
            adam_update(model.params, grads, state, cfg.lr)
        history["train"].append(loss(model, train_set))
        history["val"].append(loss(model, val_set))
        if history["val"][-1] < best_val - cfg.min_delta:
            best_val = history["val"][-1]
            best_params = {k: v.copy() for k, v in model.params.items()}
            history["best_epoch"] = epoch
            history["best_val"] = best_val
            stale = 0
        else:
            stale += 1
            if stale > cfg.early_stop_patience:
                break
    model.params = best_params
    return model, history


def save_checkpoint(model: LstmCsaModel, path) -> None:
    """Versioned JSON checkpoint; weights stored flat in PARAM_ORDER."""
    obj = {
        "version": CHECKPOINT_VERSION,
        "dims": {
            "input_dim": model.input_dim,
            "hidden_dim": model.hidden_dim,
            "num_classes": model.num_classes,
        },
        "config": {
            "lambda_gamma": model.lambda_gamma,
            "dtype": str(model.params["w_att"].dtype),
        },
        "param_order": list(PARAM_ORDER),
        "weights": {name: model.params[name].reshape(-1).tolist() for name in PARAM_ORDER},
    }
    with open(path, "w") as fh:
        json.dump(obj, fh)


def load_checkpoint(path) -> LstmCsaModel:
    with open(path) as fh:
        obj = json.load(fh)
    if obj.get("version") != CHECKPOINT_VERSION:
        raise ValueError(
            f"checkpoint version {obj.get('version')!r} does not match supported version {CHECKPOINT_VERSION}"
        )
    dims = obj["dims"]
    dtype = np.dtype(obj["config"]["dtype"])
    shapes = param_shapes(dims["input_dim"], dims["hidden_dim"], dims["num_classes"])
    params = {
        name: np.asarray(obj["weights"][name], dtype=dtype).reshape(shapes[name])
        for name in PARAM_ORDER
    }
    return LstmCsaModel(
        dims["input_dim"],
        dims["hidden_dim"],
        dims["num_classes"],
        params,
        obj["config"]["lambda_gamma"],
    )
