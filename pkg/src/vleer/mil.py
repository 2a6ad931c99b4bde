"""Gated-attention MIL aggregator with analytic gradients.

Forward pass for a bag H of shape (n_patches, d_in):

    a_i  = w . ( tanh(V h_i + b_v) * sigmoid(U h_i + b_u) )
    att  = softmax(a)
    z    = sum_i att_i h_i
    p    = softmax(W_c z + b_c)

Training minimizes cross-entropy with Adam, one bag per step. Everything
is plain numpy in float64 and single-threaded over steps, so a fixed seed
reproduces trained parameters bit-for-bit.
"""
from __future__ import annotations

import copy
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, NumericError, ValidationError

PARAM_ORDER = ("V", "b_v", "U", "b_u", "w", "W_c", "b_c")

VLEM_MAGIC = b"VLEM"
VLEM_VERSION = 1
_VLEM_HEADER = struct.Struct("<4sHIII")


@dataclass
class MILModel:
    d_in: int
    d_hid: int
    n_classes: int
    params: dict[str, np.ndarray]

    def validate(self) -> None:
        shapes = param_shapes(self.d_in, self.d_hid, self.n_classes)
        for name in PARAM_ORDER:
            p = self.params[name]
            if p.shape != shapes[name]:
                raise ValidationError(f"parameter {name} has shape {p.shape}, want {shapes[name]}")
            if not np.isfinite(p).all():
                raise ValidationError(f"parameter {name} is not finite")


@dataclass
class TrainConfig:
    epochs: int = 20
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    d_hid: int = 128
    clip_norm: float = 5.0

    def validate(self) -> None:
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")
        if self.lr < 0:
            raise ValidationError("lr must be nonnegative")


def param_shapes(d_in: int, d_hid: int, n_classes: int) -> dict[str, tuple]:
    return {
        "V": (d_hid, d_in),
        "b_v": (d_hid,),
        "U": (d_hid, d_in),
        "b_u": (d_hid,),
        "w": (d_hid,),
        "W_c": (n_classes, d_in),
        "b_c": (n_classes,),
    }


def init_model(d_in: int, d_hid: int, n_classes: int, seed: int) -> MILModel:
    if n_classes < 2:
        raise ValidationError("need at least two classes")
    rng = np.random.default_rng(seed)
    params = {
        "V": rng.standard_normal((d_hid, d_in)) / np.sqrt(d_in),
        "b_v": np.zeros(d_hid),
        "U": rng.standard_normal((d_hid, d_in)) / np.sqrt(d_in),
        "b_u": np.zeros(d_hid),
        "w": rng.standard_normal(d_hid) / np.sqrt(d_hid),
        "W_c": rng.standard_normal((n_classes, d_in)) / np.sqrt(d_in),
        "b_c": np.zeros(n_classes),
    }
    model = MILModel(d_in, d_hid, n_classes, params)
    model.validate()
    return model


def _softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - np.max(x)
    e = np.exp(shifted)
    return e / e.sum()


def _check_bag(model: MILModel, bag) -> np.ndarray:
    h = np.asarray(bag, dtype=np.float64)
    if h.ndim != 2 or h.shape[0] < 1:
        raise ValidationError("bag must be a non-empty 2-D matrix")
    if h.shape[1] != model.d_in:
        raise ValidationError(f"bag width {h.shape[1]} != model d_in {model.d_in}")
    if not np.isfinite(h).all():
        raise ValidationError("bag contains NaN/Inf")
    return h


def _forward_full(model: MILModel, h: np.ndarray):
    p = model.params
    gate_t = np.tanh(h @ p["V"].T + p["b_v"])
    gate_s = 1.0 / (1.0 + np.exp(-(h @ p["U"].T + p["b_u"])))
    gated = gate_t * gate_s
    logits_a = gated @ p["w"]
    att = _softmax(logits_a)
    z = att @ h
    logits_c = p["W_c"] @ z + p["b_c"]
    probs = _softmax(logits_c)
    return gate_t, gate_s, gated, att, z, logits_c, probs


def forward(model: MILModel, bag) -> tuple[np.ndarray, np.ndarray]:
    """Per-patch attention (simplex over the bag) and class probabilities."""
    h = _check_bag(model, bag)
    _, _, _, att, _, _, probs = _forward_full(model, h)
    return att, probs


def loss_and_gradients(model: MILModel, bag, label: int):
    """Cross-entropy loss and exact analytic gradients for one bag."""
    h = _check_bag(model, bag)
    if not 0 <= label < model.n_classes:
        raise ValidationError(f"label {label} out of range for {model.n_classes} classes")
    p = model.params
    gate_t, gate_s, gated, att, z, logits_c, probs = _forward_full(model, h)

    shifted = logits_c - np.max(logits_c)
    loss = float(np.log(np.exp(shifted).sum()) - shifted[label])

    d_logits = probs.copy()
    d_logits[label] -= 1.0
    grads = {
        "W_c": np.outer(d_logits, z),
        "b_c": d_logits,
    }
    dz = p["W_c"].T @ d_logits
    d_att = h @ dz
    da = att * (d_att - float(att @ d_att))
    grads["w"] = gated.T @ da
    d_gated = np.outer(da, p["w"])
    d_pre_v = d_gated * gate_s * (1.0 - gate_t**2)
    d_pre_u = d_gated * gate_t * gate_s * (1.0 - gate_s)
    grads["V"] = d_pre_v.T @ h
    grads["b_v"] = d_pre_v.sum(axis=0)
    grads["U"] = d_pre_u.T @ h
    grads["b_u"] = d_pre_u.sum(axis=0)
    return loss, grads


def _clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> None:
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm > 0:
        scale = max_norm / total
        for g in grads.values():
            g *= scale


class _Adam:
    def __init__(self, config: TrainConfig, params: dict[str, np.ndarray]):
        self.cfg = config
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        cfg = self.cfg
        self.t += 1
        for name in PARAM_ORDER:
            g = grads[name]
            self.m[name] = cfg.beta1 * self.m[name] + (1 - cfg.beta1) * g
            self.v[name] = cfg.beta2 * self.v[name] + (1 - cfg.beta2) * g * g
            m_hat = self.m[name] / (1 - cfg.beta1**self.t)
            v_hat = self.v[name] / (1 - cfg.beta2**self.t)
            params[name] -= cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)


def train(
    bags: list[tuple[np.ndarray, int]],
    config: TrainConfig,
    val_bags: list[tuple[np.ndarray, int]] | None = None,
    n_classes: int | None = None,
    d_hid: int | None = None,
):
    """Train on labeled bags; returns (model, per-epoch mean loss trace).

    With ``val_bags`` supplied, the returned model is the snapshot with the
    best validation accuracy (earliest epoch on ties); otherwise it is the
    final-epoch model.
    """
    config.validate()
    if not bags:
        raise ValidationError("no training bags")
    labels = sorted({label for _, label in bags})
    if len(labels) < 2:
        raise ValidationError("training data contains a single class")
    n_classes = n_classes or max(labels) + 1
    d_in = np.asarray(bags[0][0]).shape[1]
    model = init_model(d_in, d_hid or config.d_hid, n_classes, config.seed)

    rng = np.random.default_rng(config.seed + 1)
    optimizer = _Adam(config, model.params)
    trace = []
    best = None  # (val_acc, epoch, params snapshot)
    for epoch in range(config.epochs):
        order = rng.permutation(len(bags))
        epoch_loss = 0.0
        for idx in order:
            bag, label = bags[idx]
            loss, grads = loss_and_gradients(model, bag, label)
            if not np.isfinite(loss):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, bag {idx} (label {label})"
                )
            _clip_global_norm(grads, config.clip_norm)
            optimizer.step(model.params, grads)
            epoch_loss += loss
        trace.append(epoch_loss / len(bags))
        if val_bags:
            acc = evaluate_accuracy(model, val_bags)
            if best is None or acc > best[0]:
                best = (acc, epoch, copy.deepcopy(model.params))
    if best is not None:
        model = MILModel(model.d_in, model.d_hid, model.n_classes, best[2])
    model.validate()
    return model, trace


def predict_proba(model: MILModel, bag) -> np.ndarray:
    return forward(model, bag)[1]


def evaluate_accuracy(model: MILModel, bags: list[tuple[np.ndarray, int]]) -> float:
    correct = sum(
        int(np.argmax(predict_proba(model, bag))) == label for bag, label in bags
    )
    return correct / len(bags)


def stratified_split(labels, seed: int, fractions=(0.7, 0.1, 0.2)):
    """Seeded per-class split into (train, val, test) index lists."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    train_idx, val_idx, test_idx = [], [], []
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        idx = idx[rng.permutation(len(idx))]
        n = len(idx)
        n_test = max(1, int(round(fractions[2] * n))) if n >= 2 else 0
        n_val = int(round(fractions[1] * n))
        n_val = min(n_val, n - n_test - 1) if n - n_test > 1 else 0
        n_val = max(n_val, 0)
        test_idx.extend(idx[:n_test].tolist())
        val_idx.extend(idx[n_test : n_test + n_val].tolist())
        train_idx.extend(idx[n_test + n_val :].tolist())
    return sorted(train_idx), sorted(val_idx), sorted(test_idx)


def save_model(model: MILModel, path) -> None:
    model.validate()
    parts = [
        _VLEM_HEADER.pack(VLEM_MAGIC, VLEM_VERSION, model.d_in, model.d_hid, model.n_classes)
    ]
    for name in PARAM_ORDER:
        parts.append(np.ascontiguousarray(model.params[name], dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_model(path) -> MILModel:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _VLEM_HEADER.size:
        raise FormatError(f"{path}: file shorter than VLEM header")
    magic, version, d_in, d_hid, n_classes = _VLEM_HEADER.unpack_from(raw)
    if magic != VLEM_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VLEM_VERSION:
        raise FormatError(f"{path}: unsupported VLEM version {version}")
    shapes = param_shapes(d_in, d_hid, n_classes)
    off = _VLEM_HEADER.size
    params = {}
    for name in PARAM_ORDER:
        count = int(np.prod(shapes[name]))
        need = off + count * 4
        if len(raw) < need:
            raise FormatError(f"{path}: truncated parameter block {name}")
        params[name] = (
            np.frombuffer(raw, dtype="<f4", count=count, offset=off)
            .astype(np.float64)
            .reshape(shapes[name])
        )
        off = need
    model = MILModel(d_in, d_hid, n_classes, params)
    model.validate()
    return model
