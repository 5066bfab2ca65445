"""Multi-label training loop: BCE loss, Adam updates, epoch logging.

Images are streamed from disk per minibatch rather than preloaded, so memory
stays bounded by the batch size; texts are cleaned and encoded once up front.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import model as model_mod
from . import textclean
from .errors import (CheckpointError, ConfigError, DimensionMismatchError,
                     InputError, TrainingError, ValidationError)
from .ingest import DatasetSplit, resolve_images
from .model import ModelConfig, backward, forward_train, init_params, param_shapes
from .subword import SubwordVocabulary, encode

log = logging.getLogger(__name__)

LOG_EPS = 1e-7

_CKPT_MAGIC = b"TWFZCKPT"
_CKPT_VERSION = 1


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 0.001
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-7
    shuffle_seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        for name in ("adam_beta1", "adam_beta2"):
            beta = getattr(self, name)
            if not 0.0 < beta < 1.0:
                raise ConfigError(f"{name} must lie strictly between 0 and 1")


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            t=0,
        )


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: Optional[float]
    val_acc: Optional[float]

    def to_json(self) -> str:
        return json.dumps({
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "train_acc": self.train_acc,
            "val_loss": self.val_loss,
            "val_acc": self.val_acc,
        })


@dataclass
class FitResult:
    params: dict[str, np.ndarray]
    adam_state: AdamState
    logs: list[EpochLog] = field(default_factory=list)


def bce_loss(pred, target) -> float:
    """Mean binary cross-entropy over all entries, with log-clamped inputs."""
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise InputError(f"shape mismatch: pred {pred.shape} vs target {target.shape}")
    p = np.clip(pred.astype(np.float64), LOG_EPS, 1.0 - LOG_EPS)
    y = target.astype(np.float64)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def binary_accuracy(pred, target, cut: float = 0.5) -> float:
    """Fraction of entries where (pred >= cut) agrees with the binary target."""
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise InputError(f"shape mismatch: pred {pred.shape} vs target {target.shape}")
    return float(((pred >= cut) == (target == 1)).mean())


def adam_step(params, grads, state: AdamState, config: TrainConfig):
    """One Adam update with bias correction; returns (new_params, new_state)."""
    b1, b2 = config.adam_beta1, config.adam_beta2
    lr, eps = config.learning_rate, config.adam_epsilon
    t = state.t + 1
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in parameter group {name!r}")
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * (g * g)
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        new_params[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[name] = m
        new_v[name] = v
    return new_params, AdamState(m=new_m, v=new_v, t=t)


def encode_records(records, vocab: SubwordVocabulary, model_config: ModelConfig,
                   stopwords=None):
    """Clean + subword-encode record texts into (ids, lengths) arrays."""
    if stopwords is None:
        stopwords = textclean.default_stopwords()
    encoded = [encode(vocab, textclean.clean(r.text, stopwords), model_config.max_len)
               for r in records]
    return model_mod.batch_ids(encoded)


def _labels_matrix(records, dtype):
    rows = []
    for rec in records:
        if rec.labels is None:
            raise ValidationError(f"record {rec.tweet_id!r} has no labels")
        rows.append(rec.labels)
    return np.asarray(rows, dtype=dtype)


def _evaluate(params, ids, lengths, images_fn, labels, batch_size):
    loss_sum = 0.0
    correct = 0
    total = 0
    for start in range(0, len(labels), batch_size):
        sl = slice(start, start + batch_size)
        images = images_fn(sl)
        probs, _ = forward_train(params, ids[sl], lengths[sl], images)
        yb = labels[sl]
        loss_sum += bce_loss(probs, yb) * yb.size
        correct += int(((probs >= 0.5) == (yb == 1)).sum())
        total += yb.size
    return loss_sum / total, correct / total


def fit(split: DatasetSplit, vocab: SubwordVocabulary, config: TrainConfig,
        model_config: ModelConfig, *, images_root=None, stopwords=None,
        log_path=None, batch_hook: Optional[Callable] = None) -> FitResult:
    """Train the model on a dataset split.

    Per epoch: seeded shuffle, minibatches of batch_size (final partial batch
    kept), forward / BCE / backprop / Adam, then train and validation metrics
    appended to the epoch log (and to log_path as JSONL when given).
    """
    train = split.train
    if not train:
        raise InputError("empty train set")
    dtype = model_config.np_dtype
    side = model_config.image_side

    ids_tr, len_tr = encode_records(train, vocab, model_config, stopwords)
    y_tr = _labels_matrix(train, dtype)
    val = split.validation
    if val:
        ids_va, len_va = encode_records(val, vocab, model_config, stopwords)
        y_va = _labels_matrix(val, dtype)

    def load_images(records):
        return np.stack(resolve_images(records, images_root, side)).astype(dtype)

    params = init_params(model_config)
    state = AdamState.zeros_like(params)
    rng = np.random.default_rng(config.shuffle_seed)
    logs: list[EpochLog] = []
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(1, config.epochs + 1):
            perm = rng.permutation(len(train))
            loss_sum = 0.0
            correct = 0
            total = 0
            for start in range(0, len(perm), config.batch_size):
                batch_idx = perm[start:start + config.batch_size]
                batch_records = [train[i] for i in batch_idx]
                images = load_images(batch_records)
                yb = y_tr[batch_idx]
                probs, cache = forward_train(params, ids_tr[batch_idx],
                                             len_tr[batch_idx], images)
                loss_sum += bce_loss(probs, yb) * yb.size
                correct += int(((probs >= 0.5) == (yb == 1)).sum())
                total += yb.size
                dlogits = ((probs - yb) / yb.size).astype(dtype)
                grads = backward(params, cache, dlogits)
                params, state = adam_step(params, grads, state, config)
                if batch_hook is not None:
                    batch_hook(batch_records)
            if val:
                val_loss, val_acc = _evaluate(
                    params, ids_va, len_va,
                    lambda sl: load_images(val[sl]), y_va, config.batch_size)
            else:
                val_loss = val_acc = None
            entry = EpochLog(epoch, loss_sum / total, correct / total,
                             val_loss, val_acc)
            logs.append(entry)
            if log_fh:
                log_fh.write(entry.to_json() + "\n")
                log_fh.flush()
            log.info("epoch %d: train_loss=%.5f train_acc=%.4f val_loss=%s val_acc=%s",
                     epoch, entry.train_loss, entry.train_acc,
                     "-" if val_loss is None else f"{val_loss:.5f}",
                     "-" if val_acc is None else f"{val_acc:.4f}")
    finally:
        if log_fh:
            log_fh.close()
    return FitResult(params=params, adam_state=state, logs=logs)


# Checkpoint serialization: little-endian binary, config header as JSON, then
# named tensors as (name length, name, rank, dims, raw float32 values).

def _write_tensor(fh, name: str, arr: np.ndarray):
    encoded = name.encode("utf-8")
    fh.write(struct.pack("<H", len(encoded)))
    fh.write(encoded)
    fh.write(struct.pack("<B", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError("truncated checkpoint file")
    return data


def _read_tensor(fh):
    (name_len,) = struct.unpack("<H", _read_exact(fh, 2))
    name = _read_exact(fh, name_len).decode("utf-8")
    (rank,) = struct.unpack("<B", _read_exact(fh, 1))
    dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank))
    count = int(np.prod(dims)) if rank else 1
    data = _read_exact(fh, 4 * count)
    arr = np.frombuffer(data, dtype="<f4").reshape(dims)
    return name, arr


def save_checkpoint(params, state: AdamState, path, config: ModelConfig,
                    extra: Optional[dict] = None) -> None:
    """Write params + optimizer state; float32 on the wire, little-endian."""
    header = {
        "config": config.to_dict(),
        "adam_t": state.t,
        "extra": extra or {},
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    tensors: list[tuple[str, np.ndarray]] = list(params.items())
    tensors += [(f"adam.m/{k}", v) for k, v in state.m.items()]
    tensors += [(f"adam.v/{k}", v) for k, v in state.v.items()]
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<I", _CKPT_VERSION))
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors:
            _write_tensor(fh, name, arr)


def load_checkpoint(path):
    """Read a checkpoint; returns (params, AdamState, ModelConfig, extra).

    Tensor shapes are validated against the config stored in the header;
    any mismatch raises DimensionMismatchError.
    """
    with open(path, "rb") as fh:
        magic = fh.read(len(_CKPT_MAGIC))
        if magic != _CKPT_MAGIC:
            raise CheckpointError("not a checkpoint file (bad magic)")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != _CKPT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (header_len,) = struct.unpack("<I", _read_exact(fh, 4))
        try:
            header = json.loads(_read_exact(fh, header_len))
            config = ModelConfig.from_dict(header["config"])
        except (json.JSONDecodeError, KeyError, TypeError, ConfigError) as exc:
            raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
        (n_tensors,) = struct.unpack("<I", _read_exact(fh, 4))
        tensors = dict(_read_tensor(fh) for _ in range(n_tensors))

    dtype = config.np_dtype
    expected = param_shapes(config)
    params, m, v = {}, {}, {}
    for name, shape in expected.items():
        for prefix, target in (("", params), ("adam.m/", m), ("adam.v/", v)):
            key = prefix + name
            if key not in tensors:
                raise CheckpointError(f"checkpoint missing tensor {key!r}")
            arr = tensors[key]
            if arr.shape != shape:
                raise DimensionMismatchError(
                    f"tensor {key!r} has shape {arr.shape}, config implies {shape}"
                )
            target[name] = arr.astype(dtype)
    state = AdamState(m=m, v=v, t=int(header.get("adam_t", 0)))
    return params, state, config, header.get("extra", {})


def check_vocab_compatible(config: ModelConfig, vocab: SubwordVocabulary) -> None:
    if config.vocab_size != len(vocab):
        raise DimensionMismatchError(
            f"checkpoint vocab_size {config.vocab_size} does not match "
            f"vocabulary of size {len(vocab)}"
        )
