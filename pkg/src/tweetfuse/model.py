"""Three-component network: text encoder, image encoder, fusion classifier.

Text branch: embedding + bidirectional LSTM, final hidden states of the two
directions concatenated into a 128-wide feature vector. Image branch: stacked
3x3 conv / ReLU / 2x2 max-pool stages followed by a dense projection to the
same width. Fusion head: dense layers over the 256-wide concatenation ending
in 10 independent sigmoid outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Sequence

import numpy as np

from . import nn
from .errors import ConfigError, InputError
from .ingest import NUM_LABELS
from .subword import EncodedText

BRANCH_DIM = 128


@dataclass
class ModelConfig:
    vocab_size: int
    max_len: int = 64
    embed_dim: int = 64
    recurrent_units: int = 64  # per direction
    conv_channels: tuple[int, ...] = (16, 32, 64)
    fusion_hidden: tuple[int, ...] = (128, 64)
    num_labels: int = NUM_LABELS
    branch_dim: int = BRANCH_DIM
    image_side: int = 300
    seed: int = 0
    dtype: str = "float32"
    strict_dims: bool = True  # enforce the production 128-wide branches

    def __post_init__(self):
        self.conv_channels = tuple(int(c) for c in self.conv_channels)
        self.fusion_hidden = tuple(int(h) for h in self.fusion_hidden)
        self.validate()

    def validate(self):
        if self.vocab_size < 1:
            raise ConfigError("vocab_size must be positive")
        if self.max_len < 1:
            raise ConfigError("max_len must be >= 1")
        if self.embed_dim < 1:
            raise ConfigError("embed_dim must be >= 1")
        if self.num_labels != NUM_LABELS:
            raise ConfigError(f"num_labels is fixed at {NUM_LABELS}")
        if 2 * self.recurrent_units != self.branch_dim:
            raise ConfigError(
                f"2 * recurrent_units ({self.recurrent_units}) must equal "
                f"branch_dim ({self.branch_dim})"
            )
        if self.strict_dims and self.branch_dim != BRANCH_DIM:
            raise ConfigError(
                f"branch_dim is fixed at {BRANCH_DIM}; "
                "set strict_dims=False only for reduced test builds"
            )
        if not self.conv_channels or any(c < 1 for c in self.conv_channels):
            raise ConfigError("conv_channels must be a non-empty list of positives")
        if any(h < 1 for h in self.fusion_hidden):
            raise ConfigError("fusion_hidden widths must be positive")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"unsupported dtype {self.dtype!r}")
        side = self.image_side
        for _ in self.conv_channels:
            side //= 2
        if side < 1:
            raise ConfigError(
                f"image_side {self.image_side} too small for "
                f"{len(self.conv_channels)} pooling stages"
            )

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    def conv_output_flat(self) -> int:
        side = self.image_side
        channels = 3
        for c in self.conv_channels:
            side //= 2
            channels = c
        return side * side * channels

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        d["fusion_hidden"] = list(self.fusion_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Canonical parameter names and shapes, in initialization order."""
    e = config.embed_dim
    h = config.recurrent_units
    shapes: dict[str, tuple[int, ...]] = {"embedding": (config.vocab_size, e)}
    for d in ("fwd", "bwd"):
        shapes[f"lstm_{d}_wx"] = (e, 4 * h)
        shapes[f"lstm_{d}_wh"] = (h, 4 * h)
        shapes[f"lstm_{d}_b"] = (4 * h,)
    cin = 3
    for k, cout in enumerate(config.conv_channels):
        shapes[f"conv{k}_w"] = (3, 3, cin, cout)
        shapes[f"conv{k}_b"] = (cout,)
        cin = cout
    shapes["img_proj_w"] = (config.conv_output_flat(), config.branch_dim)
    shapes["img_proj_b"] = (config.branch_dim,)
    prev = 2 * config.branch_dim
    for k, width in enumerate(config.fusion_hidden):
        shapes[f"fusion{k}_w"] = (prev, width)
        shapes[f"fusion{k}_b"] = (width,)
        prev = width
    shapes["out_w"] = (prev, config.num_labels)
    shapes["out_b"] = (config.num_labels,)
    return shapes


def init_params(config: ModelConfig) -> dict[str, np.ndarray]:
    """Seeded Glorot-uniform weights; zero biases except forget gates at 1.0."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    dtype = config.np_dtype
    h = config.recurrent_units
    params: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(config).items():
        if name.endswith("_b") or name == "out_b":
            bias = np.zeros(shape, dtype=dtype)
            if name.startswith("lstm_"):
                bias[h:2 * h] = 1.0  # forget gate
            params[name] = bias
        elif name == "embedding":
            params[name] = nn.glorot_uniform(rng, shape, shape[0], shape[1], dtype)
        elif name.startswith("conv"):
            fan_in = shape[0] * shape[1] * shape[2]
            fan_out = shape[0] * shape[1] * shape[3]
            params[name] = nn.glorot_uniform(rng, shape, fan_in, fan_out, dtype)
        else:
            params[name] = nn.glorot_uniform(rng, shape, shape[0], shape[1], dtype)
    return params


def batch_ids(batch: Sequence[EncodedText]) -> tuple[np.ndarray, np.ndarray]:
    """Stack EncodedText into (ids, lengths) arrays."""
    if not batch:
        return np.zeros((0, 1), dtype=np.int32), np.zeros(0, dtype=np.int64)
    ids = np.stack([np.asarray(e.ids, dtype=np.int32) for e in batch])
    lengths = np.asarray([e.actual_len for e in batch], dtype=np.int64)
    return ids, lengths


def _check_ids(params, ids):
    vocab_size = params["embedding"].shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab_size):
        raise InputError(f"token id out of range for vocab_size {vocab_size}")


def _text_forward(params, ids, lengths):
    _check_ids(params, ids)
    x, _ = nn.embedding_forward(params["embedding"], ids)
    h_fwd, cache_fwd = nn.lstm_forward(
        x, lengths, params["lstm_fwd_wx"], params["lstm_fwd_wh"],
        params["lstm_fwd_b"], reverse=False)
    h_bwd, cache_bwd = nn.lstm_forward(
        x, lengths, params["lstm_bwd_wx"], params["lstm_bwd_wh"],
        params["lstm_bwd_b"], reverse=True)
    feats = np.concatenate([h_fwd, h_bwd], axis=1)
    return feats, (ids, cache_fwd, cache_bwd)


def _text_backward(params, cache, dfeats):
    ids, cache_fwd, cache_bwd = cache
    hid = params["lstm_fwd_wh"].shape[0]
    dx_f, dwx_f, dwh_f, db_f = nn.lstm_backward(dfeats[:, :hid], cache_fwd)
    dx_b, dwx_b, dwh_b, db_b = nn.lstm_backward(dfeats[:, hid:], cache_bwd)
    dtable = nn.embedding_backward(dx_f + dx_b, ids, params["embedding"].shape[0])
    return {
        "embedding": dtable,
        "lstm_fwd_wx": dwx_f, "lstm_fwd_wh": dwh_f, "lstm_fwd_b": db_f,
        "lstm_bwd_wx": dwx_b, "lstm_bwd_wh": dwh_b, "lstm_bwd_b": db_b,
    }


def _num_conv_stages(params) -> int:
    k = 0
    while f"conv{k}_w" in params:
        k += 1
    return k


def _image_forward(params, images):
    x = images
    if x.ndim != 4 or x.shape[3] != 3:
        raise InputError(f"image batch must be (B, side, side, 3), got {x.shape}")
    stage_caches = []
    for k in range(_num_conv_stages(params)):
        y, conv_cache = nn.conv3x3_forward(x, params[f"conv{k}_w"], params[f"conv{k}_b"])
        r, relu_mask = nn.relu_forward(y)
        x, pool_cache = nn.maxpool2_forward(r)
        stage_caches.append((conv_cache, relu_mask, pool_cache))
    pre_flat_shape = x.shape
    flat = x.reshape(x.shape[0], -1)
    if flat.shape[1] != params["img_proj_w"].shape[0]:
        raise InputError(
            f"flattened conv output {flat.shape[1]} does not match projection "
            f"input {params['img_proj_w'].shape[0]}"
        )
    z, proj_cache = nn.dense_forward(flat, params["img_proj_w"], params["img_proj_b"])
    feats, proj_mask = nn.relu_forward(z)
    return feats, (stage_caches, pre_flat_shape, proj_cache, proj_mask)


def _image_backward(params, cache, dfeats):
    stage_caches, pre_flat_shape, proj_cache, proj_mask = cache
    grads = {}
    dz = nn.relu_backward(dfeats, proj_mask)
    dflat, grads["img_proj_w"], grads["img_proj_b"] = nn.dense_backward(dz, proj_cache)
    dx = dflat.reshape(pre_flat_shape)
    for k in range(len(stage_caches) - 1, -1, -1):
        conv_cache, relu_mask, pool_cache = stage_caches[k]
        dr = nn.maxpool2_backward(dx, pool_cache)
        dy = nn.relu_backward(dr, relu_mask)
        dx, grads[f"conv{k}_w"], grads[f"conv{k}_b"] = nn.conv3x3_backward(dy, conv_cache)
    return grads


def _num_fusion_layers(params) -> int:
    k = 0
    while f"fusion{k}_w" in params:
        k += 1
    return k


def _fusion_forward(params, feats):
    x = feats
    layer_caches = []
    for k in range(_num_fusion_layers(params)):
        z, dcache = nn.dense_forward(x, params[f"fusion{k}_w"], params[f"fusion{k}_b"])
        x, mask = nn.relu_forward(z)
        layer_caches.append((dcache, mask))
    logits, out_cache = nn.dense_forward(x, params["out_w"], params["out_b"])
    probs = nn.sigmoid(logits)
    return probs, (layer_caches, out_cache)


def _fusion_backward(params, cache, dlogits):
    layer_caches, out_cache = cache
    grads = {}
    dx, grads["out_w"], grads["out_b"] = nn.dense_backward(dlogits, out_cache)
    for k in range(len(layer_caches) - 1, -1, -1):
        dcache, mask = layer_caches[k]
        dz = nn.relu_backward(dx, mask)
        dx, grads[f"fusion{k}_w"], grads[f"fusion{k}_b"] = nn.dense_backward(dz, dcache)
    return grads, dx


def forward_train(params, ids, lengths, images):
    """Batched forward pass keeping caches for backprop.

    Returns (probs, cache); probs has one row of 10 sigmoid outputs per input.
    """
    if ids.shape[0] != images.shape[0]:
        raise InputError(
            f"text batch ({ids.shape[0]}) and image batch ({images.shape[0]}) "
            "must be the same length"
        )
    text_feats, text_cache = _text_forward(params, ids, lengths)
    image_feats, image_cache = _image_forward(params, images)
    fused = np.concatenate([text_feats, image_feats], axis=1)
    probs, fusion_cache = _fusion_forward(params, fused)
    branch = text_feats.shape[1]
    return probs, (text_cache, image_cache, fusion_cache, branch)


def backward(params, cache, dlogits):
    """Gradients of the loss with respect to every parameter group."""
    text_cache, image_cache, fusion_cache, branch = cache
    grads, dfused = _fusion_backward(params, fusion_cache, dlogits)
    grads.update(_text_backward(params, text_cache, dfused[:, :branch]))
    grads.update(_image_backward(params, image_cache, dfused[:, branch:]))
    return grads


# Public single-purpose entry points.

def text_branch_forward(params, batch: Sequence[EncodedText]) -> np.ndarray:
    """Per-example 128-wide text features, one row per input."""
    ids, lengths = batch_ids(batch)
    if not batch:
        return np.zeros((0, 2 * params["lstm_fwd_wh"].shape[0]),
                        dtype=params["embedding"].dtype)
    feats, _ = _text_forward(params, ids, lengths)
    return feats


def image_branch_forward(params, batch) -> np.ndarray:
    """Per-example 128-wide image features, one row per input."""
    if isinstance(batch, (list, tuple)):
        if not batch:
            return np.zeros((0, params["img_proj_w"].shape[1]),
                            dtype=params["img_proj_w"].dtype)
        images = np.stack([np.asarray(im) for im in batch])
    else:
        images = np.asarray(batch)
        if images.shape[0] == 0:
            return np.zeros((0, params["img_proj_w"].shape[1]),
                            dtype=params["img_proj_w"].dtype)
    images = images.astype(params["img_proj_w"].dtype, copy=False)
    feats, _ = _image_forward(params, images)
    return feats


def fusion_forward(params, text_feat, image_feat) -> np.ndarray:
    """Ten label probabilities for one (text, image) feature pair."""
    text_feat = np.asarray(text_feat)
    image_feat = np.asarray(image_feat)
    first = "fusion0_w" if "fusion0_w" in params else "out_w"
    branch = params[first].shape[0] // 2
    if text_feat.shape != (branch,) or image_feat.shape != (branch,):
        raise InputError(
            f"expected two feature vectors of length {branch}, got "
            f"{text_feat.shape} and {image_feat.shape}"
        )
    fused = np.concatenate([text_feat, image_feat])[None, :]
    probs, _ = _fusion_forward(params, fused.astype(params[first].dtype))
    return probs[0]


def forward(params, encoded_batch: Sequence[EncodedText], image_batch) -> np.ndarray:
    """Full model: N aligned (text, image) inputs -> N x 10 prediction matrix."""
    n_text = len(encoded_batch)
    n_img = len(image_batch) if isinstance(image_batch, (list, tuple)) \
        else np.asarray(image_batch).shape[0]
    if n_text != n_img:
        raise InputError(
            f"text batch ({n_text}) and image batch ({n_img}) "
            "must be the same length"
        )
    if n_text == 0:
        return np.zeros((0, NUM_LABELS), dtype=params["out_w"].dtype)
    images = np.stack([np.asarray(im) for im in image_batch]) \
        if isinstance(image_batch, (list, tuple)) else np.asarray(image_batch)
    ids, lengths = batch_ids(encoded_batch)
    images = images.astype(params["out_w"].dtype, copy=False)
    probs, _ = forward_train(params, ids, lengths, images)
    return probs
