"""Command-line entry points wiring the pipeline into reproducible batch runs.

Commands: build-vocab, train, predict, evaluate, submit. Every run writes a
manifest (<output>.manifest.json) with the resolved configuration, input file
digests, the seed and timing, so results can be re-derived. Outputs are
written atomically: a failed run leaves no truncated files behind.

Configuration precedence: command-line flags > --config key=value file >
built-in defaults. The TWEETFUSE_DATA_DIR environment variable supplies a
base directory for relative input paths.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from contextlib import contextmanager
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, ParseError, TweetfuseError, ValidationError
from .evalpost import (ThresholdRule, binarize, compute_threshold,
                       mean_columnwise_auc, read_predictions_csv,
                       write_predictions_csv, write_submission_csv)
from .ingest import load_annotations, placeholder_image, resolve_images, split_dataset
from .model import ModelConfig, forward_train
from .subword import build_vocabulary, load_vocabulary, save_vocabulary
from .textclean import clean, default_stopwords
from .trainer import (TrainConfig, check_vocab_compatible, encode_records, fit,
                      load_checkpoint, save_checkpoint)

log = logging.getLogger(__name__)

ENV_DATA_DIR = "TWEETFUSE_DATA_DIR"

DEFAULT_TARGET_SIZE = 32768
DEFAULT_MAX_LEN = 64
DEFAULT_TRAIN_N = 5562
DEFAULT_VAL_N = 621


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def data_path(p) -> Path:
    """Resolve an input path, falling back to $TWEETFUSE_DATA_DIR for
    relative paths that do not exist from the working directory."""
    path = Path(p)
    if path.is_absolute() or path.exists():
        return path
    base = os.environ.get(ENV_DATA_DIR)
    if base:
        candidate = Path(base) / path
        if candidate.exists():
            return candidate
    return path


def parse_config_file(path) -> dict[str, str]:
    """Flat key = value file; '#' starts a comment."""
    cfg: dict[str, str] = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"{path}: line {lineno}: expected key = value")
        key, value = line.split("=", 1)
        cfg[key.strip()] = value.strip().strip('"')
    return cfg


def _as_bool(s: str) -> bool:
    if s.lower() in ("1", "true", "yes", "on"):
        return True
    if s.lower() in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {s!r}")


def _as_int_list(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.split(",") if x.strip())


def _resolve(flag_value, cfg: dict, key: str, default, conv=None):
    if flag_value is not None:
        return flag_value
    if key in cfg:
        return conv(cfg[key]) if conv else cfg[key]
    return default


@contextmanager
def atomic_output(path):
    """Yield a temp path; move it into place only if the block succeeds."""
    path = Path(path)
    if path.parent != Path(""):
        path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    try:
        yield tmp
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def write_manifest(primary_output, command: str, config: dict, inputs,
                   outputs, seed, started_at: str, duration: float) -> Path:
    manifest = {
        "command": command,
        "config": config,
        "inputs": {str(p): _sha256(Path(p)) for p in inputs},
        "outputs": [str(p) for p in outputs],
        "seed": seed,
        "started_at": started_at,
        "duration_s": round(duration, 6),
        "version": __version__,
    }
    path = Path(str(primary_output) + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")
    return path


class _Run:
    """Tracks timing and inputs/outputs for the manifest of one command."""

    def __init__(self, command: str, seed):
        self.command = command
        self.seed = seed
        self.started_at = datetime.now(timezone.utc).isoformat()
        self.t0 = time.monotonic()
        self.inputs: list[Path] = []
        self.outputs: list[Path] = []

    def finish(self, primary_output, config: dict) -> Path:
        return write_manifest(primary_output, self.command, config,
                              self.inputs, self.outputs, self.seed,
                              self.started_at, time.monotonic() - self.t0)


def _model_config(cfg: dict, vocab_size: int, seed: int, max_len: int) -> ModelConfig:
    return ModelConfig(
        vocab_size=vocab_size,
        max_len=max_len,
        embed_dim=_resolve(None, cfg, "embed_dim", 64, int),
        recurrent_units=_resolve(None, cfg, "recurrent_units", 64, int),
        conv_channels=_resolve(None, cfg, "conv_channels", (16, 32, 64), _as_int_list),
        fusion_hidden=_resolve(None, cfg, "fusion_hidden", (128, 64), _as_int_list),
        branch_dim=_resolve(None, cfg, "branch_dim", 128, int),
        image_side=_resolve(None, cfg, "image_side", 300, int),
        strict_dims=_resolve(None, cfg, "strict_dims", True, _as_bool),
        dtype=_resolve(None, cfg, "dtype", "float32"),
        seed=seed,
    )


def cmd_build_vocab(args) -> int:
    cfg = parse_config_file(args.config) if args.config else {}
    seed = _resolve(args.seed, cfg, "seed", 0, int)
    target_size = _resolve(args.target_size, cfg, "target_size",
                           DEFAULT_TARGET_SIZE, int)
    max_len = _resolve(args.max_len, cfg, "max_len", DEFAULT_MAX_LEN, int)
    run = _Run("build-vocab", seed)

    annotations = data_path(args.annotations)
    run.inputs.append(annotations)
    records = load_annotations(annotations)
    stopwords = default_stopwords()
    corpus = [clean(r.text, stopwords) for r in records]
    vocab = build_vocabulary(corpus, target_size)
    out = Path(args.out)
    with atomic_output(out) as tmp:
        save_vocabulary(vocab, tmp)
    run.outputs.append(out)
    log.info("built vocabulary of %d units (target %d) from %d records",
             len(vocab), target_size, len(records))
    run.finish(out, {"target_size": target_size, "max_len": max_len,
                     "units": len(vocab)})
    return 0


def cmd_train(args) -> int:
    cfg = parse_config_file(args.config) if args.config else {}
    seed = _resolve(args.seed, cfg, "seed", 0, int)
    epochs = _resolve(args.epochs, cfg, "epochs", 10, int)
    batch_size = _resolve(args.batch_size, cfg, "batch_size", 32, int)
    train_n = _resolve(args.train_n, cfg, "train_n", DEFAULT_TRAIN_N, int)
    val_n = _resolve(args.val_n, cfg, "val_n", DEFAULT_VAL_N, int)
    max_len = _resolve(None, cfg, "max_len", DEFAULT_MAX_LEN, int)
    learning_rate = _resolve(None, cfg, "learning_rate", 0.001, float)
    run = _Run("train", seed)

    annotations = data_path(args.annotations)
    vocab_path = data_path(args.vocab)
    images_dir = data_path(args.images_dir)
    run.inputs += [annotations, vocab_path]

    records = load_annotations(annotations)
    vocab = load_vocabulary(vocab_path)
    split = split_dataset(records, train_n, val_n, seed)
    model_config = _model_config(cfg, len(vocab), seed, max_len)
    train_config = TrainConfig(epochs=epochs, batch_size=batch_size,
                               learning_rate=learning_rate, shuffle_seed=seed)

    out_ckpt = Path(args.out_checkpoint)
    logs_path = Path(args.logs) if args.logs else Path(str(out_ckpt) + ".logs.jsonl")
    with atomic_output(logs_path) as logs_tmp, atomic_output(out_ckpt) as ckpt_tmp:
        result = fit(split, vocab, train_config, model_config,
                     images_root=images_dir, log_path=logs_tmp)
        extra = {
            "vocab_path": str(vocab_path),
            "vocab_sha256": _sha256(vocab_path),
            "vocab_size": len(vocab),
        }
        save_checkpoint(result.params, result.adam_state, ckpt_tmp,
                        model_config, extra)
    run.outputs += [out_ckpt, logs_path]
    final = result.logs[-1]
    log.info("trained %d epochs: train_loss=%.5f train_acc=%.4f",
             final.epoch, final.train_loss, final.train_acc)
    run.finish(out_ckpt, {
        "epochs": epochs, "batch_size": batch_size,
        "learning_rate": learning_rate, "train_n": train_n, "val_n": val_n,
        "leftover": split.leftover, "model": model_config.to_dict(),
    })
    return 0


def cmd_predict(args) -> int:
    cfg = parse_config_file(args.config) if args.config else {}
    seed = _resolve(args.seed, cfg, "seed", 0, int)
    batch_size = _resolve(None, cfg, "batch_size", 32, int)
    run = _Run("predict", seed)

    ckpt_path = data_path(args.checkpoint)
    run.inputs.append(ckpt_path)
    params, _, model_config, extra = load_checkpoint(ckpt_path)

    vocab_arg = args.vocab or extra.get("vocab_path")
    if not vocab_arg:
        raise ConfigError("checkpoint does not reference a vocabulary; pass --vocab")
    vocab_path = data_path(vocab_arg)
    run.inputs.append(vocab_path)
    vocab = load_vocabulary(vocab_path)
    check_vocab_compatible(model_config, vocab)

    annotations = data_path(args.annotations)
    run.inputs.append(annotations)
    records = load_annotations(annotations)
    images_dir = data_path(args.images_dir)

    ids, lengths = encode_records(records, vocab, model_config)
    dtype = model_config.np_dtype
    chunks = []
    ablation_chunks = []
    for start in range(0, len(records), batch_size):
        batch = records[start:start + batch_size]
        images = np.stack(resolve_images(batch, images_dir,
                                         model_config.image_side)).astype(dtype)
        sl = slice(start, start + len(batch))
        probs, _ = forward_train(params, ids[sl], lengths[sl], images)
        chunks.append(probs)
        if args.ablation_report:
            black = np.stack([placeholder_image(model_config.image_side)] *
                             len(batch)).astype(dtype)
            ablated, _ = forward_train(params, ids[sl], lengths[sl], black)
            ablation_chunks.append(np.abs(probs - ablated))
    matrix = np.concatenate(chunks) if chunks else np.zeros((0, 10))

    out_csv = Path(args.out_csv)
    with atomic_output(out_csv) as tmp:
        write_predictions_csv(tmp, [r.tweet_id for r in records], matrix)
    run.outputs.append(out_csv)

    if args.ablation_report:
        deltas = np.concatenate(ablation_chunks) if ablation_chunks \
            else np.zeros((0, 10))
        report = {
            "mean_abs_delta_per_column": deltas.mean(axis=0).tolist()
            if len(deltas) else None,
            "mean_abs_delta": float(deltas.mean()) if len(deltas) else None,
            "rows": int(len(deltas)),
        }
        ab_path = Path(args.ablation_report)
        with atomic_output(ab_path) as tmp:
            Path(tmp).write_text(json.dumps(report, indent=2) + "\n",
                                 encoding="utf-8")
        run.outputs.append(ab_path)

    log.info("wrote %d prediction rows to %s", len(records), out_csv)
    run.finish(out_csv, {"batch_size": batch_size,
                         "model": model_config.to_dict()})
    return 0


def cmd_evaluate(args) -> int:
    cfg = parse_config_file(args.config) if args.config else {}
    seed = _resolve(args.seed, cfg, "seed", 0, int)
    bias = _resolve(args.bias, cfg, "bias", 0.025, float)
    scope = _resolve(args.scope, cfg, "scope", "global")
    run = _Run("evaluate", seed)

    pred_path = data_path(args.predictions_csv)
    annotations = data_path(args.annotations)
    run.inputs += [pred_path, annotations]

    tweet_ids, matrix = read_predictions_csv(pred_path)
    if not tweet_ids:
        raise ValidationError("predictions file contains no rows")
    records = {r.tweet_id: r for r in load_annotations(annotations)}
    unmatched = [t for t in tweet_ids if t not in records or records[t].labels is None]
    if unmatched:
        shown = ", ".join(unmatched[:10])
        raise ValidationError(
            f"{len(unmatched)} prediction ids have no labeled annotation "
            f"(first {min(10, len(unmatched))}: {shown})"
        )
    labels = np.asarray([records[t].labels for t in tweet_ids])

    report = mean_columnwise_auc(matrix, labels)
    rule = ThresholdRule(bias=bias, scope=scope)
    threshold = compute_threshold(matrix, rule)
    payload = report.to_dict()
    payload["threshold"] = threshold if np.isscalar(threshold) \
        else np.asarray(threshold).tolist()
    payload["predicted_positive_rate_per_column"] = \
        binarize(matrix, threshold).mean(axis=0).tolist()
    text = json.dumps(payload, indent=2)
    print(text)

    out = Path(args.out) if args.out else Path(str(pred_path) + ".metrics.json")
    with atomic_output(out) as tmp:
        Path(tmp).write_text(text + "\n", encoding="utf-8")
    run.outputs.append(out)
    run.finish(out, {"bias": bias, "scope": scope})
    return 0


def cmd_submit(args) -> int:
    cfg = parse_config_file(args.config) if args.config else {}
    seed = _resolve(args.seed, cfg, "seed", 0, int)
    bias = _resolve(args.bias, cfg, "bias", 0.025, float)
    scope = _resolve(args.scope, cfg, "scope", "global")
    run = _Run("submit", seed)

    pred_path = data_path(args.predictions_csv)
    run.inputs.append(pred_path)
    tweet_ids, matrix = read_predictions_csv(pred_path)
    if not tweet_ids:
        raise ValidationError("predictions file contains no rows")

    rule = ThresholdRule(bias=bias, scope=scope)
    threshold = compute_threshold(matrix, rule)
    binary = binarize(matrix, threshold)

    out_csv = Path(args.out_csv)
    with atomic_output(out_csv) as tmp:
        write_submission_csv(tmp, tweet_ids, binary)
    run.outputs.append(out_csv)
    log.info("binarized %d rows at threshold %s", len(tweet_ids), threshold)
    run.finish(out_csv, {
        "bias": bias, "scope": scope,
        "threshold": threshold if np.isscalar(threshold)
        else np.asarray(threshold).tolist(),
    })
    return 0


def _add_common(sp):
    sp.add_argument("--config", default=None, help="key = value settings file")
    sp.add_argument("--seed", type=int, default=None, help="run seed (default 0)")
    sp.add_argument("--quiet", action="store_true", help="only warnings and errors")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tweetfuse",
        description="Multimodal multi-label tweet classification toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-vocab", help="train a subword vocabulary from a corpus")
    p.add_argument("annotations", help="JSONL annotations file")
    p.add_argument("out", help="output vocabulary file")
    p.add_argument("--target-size", type=int, default=None)
    p.add_argument("--max-len", type=int, default=None)
    _add_common(p)
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("train", help="train the classifier")
    p.add_argument("annotations")
    p.add_argument("images_dir")
    p.add_argument("vocab")
    p.add_argument("out_checkpoint")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--train-n", type=int, default=None)
    p.add_argument("--val-n", type=int, default=None)
    p.add_argument("--logs", default=None, help="epoch log JSONL path")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="write label probabilities as CSV")
    p.add_argument("checkpoint")
    p.add_argument("annotations")
    p.add_argument("images_dir")
    p.add_argument("out_csv")
    p.add_argument("--vocab", default=None,
                   help="override the vocabulary referenced by the checkpoint")
    p.add_argument("--ablation-report", default=None,
                   help="also write a black-image ablation diagnostic JSON")
    _add_common(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="mean column-wise ROC AUC of predictions")
    p.add_argument("predictions_csv")
    p.add_argument("annotations")
    p.add_argument("--bias", type=float, default=None)
    p.add_argument("--scope", choices=["global", "per_column"], default=None)
    p.add_argument("--out", default=None, help="metrics JSON path")
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("submit", help="binarize predictions with the median-bias rule")
    p.add_argument("predictions_csv")
    p.add_argument("out_csv")
    p.add_argument("--bias", type=float, default=None)
    p.add_argument("--scope", choices=["global", "per_column"], default=None)
    _add_common(p)
    p.set_defaults(func=cmd_submit)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except TweetfuseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
