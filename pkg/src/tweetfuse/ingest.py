"""Dataset ingestion: annotated tweet records, images and deterministic splits.

Annotations live in JSONL files (one object per line with keys ``tweet_id``,
``text``, ``image_path`` and ``labels``). Images are PNG/JPEG files on the
local filesystem; records without a usable image fall back to an all-black
placeholder so every example carries both modalities.
"""

from __future__ import annotations

import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Protocol, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ImageError, ParseError, SizeError, ValidationError

log = logging.getLogger(__name__)

# Fixed global label order: files, predictions and reports all use it.
LABEL_NAMES = (
    "TextOnlyInformative",
    "ImageOnlyInformative",
    "DirectedHate",
    "GeneralizedHate",
    "Sarcasm",
    "Allegation",
    "Justification",
    "Refutation",
    "Support",
    "Oppose",
)
NUM_LABELS = len(LABEL_NAMES)

IMAGE_SIDE = 300


@dataclass
class TweetRecord:
    """One annotated tweet: id, raw text, optional image ref, optional labels."""

    tweet_id: str
    text: str
    image_ref: Optional[str] = None
    labels: Optional[np.ndarray] = None  # shape (10,), values in {0, 1}


@dataclass
class DatasetSplit:
    train: list[TweetRecord]
    validation: list[TweetRecord]
    seed: int
    leftover: int = 0


class RecordFetcher(Protocol):
    """Source of raw annotation lines.

    The toolkit ships exactly one implementation (filesystem). Anything that
    yields ``(line_number, line)`` pairs can stand in, e.g. for tests.
    """

    def fetch(self) -> Iterator[tuple[int, str]]: ...


class FilesystemFetcher:
    """Reads JSONL annotation lines from a local file."""

    def __init__(self, path):
        self.path = Path(path)

    def fetch(self):
        with open(self.path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                yield lineno, line


def parse_label_vector(raw, where: str) -> np.ndarray:
    """Validate a 10-element binary label array and return it as int8."""
    if not isinstance(raw, (list, tuple)) or len(raw) != NUM_LABELS:
        raise ValidationError(f"{where}: labels must be an array of {NUM_LABELS} integers")
    values = []
    for v in raw:
        if isinstance(v, bool) or not isinstance(v, int) or v not in (0, 1):
            raise ValidationError(f"{where}: label values must be 0 or 1, got {v!r}")
        values.append(v)
    return np.asarray(values, dtype=np.int8)


def load_annotations(source) -> list[TweetRecord]:
    """Load tweet records from a JSONL file (or any RecordFetcher).

    Line order is preserved. Malformed lines raise ParseError naming the line
    number; duplicate ids and bad label arrays raise ValidationError.
    """
    fetcher = source if hasattr(source, "fetch") else FilesystemFetcher(source)
    records: list[TweetRecord] = []
    seen: set[str] = set()
    for lineno, line in fetcher.fetch():
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
        if not isinstance(obj, dict):
            raise ParseError(f"line {lineno}: expected a JSON object")

        tweet_id = obj.get("tweet_id")
        if not isinstance(tweet_id, str) or not tweet_id:
            raise ValidationError(f"line {lineno}: tweet_id must be a non-empty string")
        if tweet_id in seen:
            raise ValidationError(f"line {lineno}: duplicate tweet_id {tweet_id!r}")
        seen.add(tweet_id)

        text = obj.get("text")
        if not isinstance(text, str):
            raise ValidationError(f"line {lineno}: text must be a string")

        image_ref = obj.get("image_path")
        if image_ref is not None and not isinstance(image_ref, str):
            raise ValidationError(f"line {lineno}: image_path must be a string or null")

        raw_labels = obj.get("labels")
        labels = None
        if raw_labels is not None:
            labels = parse_label_vector(raw_labels, f"line {lineno}")

        records.append(TweetRecord(tweet_id, text, image_ref or None, labels))
    return records


def bilinear_resize(pixels: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample to (out_h, out_w) with half-pixel centers, edge clamp.

    Interpolation is computed as ``a + frac * (b - a)`` so constant images
    survive exactly.
    """
    pixels = np.asarray(pixels, dtype=np.float64)
    in_h, in_w = pixels.shape[:2]

    def axis_coords(n_out, n_in):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1)
        lo = np.floor(src).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, src - lo

    y0, y1, fy = axis_coords(out_h, in_h)
    x0, x1, fx = axis_coords(out_w, in_w)

    tail = (1,) * (pixels.ndim - 2)
    fx = fx.reshape((1, out_w) + tail)
    fy = fy.reshape((out_h, 1) + tail)

    top = pixels[y0][:, x0]
    top = top + fx * (pixels[y0][:, x1] - top)
    bot = pixels[y1][:, x0]
    bot = bot + fx * (pixels[y1][:, x1] - bot)
    return top + fy * (bot - top)


def load_image(image_ref, side: int = IMAGE_SIDE) -> np.ndarray:
    """Decode an RGB image file, bilinear-resize to side x side, scale to [0, 1].

    Grayscale input has its channel replicated; alpha channels are dropped.
    Missing or undecodable files raise ImageError carrying the ref.
    """
    path = Path(image_ref)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ImageError(image_ref, str(exc)) from exc
    try:
        with Image.open(io.BytesIO(raw)) as img:
            rgb = img.convert("RGB")
            pixels = np.asarray(rgb, dtype=np.float64)
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise ImageError(image_ref, f"undecodable image data ({exc})") from exc
    resized = bilinear_resize(pixels, side, side)
    return (resized / 255.0).astype(np.float32)


def placeholder_image(side: int = IMAGE_SIDE) -> np.ndarray:
    """All-zeros (black) image tensor used when a tweet has no image."""
    return np.zeros((side, side, 3), dtype=np.float32)


def resolve_image(record: TweetRecord, root=None, side: int = IMAGE_SIDE) -> np.ndarray:
    """Image tensor for a record, substituting the black placeholder.

    Total function: a missing ref yields the placeholder silently, a present
    but unloadable ref yields the placeholder plus a logged warning.
    """
    if not record.image_ref:
        return placeholder_image(side)
    ref = record.image_ref
    if root is not None and not Path(ref).is_absolute():
        ref = str(Path(root) / ref)
    try:
        return load_image(ref, side)
    except ImageError as exc:
        log.warning("tweet %s: %s; substituting black placeholder", record.tweet_id, exc)
        return placeholder_image(side)


def resolve_images(records: Sequence[TweetRecord], root=None, side: int = IMAGE_SIDE,
                   max_workers: int = 4) -> list[np.ndarray]:
    """resolve_image over a batch with bounded parallelism, input order kept."""
    if max_workers <= 1 or len(records) <= 1:
        return [resolve_image(r, root, side) for r in records]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(lambda r: resolve_image(r, root, side), records))


def split_dataset(records: Sequence[TweetRecord], train_n: int, val_n: int,
                  seed: int) -> DatasetSplit:
    """Deterministic seeded shuffle, then first train_n / next val_n records.

    Leftover records are discarded; their count is reported in the result and
    logged. All records must carry labels.
    """
    if train_n < 0 or val_n < 0:
        raise SizeError("train_n and val_n must be non-negative")
    if train_n + val_n > len(records):
        raise SizeError(
            f"requested {train_n} train + {val_n} validation records "
            f"but only {len(records)} are available"
        )
    for rec in records:
        if rec.labels is None:
            raise ValidationError(f"record {rec.tweet_id!r} has no labels; cannot split")

    perm = np.random.default_rng(seed).permutation(len(records))
    ordered = [records[i] for i in perm]
    train = ordered[:train_n]
    validation = ordered[train_n:train_n + val_n]
    leftover = len(records) - train_n - val_n
    if leftover:
        log.warning("discarding %d leftover records after %d/%d split",
                    leftover, train_n, val_n)
    return DatasetSplit(train=train, validation=validation, seed=seed, leftover=leftover)


def label_positive_rates(records: Sequence[TweetRecord]) -> np.ndarray:
    """Fraction of positive labels per column, for skew diagnostics."""
    if not records:
        raise ValidationError("cannot compute label rates of an empty record list")
    rows = []
    for rec in records:
        if rec.labels is None:
            raise ValidationError(f"record {rec.tweet_id!r} has no labels")
        rows.append(rec.labels)
    return np.asarray(rows, dtype=np.float64).mean(axis=0)
