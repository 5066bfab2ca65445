"""Corpus-trained subword codec.

Byte-pair-merge training over cleaned token sequences: units start as the
256 single bytes (plus a padding unit at id 0) and the most frequent adjacent
pair is merged repeatedly until the target size is reached or no pair occurs
at least twice. Encoding is greedy longest-match with single-byte fallback,
so any string is encodable and decoding is lossless.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DecodeError, InputError, ParseError

PAD_ID = 0
MIN_VOCAB = 257  # padding + 256 byte fallbacks

_VOCAB_HEADER = "subword-vocab v1"


@dataclass
class SubwordVocabulary:
    """Ordered subword units; id 0 is padding, ids 1..256 the byte fallbacks."""

    units: list[bytes]
    target_size: int
    _unit_to_id: dict[bytes, int] = field(init=False, repr=False)
    _max_unit_len: int = field(init=False, repr=False)

    def __post_init__(self):
        if len(self.units) < MIN_VOCAB:
            raise ConfigError(f"vocabulary needs at least {MIN_VOCAB} units")
        if self.units[0] != b"":
            raise ConfigError("unit 0 must be the empty padding unit")
        for b in range(256):
            if self.units[1 + b] != bytes([b]):
                raise ConfigError(f"unit {1 + b} must be the byte fallback {b:#04x}")
        if len(set(self.units)) != len(self.units):
            raise ConfigError("unit strings must be unique")
        if len(self.units) > self.target_size:
            raise ConfigError("more units than target_size")
        self._unit_to_id = {u: i for i, u in enumerate(self.units)}
        self._max_unit_len = max(len(u) for u in self.units)

    def __len__(self):
        return len(self.units)


@dataclass
class EncodedText:
    """Fixed-length id array; positions at and beyond actual_len hold PAD_ID."""

    ids: np.ndarray
    actual_len: int


def _merge_pair(seq: tuple[bytes, ...], pair: tuple[bytes, bytes],
                merged: bytes) -> tuple[bytes, ...]:
    out = []
    i = 0
    n = len(seq)
    while i < n:
        if i + 1 < n and seq[i] == pair[0] and seq[i + 1] == pair[1]:
            out.append(merged)
            i += 2
        else:
            out.append(seq[i])
            i += 1
    return tuple(out)


def build_vocabulary(corpus, target_size: int) -> SubwordVocabulary:
    """Train a subword vocabulary from a corpus of token sequences.

    Merges never cross token boundaries. Ties on pair frequency break toward
    the lexicographically smallest merged byte string, which makes training a
    pure function of (corpus, target_size).
    """
    if target_size < MIN_VOCAB:
        raise ConfigError(
            f"target_size must be at least {MIN_VOCAB} (padding + byte fallbacks), "
            f"got {target_size}"
        )
    token_counts: Counter[str] = Counter()
    for tokens in corpus:
        token_counts.update(tokens)
    if not token_counts:
        raise InputError("cannot build a vocabulary from an empty corpus")

    # Unique token forms as sequences of byte units, weighted by frequency.
    words: dict[tuple[bytes, ...], int] = {}
    for tok, cnt in token_counts.items():
        seq = tuple(bytes([b]) for b in tok.encode("utf-8"))
        if seq:
            words[seq] = words.get(seq, 0) + cnt

    units: list[bytes] = [b""] + [bytes([b]) for b in range(256)]
    existing = set(units)

    while len(units) < target_size:
        pair_counts: Counter[tuple[bytes, bytes]] = Counter()
        for seq, cnt in words.items():
            for a, b in zip(seq, seq[1:]):
                pair_counts[(a, b)] += cnt
        if not pair_counts:
            break
        best_count = max(pair_counts.values())
        if best_count < 2:
            break
        best = min(
            (p for p, c in pair_counts.items() if c == best_count),
            key=lambda p: (p[0] + p[1], p[0], p[1]),
        )
        merged = best[0] + best[1]
        if merged in existing:
            # Same byte string reachable through a different split; merging
            # again would duplicate a unit. Rewrite occurrences and continue.
            pass
        else:
            units.append(merged)
            existing.add(merged)
        new_words: dict[tuple[bytes, ...], int] = {}
        for seq, cnt in words.items():
            ns = _merge_pair(seq, best, merged)
            new_words[ns] = new_words.get(ns, 0) + cnt
        words = new_words

    return SubwordVocabulary(units=units, target_size=target_size)


def encode(vocab: SubwordVocabulary, tokens, max_len: int) -> EncodedText:
    """Greedy longest-match encoding of space-joined tokens.

    The result is truncated to max_len and padded with id 0; actual_len is the
    pre-truncation unit count capped at max_len.
    """
    if max_len < 1:
        raise ConfigError(f"max_len must be >= 1, got {max_len}")
    data = " ".join(tokens).encode("utf-8")
    table = vocab._unit_to_id
    ids: list[int] = []
    i = 0
    n = len(data)
    while i < n:
        length = min(vocab._max_unit_len, n - i)
        while length > 1 and data[i:i + length] not in table:
            length -= 1
        ids.append(table[data[i:i + length]])
        i += length
    actual = min(len(ids), max_len)
    arr = np.zeros(max_len, dtype=np.int32)
    arr[:actual] = ids[:actual]
    return EncodedText(ids=arr, actual_len=actual)


def decode(vocab: SubwordVocabulary, encoded: EncodedText) -> str:
    """Concatenate unit strings for ids before actual_len, as UTF-8."""
    ids = np.asarray(encoded.ids)[:encoded.actual_len]
    if ids.size and (ids.min() < 0 or ids.max() >= len(vocab.units)):
        raise DecodeError(
            f"id out of range for vocabulary of {len(vocab.units)} units"
        )
    raw = b"".join(vocab.units[int(i)] for i in ids)
    return raw.decode("utf-8", errors="replace")


def _escape_unit(unit: bytes) -> str:
    out = []
    for b in unit:
        if b == 0x5C:
            out.append("\\\\")
        elif b == 0x0A:
            out.append("\\n")
        elif b == 0x09:
            out.append("\\t")
        elif 0x20 <= b <= 0x7E:
            out.append(chr(b))
        else:
            out.append(f"\\x{b:02x}")
    return "".join(out)


def _unescape_unit(line: str, lineno: int) -> bytes:
    out = bytearray()
    i = 0
    n = len(line)
    while i < n:
        ch = line[i]
        if ch != "\\":
            code = ord(ch)
            if code > 0x7E or code < 0x20:
                raise ParseError(f"line {lineno}: unescaped byte {code:#x}")
            out.append(code)
            i += 1
            continue
        if i + 1 >= n:
            raise ParseError(f"line {lineno}: dangling escape")
        nxt = line[i + 1]
        if nxt == "\\":
            out.append(0x5C)
            i += 2
        elif nxt == "n":
            out.append(0x0A)
            i += 2
        elif nxt == "t":
            out.append(0x09)
            i += 2
        elif nxt == "x":
            if i + 3 >= n:
                raise ParseError(f"line {lineno}: truncated \\x escape")
            try:
                out.append(int(line[i + 2:i + 4], 16))
            except ValueError as exc:
                raise ParseError(f"line {lineno}: bad \\x escape") from exc
            i += 4
        else:
            raise ParseError(f"line {lineno}: unknown escape \\{nxt}")
    return bytes(out)


def save_vocabulary(vocab: SubwordVocabulary, path) -> None:
    lines = [f"{_VOCAB_HEADER} {vocab.target_size}"]
    lines.extend(_escape_unit(u) for u in vocab.units)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_vocabulary(path) -> SubwordVocabulary:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError("empty vocabulary file")
    head = lines[0].rsplit(" ", 1)
    if len(head) != 2 or head[0] != _VOCAB_HEADER:
        raise ParseError(f"bad vocabulary header: {lines[0]!r}")
    try:
        target_size = int(head[1])
    except ValueError as exc:
        raise ParseError(f"bad target size in header: {head[1]!r}") from exc
    units = [_unescape_unit(line, k + 2) for k, line in enumerate(lines[1:])]
    try:
        return SubwordVocabulary(units=units, target_size=target_size)
    except ConfigError as exc:
        raise ParseError(f"invalid vocabulary file: {exc}") from exc
