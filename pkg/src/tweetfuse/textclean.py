"""Five-step tweet cleaning pipeline.

Order: emoticon removal, non-ASCII replacement, tokenization, punctuation
filtering, stopword removal. Character-level filters run on the raw string
before tokenizing so tokens never get silently split mid-stream. Surviving
tokens are pure ASCII alphanumerics in their original order and casing.
"""

from __future__ import annotations

import re
import string
from functools import lru_cache
from importlib import resources

TokenSequence = list[str]
StopwordList = frozenset[str]

# Unicode emoji blocks treated as emoticons (inclusive code point ranges).
EMOJI_RANGES = (
    (0x1F000, 0x1F0FF),  # mahjong / dominoes / playing cards
    (0x1F300, 0x1F5FF),  # symbols and pictographs
    (0x1F600, 0x1F64F),  # emoticon faces
    (0x1F680, 0x1F6FF),  # transport and map
    (0x1F700, 0x1F77F),
    (0x1F780, 0x1F7FF),
    (0x1F800, 0x1F8FF),
    (0x1F900, 0x1F9FF),  # supplemental symbols
    (0x1FA00, 0x1FAFF),
    (0x1F1E6, 0x1F1FF),  # regional indicators (flags)
    (0x2600, 0x26FF),    # miscellaneous symbols
    (0x2700, 0x27BF),    # dingbats
    (0x2B00, 0x2BFF),    # stars, arrows
    (0xFE00, 0xFE0F),    # variation selectors
)

_EMOJI_RE = re.compile(
    "[" + "".join(f"{chr(lo)}-{chr(hi)}" for lo, hi in EMOJI_RANGES) + "]"
)

_NON_ASCII_RE = re.compile(r"[^\x00-\x7f]")

# Strip ASCII punctuation plus control characters inside tokens; keeping
# anything else (unicode letters survive standalone use of the op).
_TOKEN_STRIP_RE = re.compile(r"[!-/:-@\[-`{-~\x00-\x1f\x7f]")

_PUNCT_CHARS = frozenset(string.punctuation)


def _read_data_lines(name: str) -> list[str]:
    text = resources.files("tweetfuse.data").joinpath(name).read_text("utf-8")
    lines = []
    for line in text.splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            lines.append(line)
    return lines


@lru_cache(maxsize=1)
def default_stopwords() -> StopwordList:
    """Bundled English stopword list, lowercased."""
    return frozenset(w.lower() for w in _read_data_lines("stopwords.txt"))


@lru_cache(maxsize=1)
def default_emoticons() -> tuple[str, ...]:
    """Bundled ASCII emoticon patterns (":)", ":-(", ...)."""
    return tuple(_read_data_lines("emoticons.txt"))


@lru_cache(maxsize=8)
def _emoticon_regex(patterns: tuple[str, ...]) -> re.Pattern:
    # Longest first so ":-)" wins over ":-"; a pattern only matches when not
    # flanked by a letter or digit, which keeps word interiors intact.
    ordered = sorted(patterns, key=len, reverse=True)
    body = "|".join(re.escape(p) for p in ordered)
    return re.compile(rf"(?<![A-Za-z0-9])(?:{body})(?![A-Za-z0-9])")


def strip_emoticons(text: str, patterns: tuple[str, ...] | None = None) -> str:
    """Remove emoji-block characters and listed ASCII emoticon patterns."""
    text = _EMOJI_RE.sub("", text)
    if patterns is None:
        patterns = default_emoticons()
    if patterns:
        text = _emoticon_regex(tuple(patterns)).sub("", text)
    return text


def replace_non_ascii(text: str) -> str:
    """Replace every code point above 127 with a single space."""
    return _NON_ASCII_RE.sub(" ", text)


def tokenize(text: str) -> TokenSequence:
    """Whitespace split with leading/trailing punctuation peeled into own tokens.

    "He said, stop." -> ["He", "said", ",", "stop", "."]
    """
    tokens: TokenSequence = []
    for chunk in text.split():
        lead = []
        while chunk and chunk[0] in _PUNCT_CHARS:
            lead.append(chunk[0])
            chunk = chunk[1:]
        trail = []
        while chunk and chunk[-1] in _PUNCT_CHARS:
            trail.append(chunk[-1])
            chunk = chunk[:-1]
        tokens.extend(lead)
        if chunk:
            tokens.append(chunk)
        tokens.extend(reversed(trail))
    return tokens


def remove_punctuation(tokens: TokenSequence) -> TokenSequence:
    """Drop punctuation-only tokens and strip punctuation inside the rest."""
    out = []
    for tok in tokens:
        stripped = _TOKEN_STRIP_RE.sub("", tok)
        if stripped:
            out.append(stripped)
    return out


def remove_stopwords(tokens: TokenSequence, stopwords: StopwordList) -> TokenSequence:
    """Remove tokens whose lowercase form is a stopword, keeping order."""
    return [tok for tok in tokens if tok.lower() not in stopwords]


def clean(text: str, stopwords: StopwordList | None = None) -> TokenSequence:
    """Full pipeline: emoticons, non-ASCII, tokenize, punctuation, stopwords."""
    if stopwords is None:
        stopwords = default_stopwords()
    text = strip_emoticons(text)
    text = replace_non_ascii(text)
    tokens = tokenize(text)
    tokens = remove_punctuation(tokens)
    return remove_stopwords(tokens, stopwords)
