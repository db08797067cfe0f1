"""Raw-text curation: modification stages, quality filters, passage splitting.

Every document goes through the modification stages in a fixed order
(strip_html, normalize_unicode, remove_boilerplate, collapse_whitespace),
then through the quality filters in a fixed order (word_count, whitespace,
repeating_ngram, numerical_dominance). The first failing filter
short-circuits and is recorded as the sole trigger. Retained documents are
split into passages. A CurationReport is emitted for every input document,
in input order.

All stages and filters are pure functions; per-document work is safe to
parallelize as long as report order is restored.
"""
from __future__ import annotations

import json
import math
import re
import unicodedata
from dataclasses import dataclass, field
from html.parser import HTMLParser
from pathlib import Path
from typing import Iterable, Iterator

STAGE_ORDER = ("strip_html", "normalize_unicode", "remove_boilerplate", "collapse_whitespace")
FILTER_ORDER = ("word_count", "whitespace", "repeating_ngram", "numerical_dominance")

DECODE_ERROR = "decode_error"


class IoError(Exception):
    """Input file unreadable."""


@dataclass(frozen=True)
class RawDoc:
    id: str
    source_url: str
    text: str
    fetched_at: str


@dataclass(frozen=True)
class FilterConfig:
    min_word_count: int = 50
    max_whitespace_ratio: float = 0.4
    ngram_n: int = 3
    max_ngram_repetition_ratio: float = 0.3
    max_numeric_ratio: float = 0.3
    boilerplate_patterns: tuple[str, ...] = ()
    passage_target_words: int = 150

    def __post_init__(self) -> None:
        if self.min_word_count < 1:
            raise ValueError("min_word_count must be >= 1")
        if self.ngram_n < 2:
            raise ValueError("ngram_n must be >= 2")
        for name in ("max_whitespace_ratio", "max_ngram_repetition_ratio", "max_numeric_ratio"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be within [0,1], got {v}")


@dataclass(frozen=True)
class CurationReport:
    doc_id: str
    stages_applied: tuple[str, ...]
    filters_triggered: tuple[str, ...]
    retained: bool
    words_before: int
    words_after: int


@dataclass(frozen=True)
class Passage:
    id: str
    doc_id: str
    text: str
    ordinal: int


@dataclass
class CurationSummary:
    docs_in: int = 0
    docs_retained: int = 0
    passages_out: int = 0
    filter_triggers: dict[str, int] = field(default_factory=dict)

    @property
    def retention_ratio(self) -> float | None:
        if self.docs_in == 0:
            return None
        return self.docs_retained / self.docs_in


# ---------------------------------------------------------------------------
# Modification stages
# ---------------------------------------------------------------------------

class _TextExtractor(HTMLParser):
    """Collects text content, skipping script/style element bodies.

    The caller masks every ``&`` as ``&amp;`` before feeding, so entity
    tokenization reduces to the amp reference and all references in the
    source pass through verbatim. Decoding them would not be idempotent
    (``&amp;lt;`` would turn into a tag on a second pass).
    """

    def __init__(self) -> None:
        super().__init__(convert_charrefs=False)
        self.parts: list[str] = []
        self._skip_depth = 0

    def handle_starttag(self, tag: str, attrs) -> None:
        if tag in ("script", "style"):
            self._skip_depth += 1

    def handle_endtag(self, tag: str) -> None:
        if tag in ("script", "style") and self._skip_depth:
            self._skip_depth -= 1

    def handle_data(self, data: str) -> None:
        if not self._skip_depth:
            self.parts.append(data)

    def handle_entityref(self, name: str) -> None:
        if not self._skip_depth:
            self.parts.append("&" if name == "amp" else f"&{name};")

    def handle_charref(self, name: str) -> None:
        if not self._skip_depth:
            self.parts.append(f"&#{name};")


def _remove_control_chars(text: str) -> str:
    """Drop control (Cc) and format (Cf) characters, keeping newline/tab."""
    return "".join(
        ch
        for ch in text
        if ch in ("\n", "\t") or unicodedata.category(ch) not in ("Cc", "Cf")
    )


def _extract_once(text: str) -> str:
    parser = _TextExtractor()
    parser.feed(text.replace("&", "&amp;"))
    parser.close()
    return "".join(parser.parts)


def strip_html(text: str) -> str:
    """Drop markup, keep text content in document order.

    Script and style element contents are removed entirely. Malformed
    markup is handled leniently: a ``<`` that does not open tag syntax
    stays literal text. Control characters are dropped up front and the
    extraction runs to a fixpoint, so removing a tag can never fabricate
    new tag syntax on a repeat run.
    """
    text = _remove_control_chars(text)
    while True:
        out = _extract_once(text)
        if out == text:
            return out
        text = out


def normalize_unicode(text: str) -> str:
    """Canonical composition plus removal of zero-width/control characters.

    Newline and tab survive; every other control (Cc) and format (Cf)
    character is dropped before NFC normalization.
    """
    return unicodedata.normalize("NFC", _remove_control_chars(text))


_SPACE_RUN = re.compile(r"[ \t]+")
_NEWLINE_RUN = re.compile(r"\n{3,}")


def collapse_whitespace(text: str) -> str:
    """Single-space runs of spaces/tabs, cap blank lines at one, trim ends."""
    text = _SPACE_RUN.sub(" ", text)
    text = _NEWLINE_RUN.sub("\n\n", text)
    return text.strip()


def remove_boilerplate(text: str, patterns: Iterable[str]) -> str:
    """Drop lines that exactly match (after trim) a configured pattern."""
    pats = {p.strip() for p in patterns}
    if not pats:
        return text
    return "\n".join(line for line in text.split("\n") if line.strip() not in pats)


def apply_modifications(text: str, cfg: FilterConfig) -> str:
    text = strip_html(text)
    text = normalize_unicode(text)
    text = remove_boilerplate(text, cfg.boilerplate_patterns)
    text = collapse_whitespace(text)
    return text


# ---------------------------------------------------------------------------
# Quality filters (True = pass / keep)
# ---------------------------------------------------------------------------

def word_count(text: str) -> int:
    """A word is a maximal non-whitespace run."""
    return len(text.split())


def word_count_filter(text: str, cfg: FilterConfig) -> bool:
    return word_count(text) >= cfg.min_word_count


def whitespace_filter(text: str, cfg: FilterConfig) -> bool:
    if not text:
        return False
    ws = sum(1 for ch in text if ch.isspace())
    return ws / len(text) <= cfg.max_whitespace_ratio


def repeating_ngram_filter(text: str, cfg: FilterConfig) -> bool:
    r = ngram_repetition_ratio(text, cfg.ngram_n)
    return r <= cfg.max_ngram_repetition_ratio


def ngram_repetition_ratio(text: str, n: int) -> float:
    """1 - distinct/total over word n-grams; 0.0 when fewer than n words."""
    words = text.split()
    total = len(words) - n + 1
    if total <= 0:
        return 0.0
    distinct = len({tuple(words[i : i + n]) for i in range(total)})
    return 1.0 - distinct / total


def numerical_dominance_filter(text: str, cfg: FilterConfig) -> bool:
    non_ws = [ch for ch in text if not ch.isspace()]
    if not non_ws:
        return False
    digits = sum(1 for ch in non_ws if ch.isdigit())
    return digits / len(non_ws) <= cfg.max_numeric_ratio


_FILTERS = {
    "word_count": word_count_filter,
    "whitespace": whitespace_filter,
    "repeating_ngram": repeating_ngram_filter,
    "numerical_dominance": numerical_dominance_filter,
}


def run_filters(text: str, cfg: FilterConfig) -> str | None:
    """Name of the first failing filter, or None when all pass."""
    for name in FILTER_ORDER:
        if not _FILTERS[name](text, cfg):
            return name
    return None


# ---------------------------------------------------------------------------
# Passage splitting
# ---------------------------------------------------------------------------

_BLANK_LINE = re.compile(r"\n\s*\n")


def split_passages(text: str, target_words: int, doc_id: str = "doc") -> list[Passage]:
    """Split on blank lines, merging adjacent paragraphs up to target_words.

    The concatenation of passage texts equals the input modulo boundary
    whitespace; ordinals run consecutively from 0.
    """
    if target_words < 1:
        raise ValueError("target_words must be >= 1")
    paragraphs = [p for p in (s.strip() for s in _BLANK_LINE.split(text)) if p]
    passages: list[Passage] = []
    bucket: list[str] = []
    bucket_words = 0

    def flush() -> None:
        nonlocal bucket, bucket_words
        if bucket:
            ordinal = len(passages)
            passages.append(
                Passage(
                    id=f"{doc_id}-{ordinal:04d}",
                    doc_id=doc_id,
                    text="\n\n".join(bucket),
                    ordinal=ordinal,
                )
            )
            bucket = []
            bucket_words = 0

    for para in paragraphs:
        bucket.append(para)
        bucket_words += word_count(para)
        if bucket_words >= target_words:
            flush()
    flush()
    return passages


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DecodeFailure:
    """A record that could not be decoded into a RawDoc."""

    doc_id: str
    reason: str


def run_pipeline(
    docs: Iterable[RawDoc | DecodeFailure], cfg: FilterConfig
) -> tuple[list[Passage], list[CurationReport]]:
    """Run modification + filtering + splitting over a document stream."""
    passages: list[Passage] = []
    reports: list[CurationReport] = []
    for doc in docs:
        if isinstance(doc, DecodeFailure):
            reports.append(
                CurationReport(
                    doc_id=doc.doc_id,
                    stages_applied=(),
                    filters_triggered=(DECODE_ERROR,),
                    retained=False,
                    words_before=0,
                    words_after=0,
                )
            )
            continue
        words_before = word_count(doc.text)
        cleaned = apply_modifications(doc.text, cfg)
        words_after = word_count(cleaned)
        failed = run_filters(cleaned, cfg)
        retained = failed is None
        if retained:
            passages.extend(split_passages(cleaned, cfg.passage_target_words, doc_id=doc.id))
        reports.append(
            CurationReport(
                doc_id=doc.id,
                stages_applied=STAGE_ORDER,
                filters_triggered=() if retained else (failed,),
                retained=retained,
                words_before=words_before,
                words_after=words_after,
            )
        )
    return passages, reports


def summarize(reports: Iterable[CurationReport], passages_out: int = 0) -> CurationSummary:
    summary = CurationSummary(passages_out=passages_out)
    for rep in reports:
        summary.docs_in += 1
        if rep.retained:
            summary.docs_retained += 1
        for name in rep.filters_triggered:
            summary.filter_triggers[name] = summary.filter_triggers.get(name, 0) + 1
    return summary


# ---------------------------------------------------------------------------
# Line-delimited I/O
# ---------------------------------------------------------------------------

def load_raw_docs(path: str | Path) -> Iterator[RawDoc | DecodeFailure]:
    """Read one-document-per-line records; bad lines yield DecodeFailure."""
    path = Path(path)
    try:
        handle = path.open("r", encoding="utf-8", errors="strict")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    with handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                yield RawDoc(
                    id=str(rec["id"]),
                    source_url=str(rec.get("source_url", "")),
                    text=str(rec["text"]),
                    fetched_at=str(rec.get("fetched_at", "")),
                )
            except (ValueError, KeyError, TypeError) as exc:
                yield DecodeFailure(doc_id=f"line-{lineno}", reason=str(exc))


def write_passages(passages: Iterable[Passage], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as out:
        for p in passages:
            out.write(
                json.dumps(
                    {"id": p.id, "doc_id": p.doc_id, "ordinal": p.ordinal, "text": p.text},
                    ensure_ascii=False,
                )
                + "\n"
            )


def read_passages(path: str | Path) -> Iterator[Passage]:
    path = Path(path)
    try:
        handle = path.open("r", encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    with handle:
        for line in handle:
            if not line.strip():
                continue
            rec = json.loads(line)
            yield Passage(
                id=str(rec["id"]),
                doc_id=str(rec["doc_id"]),
                text=str(rec["text"]),
                ordinal=int(rec["ordinal"]),
            )


def write_reports(reports: Iterable[CurationReport], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as out:
        for rep in reports:
            out.write(
                json.dumps(
                    {
                        "doc_id": rep.doc_id,
                        "stages_applied": list(rep.stages_applied),
                        "filters_triggered": list(rep.filters_triggered),
                        "retained": rep.retained,
                        "words_before": rep.words_before,
                        "words_after": rep.words_after,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )
