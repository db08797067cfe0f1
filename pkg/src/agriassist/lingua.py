"""Rule-based language identification plus translation adapters.

Detection compares each query's characters against one frequency dictionary
per language (en, hi) and scores by mean log likelihood, which makes the
score independent of text length. Everything downstream of detection runs
on English text; Hindi flows through a TranslationClient on the way in and
out.

Known limitation: Hindi written in Latin script (romanized) scores as
English.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Protocol

import requests

EPSILON = 1e-9

LANG_EN = "en"
LANG_HI = "hi"
LANG_UNKNOWN = "unknown"


class EmptyCorpus(Exception):
    """The corpus contained no non-whitespace characters."""


class TranslationError(Exception):
    """Translation backend failure; carries the untranslated text."""

    def __init__(self, message: str, original_text: str):
        super().__init__(message)
        self.original_text = original_text


@dataclass(frozen=True)
class CharFreqDict:
    language: str
    freq: dict[str, float]
    built_from: str

    def __post_init__(self) -> None:
        if not self.freq:
            raise ValueError("frequency map must be nonempty")
        total = sum(self.freq.values())
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"frequencies must sum to 1 (got {total})")


@dataclass(frozen=True)
class LanguageVerdict:
    language: str
    score_en: float
    score_hi: float


def build_char_dict(corpus: Iterable[str], language: str) -> CharFreqDict:
    """Relative frequency of every non-whitespace character in the corpus."""
    counts: dict[str, int] = {}
    total = 0
    descriptor_lines = 0
    for chunk in corpus:
        descriptor_lines += 1
        for ch in chunk:
            if ch.isspace():
                continue
            counts[ch] = counts.get(ch, 0) + 1
            total += 1
    if total == 0:
        raise EmptyCorpus(f"no non-whitespace characters in corpus for {language!r}")
    freq = {ch: n / total for ch, n in sorted(counts.items())}
    return CharFreqDict(
        language=language,
        freq=freq,
        built_from=f"{descriptor_lines} lines, {total} chars",
    )


def detect_language(text: str, en_dict: CharFreqDict, hi_dict: CharFreqDict) -> LanguageVerdict:
    """Mean log-likelihood scoring with additive smoothing; ties go to en."""
    chars = [ch for ch in text if not ch.isspace()]
    if not chars:
        return LanguageVerdict(LANG_UNKNOWN, float("nan"), float("nan"))
    score_en = sum(math.log(en_dict.freq.get(ch, 0.0) + EPSILON) for ch in chars) / len(chars)
    score_hi = sum(math.log(hi_dict.freq.get(ch, 0.0) + EPSILON) for ch in chars) / len(chars)
    language = LANG_EN if score_en >= score_hi else LANG_HI
    return LanguageVerdict(language, score_en, score_hi)


# ---------------------------------------------------------------------------
# Translation
# ---------------------------------------------------------------------------

class TranslationClient(Protocol):
    def translate(self, text: str, source_tag: str, target_tag: str) -> str: ...


class IdentityTranslationClient:
    """Returns input verbatim; used when source=target and in test mode."""

    def translate(self, text: str, source_tag: str, target_tag: str) -> str:
        return text


class HttpTranslationClient:
    """POSTs {text, source, target} to an external service, expects {text}."""

    def __init__(self, endpoint: str, api_key: str = "", timeout_s: float = 10.0):
        self.endpoint = endpoint
        self.api_key = api_key
        self.timeout_s = timeout_s

    def translate(self, text: str, source_tag: str, target_tag: str) -> str:
        headers = {}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = requests.post(
                self.endpoint,
                json={"text": text, "source": source_tag, "target": target_tag},
                headers=headers,
                timeout=self.timeout_s,
            )
            resp.raise_for_status()
            return str(resp.json()["text"])
        except (requests.RequestException, KeyError, ValueError) as exc:
            raise TranslationError(f"translation request failed: {exc}", text) from exc


def to_english(
    text: str, verdict: LanguageVerdict, client: TranslationClient
) -> tuple[str, str]:
    """Normalize a query to English; returns (english_text, original_tag)."""
    if verdict.language == LANG_UNKNOWN:
        raise ValueError("cannot translate an undecidable query")
    if verdict.language == LANG_EN:
        return text, LANG_EN
    try:
        return client.translate(text, LANG_HI, LANG_EN), LANG_HI
    except TranslationError:
        raise
    except Exception as exc:
        raise TranslationError(f"translation client error: {exc}", text) from exc


def from_english(text: str, target: str, client: TranslationClient) -> str:
    if target not in (LANG_EN, LANG_HI):
        raise ValueError(f"unsupported target language {target!r}")
    if target == LANG_EN:
        return text
    try:
        return client.translate(text, LANG_EN, LANG_HI)
    except TranslationError:
        raise
    except Exception as exc:
        raise TranslationError(f"translation client error: {exc}", text) from exc


# ---------------------------------------------------------------------------
# Dictionary persistence: one text table (codepoint<TAB>frequency) per language
# ---------------------------------------------------------------------------

def save_char_dict(d: CharFreqDict, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as out:
        out.write(f"# language={d.language} built_from={d.built_from}\n")
        for ch, f in d.freq.items():
            out.write(f"{ord(ch)}\t{f!r}\n")


def load_char_dict(path: str | Path, language: str) -> CharFreqDict:
    freq: dict[str, float] = {}
    built_from = str(path)
    with Path(path).open("r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                built_from = line.lstrip("# ")
                continue
            cp, f = line.split("\t")
            freq[chr(int(cp))] = float(f)
    return CharFreqDict(language=language, freq=freq, built_from=built_from)


def load_default_dicts() -> tuple[CharFreqDict, CharFreqDict]:
    """The dictionaries shipped with the package (built from the seed corpus)."""
    base = resources.files("agriassist").joinpath("data")
    en = load_char_dict(str(base / "charfreq_en.tsv"), LANG_EN)
    hi = load_char_dict(str(base / "charfreq_hi.tsv"), LANG_HI)
    return en, hi


def seed_corpus_path(language: str) -> Path:
    return Path(str(resources.files("agriassist").joinpath(f"data/lang_corpus_{language}.txt")))
