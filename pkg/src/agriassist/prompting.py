"""Few-shot prompt assembly under a hard token budget.

The assembled prompt is preamble + worked examples + reference passage +
enriched query, and its token estimate plus the answer reserve must never
exceed the context limit. When the full assembly does not fit, parts are
dropped in a fixed order: third example, second example, then the context
is truncated word by word. The retrieved passage goes last because it is
the grounding the pipeline exists to provide.

Token counts use a words*4/3 heuristic behind an interface, so a real
tokenizer can replace it without touching the assembly logic.
"""
from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable, Union

import yaml

from .retrieval import NO_CONTEXT, NoContext

CONTEXT_LIMIT = 2048
DEFAULT_RESERVE = 512

NO_CONTEXT_BLOCK = (
    "No reference passage is available for this query. Answer conservatively "
    "from general agricultural practice, avoid specific doses you cannot "
    "support, and advise the farmer to verify locally."
)

TRUNC_DROPPED_THIRD_EXAMPLE = "dropped_third_example"
TRUNC_DROPPED_SECOND_EXAMPLE = "dropped_second_example_below_floor"
TRUNC_CONTEXT_TRUNCATED = "context_truncated"

_PLACEHOLDERS = ("preamble", "examples", "context", "query")


class BudgetImpossible(Exception):
    """Even the minimal assembly exceeds the budget."""


class TemplateError(Exception):
    pass


@dataclass(frozen=True)
class FewShotExample:
    query: str
    context: str
    answer: str

    def __post_init__(self) -> None:
        if not (self.query and self.context and self.answer):
            raise ValueError("example query/context/answer must all be nonempty")


@dataclass(frozen=True)
class PromptTemplate:
    system_preamble: str
    examples: tuple[FewShotExample, ...]
    layout: tuple[str, ...] = _PLACEHOLDERS

    def __post_init__(self) -> None:
        if not 2 <= len(self.examples) <= 3:
            raise ValueError(f"template needs 2-3 examples, got {len(self.examples)}")
        if sorted(self.layout) != sorted(_PLACEHOLDERS):
            raise ValueError(
                f"layout must contain each of {_PLACEHOLDERS} exactly once, got {self.layout}"
            )


@dataclass(frozen=True)
class TokenBudget:
    context_limit: int = CONTEXT_LIMIT
    reserve_for_answer: int = DEFAULT_RESERVE

    def __post_init__(self) -> None:
        if not 0 < self.reserve_for_answer < self.context_limit:
            raise ValueError("reserve_for_answer must be positive and below context_limit")


@dataclass(frozen=True)
class AssembledPrompt:
    prompt: str
    token_estimate: int
    skeleton_estimate: int
    truncation_events: tuple[str, ...]


def estimate_tokens(text: str) -> int:
    """ceil(word_count * 4/3); words are whitespace-delimited runs."""
    words = len(text.split())
    return (4 * words + 2) // 3


TokenEstimator = Callable[[str], int]


def _render_example(i: int, ex: FewShotExample) -> str:
    return (
        f"Example {i}:\n"
        f"Query: {ex.query}\n"
        f"Reference passage: {ex.context}\n"
        f"Answer: {ex.answer}"
    )


def _render(
    template: PromptTemplate,
    examples: tuple[FewShotExample, ...],
    context_block: str,
    query: str,
) -> str:
    sections = {
        "preamble": template.system_preamble.strip(),
        "examples": "\n\n".join(_render_example(i + 1, ex) for i, ex in enumerate(examples)),
        "context": f"Reference passage:\n{context_block}",
        "query": f"Query: {query}\nAnswer:",
    }
    return "\n\n".join(sections[name] for name in template.layout if sections[name])


def assemble_prompt(
    template: PromptTemplate,
    enriched_query: str,
    context: Union[str, NoContext],
    budget: TokenBudget = TokenBudget(),
    estimator: TokenEstimator = estimate_tokens,
) -> AssembledPrompt:
    """Assemble the generation prompt, guaranteed to fit the budget.

    Raises BudgetImpossible when even one example plus an empty context
    cannot fit (the query alone is too large).
    """
    if not enriched_query:
        raise ValueError("enriched_query must be nonempty")
    if isinstance(context, NoContext):
        context_text = None
    else:
        context_text = context

    limit = budget.context_limit - budget.reserve_for_answer
    events: list[str] = []

    def fits(prompt: str) -> bool:
        return estimator(prompt) <= limit

    ladder = [template.examples]
    if len(template.examples) == 3:
        ladder.append(template.examples[:2])
    ladder.append(template.examples[:1])

    chosen: str | None = None
    examples_used = template.examples
    for step, examples in enumerate(ladder):
        block = context_text if context_text is not None else NO_CONTEXT_BLOCK
        prompt = _render(template, examples, block, enriched_query)
        if fits(prompt):
            chosen = prompt
            examples_used = examples
            break
        if step + 1 < len(ladder):
            next_len = len(ladder[step + 1])
            if next_len == 2:
                events.append(TRUNC_DROPPED_THIRD_EXAMPLE)
            elif next_len == 1:
                events.append(TRUNC_DROPPED_SECOND_EXAMPLE)

    if chosen is None:
        # one example, full context still too big: truncate the context
        examples_used = template.examples[:1]
        if context_text is None:
            raise BudgetImpossible(
                f"query alone exceeds the budget ({estimator(enriched_query)} tokens "
                f"against a limit of {limit})"
            )
        words = context_text.split()
        lo, hi = 0, len(words)
        best: str | None = None
        while lo <= hi:
            mid = (lo + hi) // 2
            block = " ".join(words[:mid]) + (" ..." if mid < len(words) else "")
            prompt = _render(template, examples_used, block, enriched_query)
            if fits(prompt):
                best = prompt
                lo = mid + 1
            else:
                hi = mid - 1
        if best is None:
            raise BudgetImpossible(
                f"query alone exceeds the budget ({estimator(enriched_query)} tokens "
                f"against a limit of {limit})"
            )
        events.append(TRUNC_CONTEXT_TRUNCATED)
        chosen = best

    skeleton = _render(template, examples_used, "", enriched_query)
    return AssembledPrompt(
        prompt=chosen,
        token_estimate=estimator(chosen),
        skeleton_estimate=estimator(skeleton),
        truncation_events=tuple(events),
    )


# ---------------------------------------------------------------------------
# Template file
# ---------------------------------------------------------------------------

def load_template(path: str | Path) -> PromptTemplate:
    try:
        doc = yaml.safe_load(Path(path).read_text("utf-8"))
    except OSError as exc:
        raise TemplateError(f"cannot read template {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise TemplateError(f"template {path} is not valid YAML: {exc}") from exc
    if not isinstance(doc, dict):
        raise TemplateError("template file must be a mapping")
    try:
        examples = tuple(
            FewShotExample(
                query=str(e["query"]).strip(),
                context=str(e["context"]).strip(),
                answer=str(e["answer"]).strip(),
            )
            for e in doc["examples"]
        )
        return PromptTemplate(
            system_preamble=str(doc["preamble"]),
            examples=examples,
            layout=tuple(doc.get("layout", _PLACEHOLDERS)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise TemplateError(f"bad template structure: {exc}") from exc


def default_template_path() -> Path:
    return Path(str(resources.files("agriassist").joinpath("data/prompt_template.yaml")))


def load_default_template() -> PromptTemplate:
    return load_template(default_template_path())
