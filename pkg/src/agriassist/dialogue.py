"""The guided-conversation state machine.

A session moves through AwaitingQuery -> (Clarifying)* -> Answered, possibly
looping back to a new query after an answer. Each step: detect language on
the first turn, normalize to English, classify the query, and either answer
immediately (Casual/GeneralKnowledge bypass the whole domain pipeline) or
resolve crop -> intent -> slots, asking one clarification question per
missing slot until everything needed is known, then retrieve grounding and
generate the answer with the domain model.

Every backend failure degrades to a defined fallback; a session never gets
stuck: the clarification-turn cap forces a best-effort answer.
"""
from __future__ import annotations

import copy
import time
from dataclasses import dataclass, field
from typing import Optional, Union

from . import backends, lingua, prompting, retrieval, schema
from .backends import (
    MODEL_DOMAIN,
    MODEL_GENERAL,
    BackendUnavailable,
    ExhaustedRetries,
    ModelRouter,
    complete_with_retry,
    content_words,
    parse_single_key,
    parse_slot_map,
    request,
)
from .retrieval import NO_CONTEXT

CATEGORY_DOMAIN = "DomainSpecific"
CATEGORY_GENERAL = "GeneralKnowledge"
CATEGORY_CASUAL = "Casual"
CATEGORIES = (CATEGORY_DOMAIN, CATEGORY_GENERAL, CATEGORY_CASUAL)

PHASE_AWAITING = "AwaitingQuery"
PHASE_CLARIFYING = "Clarifying"
PHASE_ANSWERED = "Answered"
PHASE_CLOSED = "Closed"

CROP_SLOT = "__crop__"

DEFAULT_MAX_CLARIFICATION_TURNS = 6

FALLBACK_REPLY = (
    "Sorry, I ran into a problem answering that. Please try again in a moment."
)
EMPTY_INPUT_REPLY = "I did not catch that. Please type your question."


class SessionClosed(Exception):
    pass


class AskUser:
    """Marker: crop could not be inferred; ask the user explicitly."""

    def __eq__(self, other) -> bool:
        return isinstance(other, AskUser)

    def __hash__(self) -> int:
        return hash("AskUser")


ASK_USER = AskUser()


# ---------------------------------------------------------------------------
# Events
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CategoryAssigned:
    category: str


@dataclass(frozen=True)
class CropDetected:
    crop_id: str


@dataclass(frozen=True)
class IntentAssigned:
    intent_id: str


@dataclass(frozen=True)
class SlotFilled:
    slot_id: str
    value: str


@dataclass(frozen=True)
class QuestionAsked:
    slot_id: str
    question: str


@dataclass(frozen=True)
class ContextRetrieved:
    passage_id: str
    score: float


@dataclass(frozen=True)
class AnswerGenerated:
    pass


@dataclass(frozen=True)
class EscalatedToGeneral:
    reason: str


@dataclass(frozen=True)
class ErrorEvent:
    message: str


Event = Union[
    CategoryAssigned,
    CropDetected,
    IntentAssigned,
    SlotFilled,
    QuestionAsked,
    ContextRetrieved,
    AnswerGenerated,
    EscalatedToGeneral,
    ErrorEvent,
]

EVENT_NAMES = {
    CategoryAssigned: "CategoryAssigned",
    CropDetected: "CropDetected",
    IntentAssigned: "IntentAssigned",
    SlotFilled: "SlotFilled",
    QuestionAsked: "QuestionAsked",
    ContextRetrieved: "ContextRetrieved",
    AnswerGenerated: "AnswerGenerated",
    EscalatedToGeneral: "EscalatedToGeneral",
    ErrorEvent: "ErrorEvent",
}


def event_name(event: Event) -> str:
    return EVENT_NAMES[type(event)]


# ---------------------------------------------------------------------------
# State
# ---------------------------------------------------------------------------

@dataclass
class ChatTurn:
    author: str  # user | system
    text: str
    timestamp: float
    annotations: dict = field(default_factory=dict)


@dataclass
class SessionState:
    session_id: str
    language: Optional[str] = None  # None until detected or fixed at creation
    modality: str = "text"
    phase: str = PHASE_AWAITING
    category: Optional[str] = None
    crop_id: Optional[str] = None
    intent_id: Optional[str] = None
    slots: dict[str, str] = field(default_factory=dict)
    pending_slot: Optional[str] = None
    clarification_turns: int = 0
    transcript: list[ChatTurn] = field(default_factory=list)
    query_en: str = ""

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "language": self.language,
            "modality": self.modality,
            "phase": self.phase,
            "category": self.category,
            "crop_id": self.crop_id,
            "intent_id": self.intent_id,
            "slots": dict(self.slots),
            "pending_slot": self.pending_slot,
            "clarification_turns": self.clarification_turns,
            "query_en": self.query_en,
            "transcript": [
                {
                    "author": t.author,
                    "text": t.text,
                    "timestamp": t.timestamp,
                    "annotations": dict(t.annotations),
                }
                for t in self.transcript
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SessionState":
        return cls(
            session_id=doc["session_id"],
            language=doc.get("language"),
            modality=doc.get("modality", "text"),
            phase=doc.get("phase", PHASE_AWAITING),
            category=doc.get("category"),
            crop_id=doc.get("crop_id"),
            intent_id=doc.get("intent_id"),
            slots=dict(doc.get("slots", {})),
            pending_slot=doc.get("pending_slot"),
            clarification_turns=int(doc.get("clarification_turns", 0)),
            query_en=doc.get("query_en", ""),
            transcript=[
                ChatTurn(
                    author=t["author"],
                    text=t["text"],
                    timestamp=t["timestamp"],
                    annotations=dict(t.get("annotations", {})),
                )
                for t in doc.get("transcript", [])
            ],
        )


@dataclass(frozen=True)
class TurnOutput:
    reply_text: str
    phase_after: str
    events: tuple[Event, ...]
    pending_slot: Optional[str] = None
    category: Optional[str] = None
    passage_id: Optional[str] = None


@dataclass
class Deps:
    """Shared, read-only dependencies for every session."""

    registry: schema.Registry
    router: ModelRouter
    template: prompting.PromptTemplate
    budget: prompting.TokenBudget = field(default_factory=prompting.TokenBudget)
    index: Optional[retrieval.VectorIndex] = None
    embedder: Optional[retrieval.Embedder] = None
    en_dict: Optional[lingua.CharFreqDict] = None
    hi_dict: Optional[lingua.CharFreqDict] = None
    translation_client: lingua.TranslationClient = field(
        default_factory=lingua.IdentityTranslationClient
    )
    score_floor: float = 0.25
    max_clarification_turns: int = DEFAULT_MAX_CLARIFICATION_TURNS

    def language_dicts(self) -> tuple[lingua.CharFreqDict, lingua.CharFreqDict]:
        if self.en_dict is None or self.hi_dict is None:
            en, hi = lingua.load_default_dicts()
            self.en_dict, self.hi_dict = en, hi
        return self.en_dict, self.hi_dict


def new_session(
    session_id: str, language: Optional[str] = None, modality: str = "text"
) -> SessionState:
    return SessionState(session_id=session_id, language=language, modality=modality)


# ---------------------------------------------------------------------------
# Prompts (shapes the ScriptedStub fallback understands; see backends)
# ---------------------------------------------------------------------------

_CATEGORY_DESCRIPTORS = {
    CATEGORY_DOMAIN: (
        "crop crops farming farm field soil seed seeds sowing transplant "
        "transplanting seedling seedlings irrigation water fertilizer manure "
        "pest pests disease harvest yield variety grape grapes vine vines "
        "vineyard onion onions bulb bulbs storage mandi spray pruning nursery "
        "season kharif rabi monsoon mulch weed weeds planting cultivation"
    ),
    CATEGORY_GENERAL: (
        "explain definition meaning capital country india world news weather "
        "forecast temperature science history animal bird population general "
        "information knowledge fact facts"
    ),
    CATEGORY_CASUAL: (
        "hello hi hey namaste greetings thanks thank bye goodbye morning "
        "evening night welcome nice chat chatting fine okay cool great"
    ),
}


def _category_prompt(query: str) -> str:
    options = "\n".join(
        f"- {name}: {desc}" for name, desc in _CATEGORY_DESCRIPTORS.items()
    )
    return (
        "Your task is to classify the user's query into exactly one of the "
        "listed categories, considering case sensitivity.\n\n"
        f"Options:\n{options}\n\n"
        f"Query: {query}\n\n"
        'Output only a JSON blob with the key "category" and no preamble or '
        "explanation."
    )


def _crop_descriptor(crop: schema.CropProfile) -> str:
    words: list[str] = [crop.id]
    for intent in crop.intents:
        for w in content_words(intent.display_name):
            if w not in words:
                words.append(w)
    return " ".join(words)


def _crop_prompt(query: str, registry: schema.Registry) -> str:
    options = "\n".join(
        f"- {crop.id}: {_crop_descriptor(crop)}" for crop in registry.crops.values()
    )
    return (
        "Your task is to decide which crop the user's query is about. If "
        'none of the listed crops match, answer "unknown". Never guess.\n\n'
        f"Options:\n{options}\n- unknown: none of the listed crops\n\n"
        f"Query: {query}\n\n"
        'Output only a JSON blob with the key "crop" and no preamble or '
        "explanation."
    )


def _intent_prompt(query: str, crop: schema.CropProfile, current: Optional[str]) -> str:
    options = "\n".join(
        f"- {intent.display_name}: {intent.description}" for intent in crop.intents
    )
    return (
        "Your task is to match the user's query to the most relevant intent "
        "from a given list. If the current intent sufficiently addresses the "
        "query, do not change the intent. Ensure the selected intent exactly "
        "matches one from the list, considering case sensitivity.\n\n"
        f"Intents:\n{options}\n\n"
        f"Query: {query}\n\n"
        f"Current Intent: {current if current else 'none'}\n\n"
        'Output only a JSON blob with the key "intent" and no preamble or '
        "explanation."
    )


def _extraction_prompt(
    user_text: str, intent: schema.IntentDef, pending_slot: Optional[str]
) -> str:
    slot_lines = []
    for slot in intent.slots:
        line = f"- {slot.id}: {slot.display_name}"
        if slot.value_kind == "enumerated":
            line += f" (allowed values: {', '.join(slot.allowed_values)})"
        slot_lines.append(line)
    return (
        "Extract values for the listed slots from the user's reply. Omit "
        "slots the reply does not mention.\n\n"
        "Slots:\n" + "\n".join(slot_lines) + "\n\n"
        f"Pending slot: {pending_slot if pending_slot else 'none'}\n"
        f"User reply: {user_text}\n\n"
        'Output only a JSON blob with the key "slots" whose value is an '
        "object mapping slot ids to extracted values, and no preamble or "
        "explanation."
    )


def _rephrase_prompt(question: str, crop_name: str, intent_name: str) -> str:
    return (
        "Rephrase the clarification question below so it reads naturally to "
        f"a farmer asking about {intent_name} for {crop_name}. Keep the "
        "meaning identical.\n\n"
        f"Template: {question}\n\n"
        'Output only a JSON blob with the key "question" and no preamble or '
        "explanation."
    )


def _general_answer_prompt(query: str) -> str:
    return (
        "You are a friendly assistant for farmers. Answer the query briefly "
        "and helpfully.\n\n"
        f"Query: {query}"
    )


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def classify_category(query: str, router: ModelRouter) -> str:
    """Three-way query classification; degrades to GeneralKnowledge."""
    req = request(system=_category_prompt(query), human=query, model_class=MODEL_GENERAL)
    try:
        return complete_with_retry(
            router, req, lambda r: parse_single_key(r, "category", allowed=list(CATEGORIES))
        )
    except (ExhaustedRetries, BackendUnavailable):
        return CATEGORY_GENERAL


def detect_crop(
    query: str, registry: schema.Registry, router: ModelRouter
) -> Union[str, AskUser]:
    allowed = list(registry.crops) + ["unknown"]
    req = request(system=_crop_prompt(query, registry), human=query, model_class=MODEL_GENERAL)
    try:
        crop = complete_with_retry(
            router, req, lambda r: parse_single_key(r, "crop", allowed=allowed)
        )
    except (ExhaustedRetries, BackendUnavailable):
        return ASK_USER
    if crop == "unknown":
        return ASK_USER
    return crop


def detect_intent(
    query: str,
    crop_id: str,
    current_intent: Optional[str],
    registry: schema.Registry,
    router: ModelRouter,
) -> str:
    """Pick an intent of the crop; a set current intent is sticky."""
    crop = registry.crop(crop_id)
    by_display = {intent.display_name: intent.id for intent in crop.intents}
    current_display = None
    if current_intent:
        current_display = crop.intent(current_intent).display_name
    req = request(
        system=_intent_prompt(query, crop, current_display),
        human=query,
        model_class=MODEL_GENERAL,
    )
    try:
        display = complete_with_retry(
            router, req, lambda r: parse_single_key(r, "intent", allowed=list(by_display))
        )
        return by_display[display]
    except (ExhaustedRetries, BackendUnavailable):
        if current_intent:
            return current_intent
        # deterministic local fallback: best content-word overlap, first wins
        qwords = content_words(query)
        best = max(
            crop.intents,
            key=lambda it: len(
                qwords & (content_words(it.display_name) | content_words(it.description))
            ),
        )
        return best.id


def extract_slots(
    user_text: str,
    intent: schema.IntentDef,
    existing: dict[str, str],
    router: ModelRouter,
    pending_slot: Optional[str] = None,
) -> dict[str, str]:
    """Merge extracted values into existing; never drops a filled slot."""
    updated = dict(existing)
    req = request(
        system=_extraction_prompt(user_text, intent, pending_slot),
        human=user_text,
        model_class=MODEL_GENERAL,
    )
    try:
        raw = complete_with_retry(router, req, parse_slot_map)
    except (ExhaustedRetries, BackendUnavailable):
        return updated
    slot_defs = {slot.id: slot for slot in intent.slots}
    for slot_id, value in raw.items():
        slot = slot_defs.get(slot_id)
        value = value.strip()
        if slot is None or not value:
            continue
        if slot.value_kind == "enumerated" and value not in slot.allowed_values:
            continue
        updated[slot_id] = value
    return updated


def next_clarification(
    state: SessionState, registry: schema.Registry, router: ModelRouter
) -> Optional[tuple[str, str]]:
    """(slot_id, question) for the first missing required slot, or None."""
    intent = schema.lookup_intent(registry, state.crop_id, state.intent_id)
    crop_name = registry.crop(state.crop_id).display_name.lower()
    for slot in intent.required_slots():
        if state.slots.get(slot.id):
            continue
        template_q = slot.render_question(crop_name, intent.display_name)
        req = request(
            system=_rephrase_prompt(template_q, crop_name, intent.display_name),
            human=template_q,
            model_class=MODEL_GENERAL,
        )
        try:
            question = complete_with_retry(
                router, req, lambda r: parse_single_key(r, "question")
            )
            question = question.strip() or template_q
        except (ExhaustedRetries, BackendUnavailable):
            question = template_q
        return slot.id, question
    return None


def enrich_query(state: SessionState, registry: schema.Registry) -> str:
    """Query + crop + intent + filled slot values, in slot order."""
    if not state.intent_id:
        raise ValueError("intent must be assigned before enrichment")
    intent = schema.lookup_intent(registry, state.crop_id, state.intent_id)
    parts = [state.query_en, f"crop: {state.crop_id}", f"intent: {intent.display_name}"]
    for slot in intent.slots:
        value = state.slots.get(slot.id)
        if value:
            parts.append(f"{slot.id}: {value}")
    return "; ".join(parts)


# ---------------------------------------------------------------------------
# The step transition
# ---------------------------------------------------------------------------

def step(
    state: SessionState, user_text: str, deps: Deps
) -> tuple[SessionState, TurnOutput]:
    """Run one full dialogue transition; the input state is not mutated."""
    if state.phase == PHASE_CLOSED:
        raise SessionClosed(f"session {state.session_id} is closed")
    state = copy.deepcopy(state)
    events: list[Event] = []
    now = time.time()
    state.transcript.append(ChatTurn(author="user", text=user_text, timestamp=now))

    # An empty line is only a non-turn while no query is in flight; during
    # clarification it counts as an unhelpful answer so the turn cap still
    # guarantees termination.
    if not user_text.strip() and state.phase in (PHASE_AWAITING, PHASE_ANSWERED):
        return _reply(state, EMPTY_INPUT_REPLY, events, deps)

    # Language is pinned on the first user turn and never re-detected.
    if state.language is None:
        en_d, hi_d = deps.language_dicts()
        verdict = lingua.detect_language(user_text, en_d, hi_d)
        state.language = verdict.language if verdict.language != lingua.LANG_UNKNOWN else lingua.LANG_EN

    try:
        english = user_text
        if state.language == lingua.LANG_HI:
            english, _ = lingua.to_english(
                user_text,
                lingua.LanguageVerdict(lingua.LANG_HI, 0.0, 0.0),
                deps.translation_client,
            )
    except lingua.TranslationError as exc:
        events.append(ErrorEvent(f"translation failed: {exc}"))
        english = exc.original_text

    if state.phase in (PHASE_AWAITING, PHASE_ANSWERED):
        return _handle_new_query(state, english, deps, events)
    return _handle_clarification_reply(state, english, deps, events)


def _handle_new_query(
    state: SessionState, english: str, deps: Deps, events: list[Event]
) -> tuple[SessionState, TurnOutput]:
    try:
        category = classify_category(english, deps.router)
    except Exception as exc:  # classification must never block a turn
        events.append(ErrorEvent(f"classification failed: {exc}"))
        category = CATEGORY_GENERAL
    state.category = category
    events.append(CategoryAssigned(category))

    if category != CATEGORY_DOMAIN:
        return _answer_general(state, english, deps, events)

    state.query_en = english
    if state.crop_id is None:
        crop = detect_crop(english, deps.registry, deps.router)
        if crop == ASK_USER:
            return _ask_crop(state, deps, events)
        state.crop_id = crop
        events.append(CropDetected(crop))

    return _resolve_intent_and_continue(state, english, deps, events)


def _handle_clarification_reply(
    state: SessionState, english: str, deps: Deps, events: list[Event]
) -> tuple[SessionState, TurnOutput]:
    if state.pending_slot == CROP_SLOT:
        crop = detect_crop(english, deps.registry, deps.router)
        if crop == ASK_USER:
            if state.clarification_turns >= deps.max_clarification_turns:
                events.append(EscalatedToGeneral("crop never resolved"))
                return _answer_general(state, state.query_en or english, deps, events)
            return _ask_crop(state, deps, events)
        state.crop_id = crop
        state.pending_slot = None
        events.append(CropDetected(crop))
        return _resolve_intent_and_continue(state, state.query_en or english, deps, events)

    intent = schema.lookup_intent(deps.registry, state.crop_id, state.intent_id)
    new_intent_id = detect_intent(
        english, state.crop_id, state.intent_id, deps.registry, deps.router
    )
    if new_intent_id != state.intent_id:
        _switch_intent(state, new_intent_id, deps, events)
        intent = schema.lookup_intent(deps.registry, state.crop_id, state.intent_id)

    before = dict(state.slots)
    state.slots = extract_slots(
        english, intent, state.slots, deps.router, pending_slot=state.pending_slot
    )
    for slot_id, value in state.slots.items():
        if before.get(slot_id) != value:
            events.append(SlotFilled(slot_id, value))
    return _ask_or_answer(state, deps, events)


def _resolve_intent_and_continue(
    state: SessionState, english: str, deps: Deps, events: list[Event]
) -> tuple[SessionState, TurnOutput]:
    new_intent_id = detect_intent(
        english, state.crop_id, state.intent_id, deps.registry, deps.router
    )
    if new_intent_id != state.intent_id:
        _switch_intent(state, new_intent_id, deps, events)
    intent = schema.lookup_intent(deps.registry, state.crop_id, state.intent_id)

    before = dict(state.slots)
    state.slots = extract_slots(english, intent, state.slots, deps.router)
    for slot_id, value in state.slots.items():
        if before.get(slot_id) != value:
            events.append(SlotFilled(slot_id, value))
    return _ask_or_answer(state, deps, events)


def _switch_intent(
    state: SessionState, new_intent_id: str, deps: Deps, events: list[Event]
) -> None:
    # keep values whose slot ids carry over to the new intent
    new_intent = schema.lookup_intent(deps.registry, state.crop_id, new_intent_id)
    keep = set(new_intent.slot_ids)
    state.slots = {k: v for k, v in state.slots.items() if k in keep}
    state.intent_id = new_intent_id
    events.append(IntentAssigned(new_intent_id))


def _ask_crop(
    state: SessionState, deps: Deps, events: list[Event]
) -> tuple[SessionState, TurnOutput]:
    crops = ", ".join(c.display_name for c in deps.registry.crops.values())
    question = f"Which crop is your question about? I can help with: {crops}."
    state.phase = PHASE_CLARIFYING
    state.pending_slot = CROP_SLOT
    state.clarification_turns += 1
    events.append(QuestionAsked(CROP_SLOT, question))
    return _reply(state, question, events, deps)


def _ask_or_answer(
    state: SessionState, deps: Deps, events: list[Event]
) -> tuple[SessionState, TurnOutput]:
    pending = next_clarification(state, deps.registry, deps.router)
    if pending is not None and state.clarification_turns < deps.max_clarification_turns:
        slot_id, question = pending
        state.phase = PHASE_CLARIFYING
        state.pending_slot = slot_id
        state.clarification_turns += 1
        events.append(QuestionAsked(slot_id, question))
        return _reply(state, question, events, deps)
    return _answer_domain(state, deps, events)


def _answer_domain(
    state: SessionState, deps: Deps, events: list[Event]
) -> tuple[SessionState, TurnOutput]:
    enriched = enrich_query(state, deps.registry)
    context: Union[str, retrieval.NoContext] = NO_CONTEXT
    passage_id = None
    if deps.index is not None and deps.embedder is not None and len(deps.index):
        try:
            result = retrieval.retrieve_context(
                deps.index, enriched, deps.embedder, score_floor=deps.score_floor
            )
            if not isinstance(result, retrieval.NoContext):
                context = result.text
                passage_id = result.passage_id
                events.append(ContextRetrieved(result.passage_id, result.score))
        except Exception as exc:
            events.append(ErrorEvent(f"retrieval failed: {exc}"))

    try:
        assembled = prompting.assemble_prompt(
            deps.template, enriched, context, deps.budget
        )
    except prompting.BudgetImpossible as exc:
        events.append(ErrorEvent(f"prompt budget: {exc}"))
        return _finish_answer(state, FALLBACK_REPLY, events, deps, passage_id)

    req = request(
        system=assembled.prompt,
        human=enriched,
        model_class=MODEL_DOMAIN,
        max_tokens=deps.budget.reserve_for_answer,
        temperature=0.7,
    )
    try:
        answer = deps.router.complete(req)
    except BackendUnavailable as exc:
        events.append(ErrorEvent(str(exc)))
        answer = FALLBACK_REPLY
    events.append(AnswerGenerated())
    return _finish_answer(state, answer, events, deps, passage_id)


def _answer_general(
    state: SessionState, english: str, deps: Deps, events: list[Event]
) -> tuple[SessionState, TurnOutput]:
    req = request(
        system=_general_answer_prompt(english),
        human=english,
        model_class=MODEL_GENERAL,
        temperature=0.7,
    )
    try:
        answer = deps.router.complete(req)
    except BackendUnavailable as exc:
        events.append(ErrorEvent(str(exc)))
        answer = FALLBACK_REPLY
    events.append(EscalatedToGeneral(state.category or "general"))
    events.append(AnswerGenerated())
    return _finish_answer(state, answer, events, deps, None)


def _finish_answer(
    state: SessionState,
    answer: str,
    events: list[Event],
    deps: Deps,
    passage_id: Optional[str],
) -> tuple[SessionState, TurnOutput]:
    state.phase = PHASE_ANSWERED
    state.pending_slot = None
    return _reply(state, answer, events, deps, passage_id=passage_id)


def _reply(
    state: SessionState,
    reply_en: str,
    events: list[Event],
    deps: Deps,
    passage_id: Optional[str] = None,
) -> tuple[SessionState, TurnOutput]:
    reply = reply_en
    if state.language == lingua.LANG_HI:
        try:
            reply = lingua.from_english(reply_en, lingua.LANG_HI, deps.translation_client)
        except lingua.TranslationError as exc:
            events.append(ErrorEvent(f"reply translation failed: {exc}"))
            reply = reply_en
    state.transcript.append(
        ChatTurn(
            author="system",
            text=reply,
            timestamp=time.time(),
            annotations={
                "category": state.category,
                "intent": state.intent_id,
                "passage_id": passage_id,
                "phase": state.phase,
            },
        )
    )
    output = TurnOutput(
        reply_text=reply,
        phase_after=state.phase,
        events=tuple(events),
        pending_slot=state.pending_slot,
        category=state.category,
        passage_id=passage_id,
    )
    return state, output
