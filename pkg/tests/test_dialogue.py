import json
import random

import pytest

from agriassist import dialogue, lingua, prompting, retrieval, schema
from agriassist.backends import ModelRouter, ScriptedStub
from agriassist.curation import Passage
from agriassist.dialogue import (
    ASK_USER,
    CATEGORY_CASUAL,
    CATEGORY_DOMAIN,
    CATEGORY_GENERAL,
    CROP_SLOT,
    PHASE_ANSWERED,
    PHASE_CLARIFYING,
    PHASE_CLOSED,
    Deps,
    SessionClosed,
    classify_category,
    detect_crop,
    detect_intent,
    enrich_query,
    event_name,
    extract_slots,
    new_session,
    next_clarification,
    step,
)

BYPASS_FORBIDDEN = {"CropDetected", "IntentAssigned", "ContextRetrieved"}


@pytest.fixture(scope="module")
def registry():
    return schema.load_default_registry()


@pytest.fixture(scope="module")
def index_and_embedder():
    embedder = retrieval.HashingEmbedder()
    texts = [
        "Choose a grape variety matched to your climate and soil; hot dry sites "
        "with black soils carry table varieties to high yields when irrigated well.",
        "Transplant onion seedlings six to eight weeks after sowing when they reach "
        "pencil thickness; the rabi crop in Maharashtra moves to the field in November.",
        "Drip irrigation keeps vineyard soil moisture even and saves water on light soils.",
        "Cure onion bulbs under a ventilated roof for two weeks before storage.",
    ]
    passages = [Passage(id=f"p{i}", doc_id="d", text=t, ordinal=i) for i, t in enumerate(texts)]
    return retrieval.build_index(passages, embedder), embedder


def make_deps(registry, index_and_embedder, rules=None, **overrides):
    stub = ScriptedStub(rules=list(rules or []))
    index, embedder = index_and_embedder
    kwargs = dict(
        registry=registry,
        router=ModelRouter(stub, stub),
        template=prompting.load_default_template(),
        index=index,
        embedder=embedder,
    )
    kwargs.update(overrides)
    return Deps(**kwargs)


def run_conversation(deps, texts, session=None):
    state = session or new_session("s-test")
    outputs = []
    for text in texts:
        state, out = step(state, text, deps)
        outputs.append(out)
    return state, outputs


def kinds(output):
    return [event_name(e) for e in output.events]


class TestClassifyCategory:
    def test_domain_query(self, registry, index_and_embedder):
        deps = make_deps(registry, index_and_embedder)
        got = classify_category(
            "when should I transplant onion seedlings in maharashtra", deps.router
        )
        assert got == CATEGORY_DOMAIN

    def test_casual_query(self, registry, index_and_embedder):
        deps = make_deps(registry, index_and_embedder)
        assert classify_category("hello, how are you?", deps.router) == CATEGORY_CASUAL

    def test_garbage_backend_defaults_to_general(self, registry):
        class Garbage:
            def name(self):
                return "garbage"

            def complete(self, req):
                return "not json at all"

        router = ModelRouter(Garbage(), Garbage())
        assert classify_category("anything", router) == CATEGORY_GENERAL


class TestDetectCrop:
    def test_grape_keywords(self, registry, index_and_embedder):
        deps = make_deps(registry, index_and_embedder)
        assert detect_crop("my grape vines have mildew", registry, deps.router) == "grapes"

    def test_no_crop_keyword_asks_user(self, registry, index_and_embedder):
        deps = make_deps(registry, index_and_embedder)
        assert detect_crop("my crop is sick", registry, deps.router) == ASK_USER

    def test_single_crop_registry_never_defaults(self, registry, index_and_embedder):
        deps = make_deps(registry, index_and_embedder)
        single = schema.Registry(
            crops={"grapes": registry.crops["grapes"]}, version="1"
        )
        assert detect_crop("my grape vines have mildew", single, deps.router) == "grapes"
        assert detect_crop("the weather is bad", single, deps.router) == ASK_USER


class TestDetectIntent:
    def test_variety_query(self, registry, index_and_embedder):
        deps = make_deps(registry, index_and_embedder)
        got = detect_intent(
            "which grape variety suits black soil", "grapes", None, registry, deps.router
        )
        assert got == "vineyard_variety_selection"

    def test_stickiness_on_follow_up(self, registry, index_and_embedder):
        deps = make_deps(registry, index_and_embedder)
        got = detect_intent(
            "what about in kharif season?",
            "onions",
            "time_of_transplanting",
            registry,
            deps.router,
        )
        assert got == "time_of_transplanting"

    def test_bogus_backend_value_keeps_current(self, registry, index_and_embedder):
        rules = [('key "intent"', '{"intent": "Made Up Intent"}')]
        deps = make_deps(registry, index_and_embedder, rules=rules)
        got = detect_intent(
            "anything at all", "onions", "time_of_transplanting", registry, deps.router
        )
        assert got == "time_of_transplanting"

    def test_bogus_backend_without_current_uses_overlap(self, registry, index_and_embedder):
        rules = [('key "intent"', '{"intent": "Made Up Intent"}')]
        deps = make_deps(registry, index_and_embedder, rules=rules)
        got = detect_intent(
            "when to transplant onion seedlings", "onions", None, registry, deps.router
        )
        assert got == "time_of_transplanting"


class TestExtractSlots:
    def test_scripted_multi_slot_extraction(self, registry, index_and_embedder):
        rules = [
            (
                "User reply: I am in Nashik, it is rabi season",
                '{"slots": {"state": "Nashik", "season": "rabi"}}',
            )
        ]
        deps = make_deps(registry, index_and_embedder, rules=rules)
        intent = schema.lookup_intent(registry, "onions", "time_of_transplanting")
        got = extract_slots(
            "I am in Nashik, it is rabi season", intent, {}, deps.router
        )
        assert got == {"state": "Nashik", "season": "rabi"}

    def test_irrelevant_text_leaves_map_unchanged(self, registry, index_and_embedder):
        deps = make_deps(registry, index_and_embedder)
        intent = schema.lookup_intent(registry, "onions", "time_of_transplanting")
        existing = {"state": "Maharashtra"}
        got = extract_slots("nothing relevant here", intent, existing, deps.router)
        assert got == existing

    def test_non_intent_slot_dropped(self, registry, index_and_embedder):
        rules = [("User reply: x", '{"slots": {"bogus_slot": "v", "state": "Pune"}}')]
        deps = make_deps(registry, index_and_embedder, rules=rules)
        intent = schema.lookup_intent(registry, "onions", "time_of_transplanting")
        got = extract_slots("x", intent, {}, deps.router)
        assert got == {"state": "Pune"}

    def test_enumerated_slot_rejects_bad_value(self, registry, index_and_embedder):
        rules = [("User reply: x", '{"slots": {"season": "spring"}}')]
        deps = make_deps(registry, index_and_embedder, rules=rules)
        intent = schema.lookup_intent(registry, "onions", "time_of_transplanting")
        assert extract_slots("x", intent, {}, deps.router) == {}

    def test_filled_slot_never_cleared(self, registry, index_and_embedder):
        rules = [("User reply: x", '{"slots": {"state": ""}}')]
        deps = make_deps(registry, index_and_embedder, rules=rules)
        intent = schema.lookup_intent(registry, "onions", "time_of_transplanting")
        existing = {"state": "Nashik"}
        assert extract_slots("x", intent, existing, deps.router) == {"state": "Nashik"}


class TestNextClarification:
    def test_first_slot_in_order(self, registry, index_and_embedder):
        deps = make_deps(registry, index_and_embedder)
        state = new_session("s")
        state.crop_id, state.intent_id = "grapes", "vineyard_variety_selection"
        slot_id, question = next_clarification(state, registry, deps.router)
        assert slot_id == "grape_variety"
        assert "grape variety" in question.lower()

    def test_all_filled_is_complete(self, registry, index_and_embedder):
        deps = make_deps(registry, index_and_embedder)
        state = new_session("s")
        state.crop_id, state.intent_id = "grapes", "vineyard_variety_selection"
        state.slots = {
            "grape_variety": "Thompson",
            "climate": "mild",
            "expected_yield_potential": "20 t",
            "soil_type": "black",
        }
        assert next_clarification(state, registry, deps.router) is None

    def test_backend_down_falls_back_to_template(self, registry, index_and_embedder):
        class Down:
            def name(self):
                return "down"

            def complete(self, req):
                raise RuntimeError("no network")

        state = new_session("s")
        state.crop_id, state.intent_id = "onions", "time_of_transplanting"
        intent = schema.lookup_intent(registry, "onions", "time_of_transplanting")

        class DownRouter:
            def complete(self, req):
                from agriassist.backends import BackendUnavailable

                raise BackendUnavailable("down", "no network")

        slot_id, question = next_clarification(state, registry, DownRouter())
        assert slot_id == "state"
        assert question == intent.slot("state").render_question("onions", intent.display_name)


class TestEnrichQuery:
    def test_template_matches_specified_form(self, registry):
        state = new_session("s")
        state.crop_id = "onions"
        state.intent_id = "time_of_transplanting"
        state.query_en = "when to transplant"
        state.slots = {"state": "Maharashtra", "season": "rabi"}
        assert enrich_query(state, registry) == (
            "when to transplant; crop: onions; intent: Time of Transplanting; "
            "state: Maharashtra; season: rabi"
        )

    def test_no_slots(self, registry):
        state = new_session("s")
        state.crop_id = "onions"
        state.intent_id = "time_of_transplanting"
        state.query_en = "when to transplant"
        assert enrich_query(state, registry) == (
            "when to transplant; crop: onions; intent: Time of Transplanting"
        )

    def test_all_slots_in_slot_order(self, registry):
        state = new_session("s")
        state.crop_id = "onions"
        state.intent_id = "integrated_pest_management"
        state.query_en = "pests"
        intent = schema.lookup_intent(registry, "onions", "integrated_pest_management")
        state.slots = {s.id: f"v-{s.id}" for s in reversed(intent.slots)}
        enriched = enrich_query(state, registry)
        positions = [enriched.index(f"{s.id}: v-{s.id}") for s in intent.slots]
        assert positions == sorted(positions)


class TestStepVineyardFlow:
    SCRIPT = [
        "Which grape variety should I choose for my new vineyard?",
        "Thompson Seedless",
        "hot and dry summers",
        "around 20 tonnes per acre",
        "black soil",
    ]

    def test_four_questions_then_answer(self, registry, index_and_embedder):
        deps = make_deps(registry, index_and_embedder)
        state, outputs = run_conversation(deps, self.SCRIPT)
        questions = [e for o in outputs for e in o.events if event_name(e) == "QuestionAsked"]
        answers = [e for o in outputs for e in o.events if event_name(e) == "AnswerGenerated"]
        assert len(questions) == 4
        assert len(answers) == 1
        assert [q.slot_id for q in questions] == [
            "grape_variety",
            "climate",
            "expected_yield_potential",
            "soil_type",
        ]
        assert outputs[-1].phase_after == PHASE_ANSWERED
        assert state.slots == {
            "grape_variety": "Thompson Seedless",
            "climate": "hot and dry summers",
            "expected_yield_potential": "around 20 tonnes per acre",
            "soil_type": "black soil",
        }

    def test_intermediate_phases_clarifying(self, registry, index_and_embedder):
        deps = make_deps(registry, index_and_embedder)
        _, outputs = run_conversation(deps, self.SCRIPT)
        assert [o.phase_after for o in outputs] == [
            PHASE_CLARIFYING,
            PHASE_CLARIFYING,
            PHASE_CLARIFYING,
            PHASE_CLARIFYING,
            PHASE_ANSWERED,
        ]

    def test_context_retrieved_on_answer(self, registry, index_and_embedder):
        deps = make_deps(registry, index_and_embedder)
        _, outputs = run_conversation(deps, self.SCRIPT)
        assert outputs[-1].passage_id is not None


class TestStepBypass:
    def test_casual_bypass(self, registry, index_and_embedder):
        deps = make_deps(registry, index_and_embedder)
        _, outputs = run_conversation(deps, ["thanks, bye"])
        assert outputs[0].category == CATEGORY_CASUAL
        assert outputs[0].phase_after == PHASE_ANSWERED
        assert not BYPASS_FORBIDDEN & set(kinds(outputs[0]))

    def test_general_bypass(self, registry, index_and_embedder):
        deps = make_deps(registry, index_and_embedder)
        _, outputs = run_conversation(
            deps, ["explain the history of the capital of india"]
        )
        assert outputs[0].category == CATEGORY_GENERAL
        assert not BYPASS_FORBIDDEN & set(kinds(outputs[0]))


class TestStepCropClarification:
    def test_crop_question_then_flow(self, registry, index_and_embedder):
        deps = make_deps(registry, index_and_embedder)
        state, outputs = run_conversation(deps, ["my crop is sick", "onions"])
        assert outputs[0].pending_slot == CROP_SLOT
        assert "Grapes" in outputs[0].reply_text and "Onions" in outputs[0].reply_text
        assert state.crop_id == "onions"
        assert state.intent_id is not None


class TestStepImmediateAnswer:
    def test_zero_clarifications_when_query_has_everything(
        self, registry, index_and_embedder
    ):
        query = "When to transplant onion seedlings in Maharashtra for rabi with N-53 sown in October?"
        rules = [
            (
                f"User reply: {query}",
                json.dumps(
                    {
                        "slots": {
                            "state": "Maharashtra",
                            "season": "rabi",
                            "seed_variety": "N-53",
                            "time_of_sowing": "October",
                        }
                    }
                ),
            )
        ]
        deps = make_deps(registry, index_and_embedder, rules=rules)
        _, outputs = run_conversation(deps, [query])
        assert outputs[0].phase_after == PHASE_ANSWERED
        assert "QuestionAsked" not in kinds(outputs[0])


class TestStepFollowUp:
    def test_intent_sticky_after_answer(self, registry, index_and_embedder):
        deps = make_deps(registry, index_and_embedder)
        script = [
            "When should I transplant my onion seedlings?",
            "Maharashtra",
            "rabi",
            "N-53",
            "mid October",
            "what about in kharif season?",
        ]
        state, outputs = run_conversation(deps, script)
        assert outputs[4].phase_after == PHASE_ANSWERED
        assert state.intent_id == "time_of_transplanting"
        assert outputs[5].phase_after == PHASE_ANSWERED
        # follow-up reuses the already-filled slots: no new questions
        assert "QuestionAsked" not in kinds(outputs[5])


class TestStepEdges:
    def test_empty_input(self, registry, index_and_embedder):
        deps = make_deps(registry, index_and_embedder)
        state = new_session("s")
        state, out = step(state, "   ", deps)
        assert out.reply_text == dialogue.EMPTY_INPUT_REPLY
        assert state.phase == dialogue.PHASE_AWAITING

    def test_closed_session_rejected(self, registry, index_and_embedder):
        deps = make_deps(registry, index_and_embedder)
        state = new_session("s")
        state.phase = PHASE_CLOSED
        with pytest.raises(SessionClosed):
            step(state, "hello", deps)

    def test_input_state_not_mutated(self, registry, index_and_embedder):
        deps = make_deps(registry, index_and_embedder)
        state = new_session("s")
        before = json.dumps(state.to_dict())
        step(state, "hello there", deps)
        assert json.dumps(state.to_dict()) == before

    def test_hindi_first_turn_pins_language(self, registry, index_and_embedder):
        deps = make_deps(registry, index_and_embedder)
        state = new_session("s")
        state, out = step(state, "प्याज की रोपाई कब करें?", deps)
        assert state.language == "hi"
        assert out.phase_after == PHASE_ANSWERED  # identity stub: degrades to general

    def test_language_fixed_after_first_turn(self, registry, index_and_embedder):
        deps = make_deps(registry, index_and_embedder)
        state = new_session("s", language="en")
        state, _ = step(state, "hello", deps)
        state, _ = step(state, "प्याज की रोपाई कब करें?", deps)
        assert state.language == "en"

    def test_no_index_answers_without_context(self, registry, index_and_embedder):
        deps = make_deps(registry, index_and_embedder, index=None, embedder=None)
        _, outputs = run_conversation(deps, TestStepVineyardFlow.SCRIPT)
        assert outputs[-1].phase_after == PHASE_ANSWERED
        assert outputs[-1].passage_id is None
        assert "ContextRetrieved" not in kinds(outputs[-1])


DOMAIN_OPENERS = [
    "Which grape variety should I choose for my new vineyard?",
    "When should I transplant my onion seedlings?",
    "thrips damage on my onion leaves",
    "my grape vines have mildew on the bunches",
    "how much fertilizer for onion crop",
    "my crop is sick",
]
OTHER_OPENERS = [
    "hello, how are you?",
    "thanks, bye",
    "explain the history of the capital of india",
    "tell me an interesting fact about science",
]
ANSWER_POOL = [
    "Maharashtra",
    "rabi",
    "kharif",
    "N-53",
    "mid October",
    "black soil",
    "drip lines",
    "two acres",
    "last week",
    "no idea",
    "spring",  # invalid for enumerated season: forces a re-ask
    "",
]


class TestStepProperties:
    def test_termination_and_monotonicity_over_random_conversations(
        self, registry, index_and_embedder
    ):
        deps = make_deps(registry, index_and_embedder)
        rng = random.Random(2024)
        max_steps = deps.max_clarification_turns + 2
        for trial in range(120):
            state = new_session(f"s{trial}")
            opener = rng.choice(DOMAIN_OPENERS + OTHER_OPENERS)
            prev_slots: dict[str, str] = {}
            prev_intent = None
            answered_at = None
            for step_no in range(max_steps):
                text = opener if step_no == 0 else rng.choice(ANSWER_POOL)
                state, out = step(state, text, deps)
                if prev_intent == state.intent_id:
                    for slot_id, value in prev_slots.items():
                        assert state.slots.get(slot_id), (
                            f"slot {slot_id} emptied in trial {trial}"
                        )
                prev_slots = dict(state.slots)
                prev_intent = state.intent_id
                assert state.clarification_turns <= deps.max_clarification_turns
                if out.phase_after == PHASE_ANSWERED:
                    answered_at = step_no + 1
                    break
            assert answered_at is not None, f"trial {trial} never answered"
            assert answered_at <= max_steps

    def test_replay_determinism(self, registry, index_and_embedder):
        script = TestStepVineyardFlow.SCRIPT
        snapshots = []
        for _ in range(2):
            deps = make_deps(registry, index_and_embedder)
            state = new_session("fixed-id")
            log = []
            for text in script:
                state, out = step(state, text, deps)
                log.append((out.reply_text, [event_name(e) for e in out.events]))
            doc = state.to_dict()
            for turn in doc["transcript"]:
                turn["timestamp"] = 0
            snapshots.append(json.dumps([doc, log], sort_keys=True))
        assert snapshots[0] == snapshots[1]
