import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agriassist import lingua
from agriassist.lingua import (
    CharFreqDict,
    EmptyCorpus,
    HttpTranslationClient,
    IdentityTranslationClient,
    LanguageVerdict,
    TranslationError,
    build_char_dict,
    detect_language,
    from_english,
    load_char_dict,
    save_char_dict,
    to_english,
)


@pytest.fixture(scope="module")
def dicts():
    return lingua.load_default_dicts()


def corpus_lines(language):
    path = lingua.seed_corpus_path(language)
    return [l for l in path.read_text("utf-8").splitlines() if l.strip()]


class TestBuildCharDict:
    def test_simple_counts(self):
        d = build_char_dict(["aab"], "en")
        assert d.freq == {"a": pytest.approx(2 / 3), "b": pytest.approx(1 / 3)}

    def test_whitespace_only_corpus_raises(self):
        with pytest.raises(EmptyCorpus):
            build_char_dict(["   ", "\t\n"], "en")

    def test_devanagari_corpus_keys_in_block(self):
        d = build_char_dict(["खेत में पानी"], "hi")
        for ch in d.freq:
            assert 0x0900 <= ord(ch) <= 0x097F, ch

    def test_frequencies_sum_to_one(self, dicts):
        for d in dicts:
            assert abs(sum(d.freq.values()) - 1.0) < 1e-6

    def test_invalid_dict_rejected(self):
        with pytest.raises(ValueError):
            CharFreqDict(language="en", freq={"a": 0.5}, built_from="x")


class TestDetectLanguage:
    def test_latin_text_is_english(self, dicts):
        v = detect_language("kab lagayein pyaaz", *dicts)
        assert v.language == "en"
        assert v.score_en > v.score_hi

    def test_devanagari_text_is_hindi(self, dicts):
        v = detect_language("प्याज की रोपाई कब करें", *dicts)
        assert v.language == "hi"
        assert v.score_hi > v.score_en

    def test_empty_is_unknown(self, dicts):
        v = detect_language("", *dicts)
        assert v.language == "unknown"
        assert math.isnan(v.score_en) and math.isnan(v.score_hi)

    def test_whitespace_only_is_unknown(self, dicts):
        assert detect_language(" \t\n ", *dicts).language == "unknown"

    def test_tie_breaks_to_english(self):
        d_en = CharFreqDict("en", {"a": 1.0}, "seed")
        d_hi = CharFreqDict("hi", {"a": 1.0}, "seed")
        assert detect_language("aaaa", d_en, d_hi).language == "en"

    def test_deterministic(self, dicts):
        text = "when to transplant onions"
        first = detect_language(text, *dicts)
        second = detect_language(text, *dicts)
        assert first == second

    def test_bundled_corpora_fully_separated(self, dicts):
        for lang in ("en", "hi"):
            for line in corpus_lines(lang):
                assert detect_language(line, *dicts).language == lang, line

    @settings(max_examples=100, deadline=None)
    @given(
        line=st.sampled_from(corpus_lines("en") + corpus_lines("hi")),
        k=st.integers(2, 6),
    )
    def test_repetition_leaves_argmax_unchanged(self, dicts, line, k):
        base = detect_language(line, *dicts)
        repeated = detect_language(" ".join([line] * k), *dicts)
        assert repeated.language == base.language

    @settings(max_examples=200, deadline=None)
    @given(st.text(alphabet="abcdefghijklmnopqrstuvwxyz ", min_size=20, max_size=120))
    def test_pure_latin_always_english(self, dicts, text):
        if not text.strip():
            return
        assert detect_language(text, *dicts).language == "en"

    @settings(max_examples=200, deadline=None)
    @given(
        st.text(
            alphabet=st.characters(min_codepoint=0x0905, max_codepoint=0x0939),
            min_size=20,
            max_size=120,
        )
    )
    def test_pure_devanagari_always_hindi(self, dicts, text):
        assert detect_language(text, *dicts).language == "hi"


class TestTranslation:
    def test_english_passthrough(self, dicts):
        v = detect_language("water the crop", *dicts)
        text, tag = to_english("water the crop", v, IdentityTranslationClient())
        assert (text, tag) == ("water the crop", "en")

    def test_hindi_identity_stub(self, dicts):
        query = "प्याज की रोपाई कब करें"
        v = detect_language(query, *dicts)
        text, tag = to_english(query, v, IdentityTranslationClient())
        assert (text, tag) == (query, "hi")

    def test_unknown_rejected(self):
        v = LanguageVerdict("unknown", float("nan"), float("nan"))
        with pytest.raises(ValueError):
            to_english("", v, IdentityTranslationClient())

    def test_from_english_identity_for_en(self):
        assert from_english("hello", "en", IdentityTranslationClient()) == "hello"

    def test_from_english_bad_target(self):
        with pytest.raises(ValueError):
            from_english("hello", "fr", IdentityTranslationClient())

    def test_round_trip_with_stub_is_identity(self, dicts):
        client = IdentityTranslationClient()
        for text in ("how to cure onions", "अंगूर की छंटाई कब करें"):
            v = detect_language(text, *dicts)
            english, tag = to_english(text, v, client)
            assert from_english(english, tag, client) == text

    def test_client_failure_carries_original_text(self, dicts):
        class Failing:
            def translate(self, text, source_tag, target_tag):
                raise RuntimeError("boom")

        query = "प्याज कब लगाएं"
        v = detect_language(query, *dicts)
        with pytest.raises(TranslationError) as err:
            to_english(query, v, Failing())
        assert err.value.original_text == query

    def test_http_client_error_maps_to_translation_error(self):
        client = HttpTranslationClient("http://127.0.0.1:1/translate", timeout_s=0.2)
        with pytest.raises(TranslationError) as err:
            client.translate("hello", "en", "hi")
        assert err.value.original_text == "hello"


class TestPersistence:
    def test_round_trip(self, tmp_path, dicts):
        en, _ = dicts
        out = tmp_path / "en.tsv"
        save_char_dict(en, out)
        again = load_char_dict(out, "en")
        assert again.freq == en.freq
        assert again.language == "en"
