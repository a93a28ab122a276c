"""Synthetic corpus generator: determinism, gold fidelity, oracle linearity."""

import numpy as np
import pytest

from scoredeck.errors import ConfigError
from scoredeck.ingest import DOMAIN_CATEGORIES, REDACTED_TOKEN
from scoredeck.synth import (
    GeneratorConfig,
    _count_occurrences,
    example_record,
    gen_corpus,
    neutral_vocabulary,
    oracle_score,
    planted_phrases,
    read_gold_sidecar,
    write_gold_sidecar,
)


def _small_config(**kw):
    base = dict(
        n_docs=30,
        doc_len=(40, 80),
        n_neutral=300,
        max_phrases_per_doc=4,
        seed=1,
    )
    base.update(kw)
    return GeneratorConfig(**base)


@pytest.fixture(scope="module")
def small_corpus():
    return gen_corpus(_small_config())


# ---------------------------------------------------------------------------
# determinism
# ---------------------------------------------------------------------------


def test_same_config_same_corpus(small_corpus):
    again = gen_corpus(_small_config())
    for a, b in zip(small_corpus, again):
        assert a.tokens == b.tokens
        assert a.oracle == b.oracle
        assert a.example.normalized_score == b.example.normalized_score
        assert a.gold == b.gold


def test_seed_changes_corpus(small_corpus):
    other = gen_corpus(_small_config(seed=2))
    assert any(a.tokens != b.tokens for a, b in zip(small_corpus, other))


def test_phrase_selection_deterministic():
    cfg = _small_config()
    assert planted_phrases(cfg) == planted_phrases(cfg)


# ---------------------------------------------------------------------------
# planted phrases
# ---------------------------------------------------------------------------


def test_phrase_counts_and_weight_signs():
    cfg = _small_config(n_enabler_phrases=5, n_disabler_phrases=3)
    phrases = planted_phrases(cfg)
    enablers = [p for p in phrases if p.polarity == "enabler"]
    disablers = [p for p in phrases if p.polarity == "disabler"]
    assert len(enablers) == 5 and len(disablers) == 3
    lo, hi = cfg.enabler_weight
    for p in enablers:
        assert lo <= p.weight <= hi
    lo, hi = cfg.disabler_weight
    for p in disablers:
        assert -hi <= p.weight <= -lo
    for p in phrases:
        assert 1 <= len(p.tokens) <= 3
    assert any(len(p.tokens) > 1 for p in phrases)


# ---------------------------------------------------------------------------
# gold annotations
# ---------------------------------------------------------------------------


def test_gold_spans_match_document_text(small_corpus):
    by_text = {" ".join(p.tokens): p for p in small_corpus.phrases}
    for ex in small_corpus:
        for span in ex.gold.spans:
            # inclusive end: the span covers tokens[start .. end]
            assert " ".join(ex.tokens[span.start : span.end + 1]) == span.phrase
            planted = by_text[span.phrase]
            assert span.polarity == planted.polarity
            assert span.weight == planted.weight
            assert (span.weight > 0) == (span.polarity == "enabler")


def test_gold_spans_sorted_and_disjoint(small_corpus):
    for ex in small_corpus:
        spans = ex.gold.spans
        for a, b in zip(spans, spans[1:]):
            assert a.start <= b.start
            assert a.end + 1 < b.start  # at least one filler token between


def test_phrase_budget_respected(small_corpus):
    limit = small_corpus.config.max_phrases_per_doc
    assert all(len(ex.gold.spans) <= limit for ex in small_corpus)
    assert any(ex.gold.spans for ex in small_corpus)


def test_scan_finds_exactly_the_planted_occurrences(small_corpus):
    phrases = tuple(small_corpus.phrases)
    for ex in small_corpus:
        scanned = _count_occurrences(ex.tokens, phrases)
        gold_starts = sorted(s.start for s in ex.gold.spans)
        found_starts = sorted(s for starts in scanned for s in starts)
        assert found_starts == gold_starts


# ---------------------------------------------------------------------------
# oracle
# ---------------------------------------------------------------------------


def test_stored_oracle_matches_recomputation(small_corpus):
    cfg = small_corpus.config
    for ex in small_corpus:
        assert ex.oracle == oracle_score(ex.tokens, ex.example.domain_ids, cfg)


def test_oracle_in_score_range(small_corpus):
    for ex in small_corpus:
        assert 0.0 <= ex.oracle <= 100.0
        assert 0.0 <= ex.example.normalized_score <= 100.0


def test_zero_noise_score_equals_oracle():
    corpus = gen_corpus(_small_config(noise_sigma=0.0))
    for ex in corpus:
        assert ex.example.normalized_score == ex.oracle


def test_neutral_doc_scores_base():
    cfg = _small_config()
    mid = (cfg.doc_len[0] + cfg.doc_len[1]) // 2
    zero_domain = DOMAIN_CATEGORIES[list(cfg.domain_weights).index(0.0)]
    got = oracle_score(["zzz"] * mid, (zero_domain,), cfg)
    assert got == cfg.base_score


def test_masking_a_span_moves_oracle_by_its_weight(small_corpus):
    """Length-preserving replacement of one gold span shifts the truth by
    exactly the planted weight (checked off the clip boundaries)."""
    cfg = small_corpus.config
    checked = 0
    for ex in small_corpus:
        for span in ex.gold.spans:
            masked = list(ex.tokens)
            masked[span.start : span.end + 1] = ["qqq"] * (span.end + 1 - span.start)
            after = oracle_score(masked, ex.example.domain_ids, cfg)
            if 0.0 < after < 100.0 and 0.0 < ex.oracle < 100.0:
                assert ex.oracle - after == pytest.approx(span.weight, abs=1e-9)
                checked += 1
    assert checked >= 10


def test_length_term_raises_score():
    cfg = _small_config()
    zero_domain = DOMAIN_CATEGORIES[list(cfg.domain_weights).index(0.0)]
    short = oracle_score(["zzz"] * cfg.doc_len[0], (zero_domain,), cfg)
    long = oracle_score(["zzz"] * cfg.doc_len[1], (zero_domain,), cfg)
    assert long - short == pytest.approx(2 * cfg.length_weight)


def test_redaction_lowers_score():
    cfg = _small_config()
    zero_domain = DOMAIN_CATEGORIES[list(cfg.domain_weights).index(0.0)]
    n = 60
    clean = oracle_score(["zzz"] * n, (zero_domain,), cfg)
    half = oracle_score(["zzz"] * (n // 2) + [REDACTED_TOKEN] * (n // 2), (zero_domain,), cfg)
    assert half - clean == pytest.approx(cfg.redaction_weight * 0.5)


def test_domain_weight_additive():
    cfg = _small_config()
    weights = dict(zip(DOMAIN_CATEGORIES, cfg.domain_weights))
    mid = (cfg.doc_len[0] + cfg.doc_len[1]) // 2
    tokens = ["zzz"] * mid
    d0, d1 = DOMAIN_CATEGORIES[0], DOMAIN_CATEGORIES[2]
    both = oracle_score(tokens, (d0, d1), cfg)
    assert both == pytest.approx(cfg.base_score + weights[d0] + weights[d1])


# ---------------------------------------------------------------------------
# decoys
# ---------------------------------------------------------------------------


def test_decoys_never_form_patterns():
    corpus = gen_corpus(_small_config(decoys_per_doc=(2, 5), seed=4))
    phrases = tuple(corpus.phrases)
    signal_tokens = {t for p in phrases for t in p.tokens}
    saw_decoy = False
    for ex in corpus:
        scanned = _count_occurrences(ex.tokens, phrases)
        assert sorted(s for st in scanned for s in st) == sorted(
            s.start for s in ex.gold.spans
        )
        in_gold = set()
        for span in ex.gold.spans:
            in_gold.update(range(span.start, span.end + 1))
        for i, tok in enumerate(ex.tokens):
            if tok in signal_tokens and i not in in_gold:
                saw_decoy = True
    assert saw_decoy


# ---------------------------------------------------------------------------
# document structure
# ---------------------------------------------------------------------------


def test_document_lengths_at_least_minimum(small_corpus):
    lo = small_corpus.config.doc_len[0]
    for ex in small_corpus:
        assert len(ex.tokens) >= lo


def test_filler_is_never_signal(small_corpus):
    signal = {t for p in small_corpus.phrases for t in p.tokens}
    for ex in small_corpus:
        in_gold = set()
        for span in ex.gold.spans:
            in_gold.update(range(span.start, span.end + 1))
        for i, tok in enumerate(ex.tokens):
            if i not in in_gold and tok != REDACTED_TOKEN:
                assert tok not in signal or small_corpus.config.decoys_per_doc[1] > 0


def test_domains_are_valid_and_sorted(small_corpus):
    for ex in small_corpus:
        ids = ex.example.domain_ids
        assert 1 <= len(ids) <= 2
        assert list(ids) == sorted(ids)
        assert all(d in DOMAIN_CATEGORIES for d in ids)


def test_neutral_vocabulary_properties():
    vocab = neutral_vocabulary(200)
    assert len(vocab) == 200
    assert len(set(vocab)) == 200
    assert neutral_vocabulary(200) == vocab
    phrases = planted_phrases(GeneratorConfig())
    signal = {t for p in phrases for t in p.tokens}
    assert not signal & set(vocab)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def test_example_record_schema(small_corpus):
    ex = small_corpus[0]
    rec = example_record(ex)
    assert rec["response_text"].split() == ex.tokens
    assert rec["raw_score"] == ex.example.normalized_score
    assert rec["max_score"] == 100.0
    assert rec["bid_id"] == ex.example.bid_id
    assert rec["domain_ids"] == list(ex.example.domain_ids)


def test_gold_sidecar_roundtrip(tmp_path, small_corpus):
    path = tmp_path / "gold.jsonl"
    write_gold_sidecar(small_corpus, path)
    loaded = read_gold_sidecar(path)
    assert set(loaded) == {ex.gold.doc_id for ex in small_corpus}
    for ex in small_corpus:
        assert loaded[ex.gold.doc_id] == ex.gold


# ---------------------------------------------------------------------------
# config validation
# ---------------------------------------------------------------------------


@pytest.mark.parametrize(
    "kw",
    [
        {"n_docs": 0},
        {"doc_len": (10, 5)},
        {"doc_len": (0, 5)},
        {"noise_sigma": -1.0},
        {"enabler_weight": (5.0, 2.0)},
        {"disabler_weight": (float("nan"), 3.0)},
        {"domain_weights": (1.0, 2.0)},
        {"n_enabler_phrases": 10_000},
        {"n_disabler_phrases": -1},
        {"max_phrases_per_doc": -1},
        {"doc_len": (2, 3)},  # too short for the longest pattern
    ],
)
def test_config_rejects(kw):
    with pytest.raises(ConfigError):
        _small_config(**kw)
