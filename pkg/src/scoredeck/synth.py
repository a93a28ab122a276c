"""Synthetic corpus with planted enablers/disablers and an exact oracle.

Documents are gibberish filler (Zipf-distributed two-syllable words) with a
handful of recognizable phrases spliced in.  Each phrase pattern carries a
signed weight; the true score is a clipped linear function of pattern
occurrences plus a few document statistics (length, redaction share,
domains).  Because every pattern is made of tokens that appear nowhere
else in the filler vocabulary, the score of any token sequence is exactly
computable, which is what grounds the attribution and ordering checks.

``decoys_per_doc`` optionally plants lone members of multi-token patterns
(zero weight), making a bag-of-words view of the corpus systematically
ambiguous while a sequence reader stays exact.  It defaults to off: at
desk scale the decoys slow sequence-model convergence more than they help
separate the model families.

All randomness derives from the config seed through per-document
``SeedSequence`` spawn keys, so generation is reproducible and could be
parallelized per document without changing a single byte.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterator, Optional

import numpy as np

from .errors import ConfigError, DataError
from .explain import DISABLER, ENABLER, GoldAnnotation, GoldSpan
from .ingest import DOMAIN_CATEGORIES, REDACTED_TOKEN, STOPWORDS, ResponseExample

__all__ = [
    "GeneratorConfig",
    "PlantedPhrase",
    "SyntheticExample",
    "SyntheticCorpus",
    "gen_corpus",
    "oracle_score",
    "planted_phrases",
    "neutral_vocabulary",
    "example_record",
    "write_gold_sidecar",
    "read_gold_sidecar",
]

# Curated phrase patterns.  Every token is globally unique across both
# pools, so a pattern occurrence can never overlap another and counting
# occurrences in a token stream is unambiguous.
_ENABLER_POOL: tuple[tuple[str, ...], ...] = (
    ("care", "coordination"),
    ("timely", "access"),
    ("quality", "improvement", "plan"),
    ("member", "outreach"),
    ("evidence", "based", "practice"),
    ("preventive", "screening", "rates"),
    ("telehealth",),
    ("case", "management", "team"),
    ("provider", "network", "adequacy"),
    ("grievance", "resolution", "tracking"),
    ("wellness", "incentives"),
    ("accreditation",),
)

_DISABLER_POOL: tuple[tuple[str, ...], ...] = (
    ("missed", "deadlines"),
    ("staffing", "shortage"),
    ("billing", "errors", "uncorrected"),
    ("noncompliance",),
    ("outdated", "technology", "stack"),
    ("claim", "denials"),
    ("audit", "findings", "unresolved"),
    ("coverage", "gaps"),
    ("manual", "workarounds", "persist"),
    ("data", "breaches", "reported"),
    ("appointment", "backlog", "growing"),
    ("untrained", "staff"),
)

_SIGNAL_TOKENS = frozenset(
    tok for phrase in _ENABLER_POOL + _DISABLER_POOL for tok in phrase
)

_STATES = ("OH", "IA", "KY", "NM", "VA", "TX")


@dataclass(frozen=True)
class GeneratorConfig:
    """Everything the generator needs; hashable so oracles can cache on it."""

    n_docs: int = 500
    doc_len: tuple[int, int] = (150, 400)
    n_neutral: int = 2000
    n_enabler_phrases: int = 8
    n_disabler_phrases: int = 8
    enabler_weight: tuple[float, float] = (4.0, 12.0)
    disabler_weight: tuple[float, float] = (4.0, 12.0)
    max_phrases_per_doc: int = 6
    decoys_per_doc: tuple[int, int] = (0, 0)
    base_score: float = 55.0
    noise_sigma: float = 3.0
    length_weight: float = 4.0
    redaction_weight: float = -30.0
    domain_weights: tuple[float, ...] = (
        8.0,
        -8.0,
        4.0,
        -4.0,
        12.0,
        -12.0,
        0.0,
        6.0,
        -6.0,
        2.0,
    )
    redaction_prob: float = 0.3
    zipf_exponent: float = 1.1
    seed: int = 0

    def __post_init__(self):
        if self.n_docs < 1:
            raise ConfigError("n_docs must be >= 1")
        if self.doc_len[0] < 1 or self.doc_len[1] < self.doc_len[0]:
            raise ConfigError(f"bad doc_len range {self.doc_len}")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        for pair in (self.enabler_weight, self.disabler_weight):
            if not all(math.isfinite(v) for v in pair) or pair[1] < pair[0]:
                raise ConfigError(f"bad weight range {pair}")
        if not all(math.isfinite(w) for w in self.domain_weights):
            raise ConfigError("domain weights must be finite")
        if len(self.domain_weights) != len(DOMAIN_CATEGORIES):
            raise ConfigError(
                f"need {len(DOMAIN_CATEGORIES)} domain weights, "
                f"got {len(self.domain_weights)}"
            )
        if not (0 <= self.n_enabler_phrases <= len(_ENABLER_POOL)):
            raise ConfigError(
                f"n_enabler_phrases must be in [0, {len(_ENABLER_POOL)}]"
            )
        if not (0 <= self.n_disabler_phrases <= len(_DISABLER_POOL)):
            raise ConfigError(
                f"n_disabler_phrases must be in [0, {len(_DISABLER_POOL)}]"
            )
        if self.max_phrases_per_doc < 0:
            raise ConfigError("max_phrases_per_doc must be >= 0")
        longest = max(
            (len(p) for p in _ENABLER_POOL + _DISABLER_POOL), default=0
        )
        if self.max_phrases_per_doc > 0 and self.doc_len[0] < longest:
            raise ConfigError(
                f"phrases up to {longest} tokens cannot fit documents of "
                f"{self.doc_len[0]} tokens"
            )


@dataclass(frozen=True)
class PlantedPhrase:
    tokens: tuple[str, ...]
    polarity: str  # enabler | disabler
    weight: float  # signed: > 0 enabler, < 0 disabler


@dataclass
class SyntheticExample:
    example: ResponseExample
    gold: GoldAnnotation
    tokens: list[str]
    oracle: float  # noiseless clipped truth

    @property
    def doc_id(self) -> str:
        return self.gold.doc_id


@dataclass
class SyntheticCorpus:
    examples: list[SyntheticExample]
    phrases: list[PlantedPhrase]
    config: GeneratorConfig

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self) -> Iterator[SyntheticExample]:
        return iter(self.examples)

    def __getitem__(self, i) -> SyntheticExample:
        return self.examples[i]


def _word_stream() -> Iterator[str]:
    """Deterministic stream of pronounceable filler words.

    Two CV syllables plus an optional coda; anything colliding with
    stopwords or the signal vocabulary is skipped so filler can never
    complete (or be) a planted pattern.
    """
    onsets = (
        "b", "d", "f", "g", "k", "l", "m", "n", "p", "r",
        "s", "t", "v", "z", "br", "dr", "pl", "st", "tr", "gl",
    )
    vowels = ("a", "e", "i", "o", "u")
    codas = ("", "n", "r", "l", "m")
    seen = set()
    for coda in codas:
        for o1, v1, o2, v2 in itertools.product(onsets, vowels, onsets, vowels):
            word = o1 + v1 + o2 + v2 + coda
            if len(word) < 4 or word in seen:
                continue
            if word in STOPWORDS or word in _SIGNAL_TOKENS:
                continue
            if word == REDACTED_TOKEN.lower():
                continue
            seen.add(word)
            yield word


@lru_cache(maxsize=8)
def neutral_vocabulary(n: int) -> tuple[str, ...]:
    words = tuple(itertools.islice(_word_stream(), n))
    if len(words) < n:
        raise ConfigError(f"filler word space exhausted at {len(words)} < {n}")
    return words


def _stream(config: GeneratorConfig, key: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(config.seed, spawn_key=(key,))
    )


@lru_cache(maxsize=8)
def planted_phrases(config: GeneratorConfig) -> tuple[PlantedPhrase, ...]:
    """The phrase pool with weights — a pure function of the config."""
    rng = _stream(config, 0)
    out: list[PlantedPhrase] = []
    for tokens in _ENABLER_POOL[: config.n_enabler_phrases]:
        w = float(rng.uniform(*config.enabler_weight))
        out.append(PlantedPhrase(tokens=tokens, polarity=ENABLER, weight=w))
    for tokens in _DISABLER_POOL[: config.n_disabler_phrases]:
        w = float(rng.uniform(*config.disabler_weight))
        out.append(PlantedPhrase(tokens=tokens, polarity=DISABLER, weight=-w))
    return tuple(out)


def _count_occurrences(
    tokens: list[str], phrases: tuple[PlantedPhrase, ...]
) -> list[list[int]]:
    """Start positions of every pattern occurrence, per phrase.

    Candidate starts come from an index of signal-token positions, so the
    scan is O(#signal tokens), not O(#phrases * doc length).
    """
    positions: dict[str, list[int]] = {}
    for i, tok in enumerate(tokens):
        if tok in _SIGNAL_TOKENS:
            positions.setdefault(tok, []).append(i)
    found: list[list[int]] = []
    n = len(tokens)
    for phrase in phrases:
        starts = []
        for s in positions.get(phrase.tokens[0], ()):
            if s + len(phrase.tokens) <= n and tuple(
                tokens[s : s + len(phrase.tokens)]
            ) == phrase.tokens:
                starts.append(s)
        found.append(starts)
    return found


def _aux_term(tokens: list[str], domain_ids: tuple[str, ...], config) -> float:
    lo, hi = config.doc_len
    mid = (lo + hi) / 2.0
    halfspan = max((hi - lo) / 2.0, 1.0)
    n = len(tokens)
    n_red = sum(1 for t in tokens if t == REDACTED_TOKEN)
    term = config.length_weight * (n - mid) / halfspan
    term += config.redaction_weight * (n_red / n if n else 0.0)
    for d in domain_ids:
        term += config.domain_weights[DOMAIN_CATEGORIES.index(d)]
    return term


def oracle_score(
    tokens: list[str], domain_ids: tuple[str, ...], config: GeneratorConfig
) -> float:
    """Ground-truth score of any token sequence under this config.

    clip(base + sum of pattern-occurrence weights + document terms, 0, 100).
    Linear before the clip, so masking one planted occurrence (length
    preserved) moves the truth by exactly that phrase's weight.
    """
    phrases = planted_phrases(config)
    total = config.base_score + _aux_term(tokens, domain_ids, config)
    for phrase, starts in zip(phrases, _count_occurrences(tokens, phrases)):
        total += phrase.weight * len(starts)
    return float(min(100.0, max(0.0, total)))


def _choose_slots(
    rng: np.random.Generator, n_filler: int, n_items: int
) -> Optional[np.ndarray]:
    """Insertion gaps pairwise >= 2 apart so no two items ever touch.

    Sampled uniformly by the usual bijection: pick a plain subset from a
    shrunk range, then spread it back out by the minimum spacing.
    """
    if n_items == 0:
        return np.empty(0, dtype=np.int64)
    space = n_filler - n_items + 2
    if space < n_items:
        return None
    base = np.sort(rng.choice(space, size=n_items, replace=False))
    return base + np.arange(n_items)


def _gen_doc(
    i: int,
    config: GeneratorConfig,
    phrases: tuple[PlantedPhrase, ...],
    neutral: tuple[str, ...],
    zipf_p: np.ndarray,
    decoyable: tuple[str, ...],
) -> SyntheticExample:
    rng = _stream(config, 2 + i)
    n_filler = int(rng.integers(config.doc_len[0], config.doc_len[1] + 1))
    filler = [neutral[j] for j in rng.choice(len(neutral), size=n_filler, p=zipf_p)]

    items: list[tuple[str, tuple[str, ...], Optional[PlantedPhrase]]] = []
    if phrases and config.max_phrases_per_doc > 0:
        k = int(rng.integers(0, config.max_phrases_per_doc + 1))
        for t in rng.integers(0, len(phrases), size=k):
            p = phrases[int(t)]
            items.append(("phrase", p.tokens, p))
    if decoyable:
        lo, hi = config.decoys_per_doc
        n_dec = int(rng.integers(lo, hi + 1))
        for t in rng.choice(len(decoyable), size=n_dec):
            items.append(("decoy", (decoyable[int(t)],), None))
    if rng.random() < config.redaction_prob:
        for run in rng.integers(1, 6, size=int(rng.integers(1, 4))):
            items.append(("redact", (REDACTED_TOKEN,) * int(run), None))

    slots = _choose_slots(rng, n_filler, len(items))
    if slots is None:
        raise ConfigError(
            f"cannot fit {len(items)} insertions into a {n_filler}-token "
            "document; raise doc_len or lower the planting rates"
        )
    order = rng.permutation(len(items))

    tokens: list[str] = []
    gold: list[GoldSpan] = []
    prev = 0
    for slot, which in zip(slots, order):
        kind, toks, phrase = items[int(which)]
        tokens.extend(filler[prev:slot])
        start = len(tokens)
        tokens.extend(toks)
        if kind == "phrase":
            gold.append(
                GoldSpan(
                    start=start,
                    end=start + len(toks) - 1,
                    polarity=phrase.polarity,
                    weight=phrase.weight,
                    phrase=" ".join(toks),
                )
            )
        prev = int(slot)
    tokens.extend(filler[prev:])
    gold.sort(key=lambda g: g.start)

    # Integrity: the pattern scan must see exactly the planted occurrences.
    planted_count = sum(1 for kind, _, _ in items if kind == "phrase")
    scanned = _count_occurrences(tokens, phrases)
    if sum(len(s) for s in scanned) != planted_count:
        raise DataError(f"generator integrity failure in document {i}")

    n_domains = int(rng.integers(1, 3))
    picks = rng.choice(len(DOMAIN_CATEGORIES), size=n_domains, replace=False)
    domain_ids = tuple(sorted(DOMAIN_CATEGORIES[int(d)] for d in picks))

    truth = oracle_score(tokens, domain_ids, config)
    noise = float(rng.normal(0.0, config.noise_sigma)) if config.noise_sigma else 0.0
    raw = float(min(100.0, max(0.0, truth + noise)))

    bid_id = f"SYN{i:04d}"
    question_id = f"Q{1 + i % 8}"
    example = ResponseExample(
        question_id=question_id,
        question_text=f"{question_id}. Describe the offeror's approach for "
        f"service area {1 + i % 8}.",
        response_tokens=list(tokens),
        normalized_score=raw,
        domain_ids=domain_ids,
        bid_id=bid_id,
        state=_STATES[i % len(_STATES)],
        year=2019 + i % 5,
    )
    return SyntheticExample(
        example=example,
        gold=GoldAnnotation(doc_id=f"{bid_id}/{question_id}", spans=gold),
        tokens=tokens,
        oracle=truth,
    )


def gen_corpus(config: Optional[GeneratorConfig] = None) -> SyntheticCorpus:
    """Generate the full corpus; same config (and seed) → same corpus."""
    config = config if config is not None else GeneratorConfig()
    phrases = planted_phrases(config)
    neutral = neutral_vocabulary(config.n_neutral)
    ranks = np.arange(1, config.n_neutral + 1, dtype=np.float64)
    zipf_p = ranks**-config.zipf_exponent
    zipf_p /= zipf_p.sum()
    decoyable = tuple(
        tok for p in phrases if len(p.tokens) >= 2 for tok in p.tokens
    )
    examples = [
        _gen_doc(i, config, phrases, neutral, zipf_p, decoyable)
        for i in range(config.n_docs)
    ]
    return SyntheticCorpus(examples=examples, phrases=list(phrases), config=config)


def example_record(ex: SyntheticExample) -> dict:
    """Corpus-file record (the ingest JSONL schema) for one document."""
    e = ex.example
    return {
        "bid_id": e.bid_id,
        "state": e.state,
        "year": e.year,
        "domain_ids": list(e.domain_ids),
        "question_id": e.question_id,
        "question": e.question_text,
        "response_text": " ".join(ex.tokens),
        "raw_score": e.normalized_score,
        "max_score": 100.0,
    }


def write_gold_sidecar(corpus: SyntheticCorpus, path) -> None:
    """One JSON line per document: planted spans with polarity and weight."""
    with open(path, "w", encoding="utf-8") as fh:
        for ex in corpus:
            rec = {
                "doc_id": ex.gold.doc_id,
                "spans": [
                    {
                        "start": g.start,
                        "end": g.end,
                        "polarity": g.polarity,
                        "weight": g.weight,
                        "phrase": g.phrase,
                    }
                    for g in ex.gold.spans
                ],
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_gold_sidecar(path) -> dict[str, GoldAnnotation]:
    out: dict[str, GoldAnnotation] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            out[rec["doc_id"]] = GoldAnnotation(
                doc_id=rec["doc_id"],
                spans=[
                    GoldSpan(
                        start=s["start"],
                        end=s["end"],
                        polarity=s["polarity"],
                        weight=s["weight"],
                        phrase=s["phrase"],
                    )
                    for s in rec["spans"]
                ],
            )
    return out
