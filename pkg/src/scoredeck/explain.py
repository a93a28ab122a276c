"""Phrase-level attribution: finding enablers and disablers.

Two-step Exclusion-Inclusion attribution.  Exclusion screens tokens by
leave-one-out masking and keeps those whose removal moves the prediction by
at least a relative threshold.  Inclusion groups the survivors into
contiguous candidate phrases, masks each whole phrase, and reports the
relative prediction change: positive means the phrase props the score up
(an enabler), negative means it drags it down (a disabler).

A single-token occlusion baseline and the phrase-agreement metric used to
compare the two live here as well.  Everything operates on encoded token
ids through a minimal scorer interface, so the neural model and the
bag-of-words forest plug in the same way.
"""

from __future__ import annotations

import html
from dataclasses import dataclass
from typing import Optional, Protocol, Sequence, Union

import numpy as np

from .errors import AnnotationError, DataError, DomainError, ZeroBaseline
from .features import MASK_ID, bow_from_ids

EPSILON_DEFAULT = 1.0  # exclusion threshold, percent of the full prediction
MAX_N_DEFAULT = 5  # longest candidate phrase, tokens
BASELINE_EPS = 1e-6  # |prediction| below this cannot anchor a relative change
JACCARD_DEFAULT = 0.5

ENABLER = "enabler"
DISABLER = "disabler"
NEUTRAL = "neutral"


class TokenScorer(Protocol):
    """Anything that can score batches of token-id sequences."""

    def score_ids(self, ids_batch: Sequence[np.ndarray]) -> np.ndarray: ...


class NeuralTokenScorer:
    """Neural scorer with the auxiliary vector frozen.

    Masking only perturbs the text branch; the aux features keep describing
    the original document, which is what "what would the score be without
    this phrase" means for a reader.
    """

    def __init__(self, model, aux: np.ndarray):
        self.model = model
        self.aux = np.asarray(aux, dtype=np.float64)

    def score_ids(self, ids_batch: Sequence[np.ndarray]) -> np.ndarray:
        return self.model.predict_ids(ids_batch, self.aux)


class ForestTokenScorer:
    """Forest over bag-of-words + aux with the aux part frozen.

    MASK ids fall out of the bag (see bow_from_ids), so masking a token
    here means removing its count — the closest bag-of-words analog of the
    neural mask embedding.
    """

    def __init__(self, forest, vocab_size: int, aux: np.ndarray):
        self.forest = forest
        self.vocab_size = int(vocab_size)
        self.aux = np.asarray(aux, dtype=np.float64)

    def score_ids(self, ids_batch: Sequence[np.ndarray]) -> np.ndarray:
        rows = [
            np.concatenate([bow_from_ids(ids, self.vocab_size), self.aux])
            for ids in ids_batch
        ]
        return self.forest.predict(np.stack(rows))


@dataclass(frozen=True)
class PhraseEffect:
    """Effect of one contiguous phrase on the prediction.

    ``start``/``end`` are inclusive token indices.  ``ei`` is the signed
    relative change in percent (or the absolute score difference when the
    full prediction was too close to zero to anchor a ratio; see
    Explanation.absolute_fallback).
    """

    start: int
    end: int
    phrase: str
    y_in: float
    y_ex: float
    ei: float
    polarity: str

    def __len__(self) -> int:
        return self.end - self.start + 1

    def to_record(self) -> dict:
        return {
            "span_start": self.start,
            "span_end": self.end,
            "phrase": self.phrase,
            "y_in": self.y_in,
            "y_ex": self.y_ex,
            "ei": self.ei,
            "polarity": self.polarity,
        }


@dataclass(frozen=True)
class GoldSpan:
    start: int
    end: int  # inclusive
    polarity: str
    weight: float
    phrase: str


@dataclass
class GoldAnnotation:
    doc_id: str
    spans: list[GoldSpan]


@dataclass
class TokenEffects:
    """Per-token leave-one-out effects for one document."""

    y_full: float
    effects: np.ndarray
    absolute_fallback: bool = False


@dataclass
class Explanation:
    """Bundle produced by explain_tokens: everything a report needs."""

    y_full: float
    token_effects: np.ndarray
    importance: np.ndarray  # bool, True = survived exclusion
    phrases: list[PhraseEffect]
    absolute_fallback: bool = False


def polarity_of(ei: float) -> str:
    if ei > 0:
        return ENABLER
    if ei < 0:
        return DISABLER
    return NEUTRAL


def ei_score(y_in: float, y_ex: float) -> float:
    """Signed relative prediction change, in percent.

    Positive when removing the phrase lowers the prediction, i.e. the
    phrase was helping.  Undefined around a zero baseline: raises
    ZeroBaseline so callers can fall back to absolute differences.
    """
    if abs(y_in) < BASELINE_EPS:
        raise ZeroBaseline(
            f"prediction {y_in!r} too close to zero for a relative change"
        )
    return 100.0 * (y_in - y_ex) / y_in


def _relative_effects(y_full: float, y_ex: np.ndarray) -> tuple[np.ndarray, bool]:
    if abs(y_full) < BASELINE_EPS:
        return y_full - y_ex, True
    return 100.0 * (y_full - y_ex) / y_full, False


def _check_ids(ids) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise DataError("need a non-empty 1-D token id sequence")
    return ids


def occlusion_importance(scorer: TokenScorer, ids: np.ndarray) -> TokenEffects:
    """Single-token masking effects — the word-level baseline.

    One model call per token, batched; no phrase assembly.
    """
    ids = _check_ids(ids)
    variants: list[np.ndarray] = [ids]
    for t in range(ids.size):
        v = ids.copy()
        v[t] = MASK_ID
        variants.append(v)
    scores = scorer.score_ids(variants)
    effects, fallback = _relative_effects(float(scores[0]), scores[1:])
    return TokenEffects(
        y_full=float(scores[0]), effects=effects, absolute_fallback=fallback
    )


def exclusion_step(
    scorer: TokenScorer, ids: np.ndarray, epsilon: float = EPSILON_DEFAULT
) -> np.ndarray:
    """Leave-one-out screening: which tokens matter at all?

    Masks each token independently and keeps those whose effect magnitude
    reaches ``epsilon`` (percent).  The evaluations are independent, so a
    parallel fan-out must produce the same mask as this sequential batch.
    """
    if epsilon < 0:
        raise DomainError(f"epsilon must be >= 0, got {epsilon}")
    token_effects = occlusion_importance(scorer, ids)
    return np.abs(token_effects.effects) >= epsilon


def _candidate_spans(importance: np.ndarray, max_n: int) -> list[tuple[int, int]]:
    """Chop each maximal run of important tokens into chunks of <= max_n."""
    spans: list[tuple[int, int]] = []
    n = len(importance)
    i = 0
    while i < n:
        if not importance[i]:
            i += 1
            continue
        j = i
        while j + 1 < n and importance[j + 1]:
            j += 1
        start = i
        while start <= j:
            end = min(start + max_n - 1, j)
            spans.append((start, end))
            start = end + 1
        i = j + 1
    return spans


def inclusion_step(
    scorer: TokenScorer,
    ids: np.ndarray,
    importance: np.ndarray,
    max_n: int = MAX_N_DEFAULT,
    tokens: Optional[Sequence[str]] = None,
    y_in: Optional[float] = None,
) -> list[PhraseEffect]:
    """Score the surviving phrases by masking each one whole.

    Candidates are contiguous runs of important tokens, cut left-to-right
    into pieces of at most ``max_n`` tokens; important tokens separated by
    unimportant ones never share a phrase.  Results sorted by |effect|
    descending.  No important tokens → empty list.
    """
    if max_n < 1:
        raise DomainError(f"max_n must be >= 1, got {max_n}")
    ids = _check_ids(ids)
    importance = np.asarray(importance, dtype=bool)
    if importance.shape != ids.shape:
        raise DataError("importance mask and ids disagree in length")
    spans = _candidate_spans(importance, max_n)
    if not spans:
        return []
    variants: list[np.ndarray] = []
    for s, e in spans:
        v = ids.copy()
        v[s : e + 1] = MASK_ID
        variants.append(v)
    if y_in is None:
        y_in = float(scorer.score_ids([ids])[0])
    y_ex = scorer.score_ids(variants)
    effects, _ = _relative_effects(y_in, y_ex)
    out = []
    for (s, e), ei, yx in zip(spans, effects, y_ex):
        text = " ".join(tokens[s : e + 1]) if tokens is not None else ""
        out.append(
            PhraseEffect(
                start=s,
                end=e,
                phrase=text,
                y_in=float(y_in),
                y_ex=float(yx),
                ei=float(ei),
                polarity=polarity_of(float(ei)),
            )
        )
    out.sort(key=lambda p: (-abs(p.ei), p.start))
    return out


def explain_tokens(
    scorer: TokenScorer,
    ids: np.ndarray,
    tokens: Optional[Sequence[str]] = None,
    epsilon: float = EPSILON_DEFAULT,
    max_n: int = MAX_N_DEFAULT,
) -> Explanation:
    """Full exclusion + inclusion pass over one document."""
    if epsilon < 0:
        raise DomainError(f"epsilon must be >= 0, got {epsilon}")
    ids = _check_ids(ids)
    token_effects = occlusion_importance(scorer, ids)
    importance = np.abs(token_effects.effects) >= epsilon
    phrases = inclusion_step(
        scorer, ids, importance, max_n, tokens=tokens, y_in=token_effects.y_full
    )
    return Explanation(
        y_full=token_effects.y_full,
        token_effects=token_effects.effects,
        importance=importance,
        phrases=phrases,
        absolute_fallback=token_effects.absolute_fallback,
    )


def top_enablers_disablers(
    effects: Sequence[PhraseEffect], k: int
) -> tuple[list[PhraseEffect], list[PhraseEffect]]:
    """The k strongest positive and k strongest negative phrases."""
    if k < 1:
        raise DomainError(f"k must be >= 1, got {k}")
    enablers = sorted(
        (p for p in effects if p.ei > 0), key=lambda p: (-p.ei, p.start)
    )
    disablers = sorted(
        (p for p in effects if p.ei < 0), key=lambda p: (p.ei, p.start)
    )
    return enablers[:k], disablers[:k]


def _span_jaccard(a_start: int, a_end: int, b_start: int, b_end: int) -> float:
    inter = min(a_end, b_end) - max(a_start, b_start) + 1
    if inter <= 0:
        return 0.0
    union = (a_end - a_start + 1) + (b_end - b_start + 1) - inter
    return inter / union


def _check_gold(spans: Sequence[GoldSpan]) -> list[GoldSpan]:
    ordered = sorted(spans, key=lambda g: g.start)
    for prev, cur in zip(ordered, ordered[1:]):
        if cur.start <= prev.end:
            raise AnnotationError(
                f"gold spans overlap: ({prev.start},{prev.end}) and "
                f"({cur.start},{cur.end})"
            )
    return ordered


def phrase_quality(
    predicted: Sequence[PhraseEffect],
    gold: Union[GoldAnnotation, Sequence[GoldSpan]],
    jaccard_min: float = JACCARD_DEFAULT,
) -> Optional[float]:
    """Fraction of predicted phrases that agree with some gold span.

    Agreement = same polarity and token-index Jaccard >= jaccard_min.
    Precision over predictions; None (undefined) when nothing was
    predicted.
    """
    if not 0.0 < jaccard_min <= 1.0:
        raise DomainError(f"jaccard_min must be in (0, 1], got {jaccard_min}")
    spans = gold.spans if isinstance(gold, GoldAnnotation) else list(gold)
    spans = _check_gold(spans)
    if not predicted:
        return None
    agreed = 0
    for p in predicted:
        for g in spans:
            if p.polarity == g.polarity and (
                _span_jaccard(p.start, p.end, g.start, g.end) >= jaccard_min
            ):
                agreed += 1
                break
    return agreed / len(predicted)


@dataclass
class RecoveryReport:
    """How well the attribution rediscovers planted phrases in one document."""

    n_gold_enablers: int
    n_recovered_enablers: int
    n_gold_matched: int  # gold spans of either polarity matched by top-|ei| spans
    n_polarity_agreed: int

    @property
    def enabler_recovery(self) -> Optional[float]:
        if self.n_gold_enablers == 0:
            return None
        return self.n_recovered_enablers / self.n_gold_enablers

    @property
    def polarity_agreement(self) -> Optional[float]:
        if self.n_gold_matched == 0:
            return None
        return self.n_polarity_agreed / self.n_gold_matched


def recovery_report(
    effects: Sequence[PhraseEffect],
    gold: Union[GoldAnnotation, Sequence[GoldSpan]],
    top_k: int = 10,
    jaccard_min: float = JACCARD_DEFAULT,
) -> RecoveryReport:
    """Match planted spans against the strongest reported spans.

    A planted enabler counts as recovered when some span among the top-k
    positive effects overlaps it with Jaccard >= jaccard_min.  Polarity
    agreement is measured over planted spans of either sign that match any
    top-k-by-|effect| span.
    """
    spans = gold.spans if isinstance(gold, GoldAnnotation) else list(gold)
    spans = _check_gold(spans)
    top_pos = sorted(
        (p for p in effects if p.ei > 0), key=lambda p: (-p.ei, p.start)
    )[:top_k]
    top_any = sorted(effects, key=lambda p: (-abs(p.ei), p.start))[:top_k]

    n_enablers = sum(1 for g in spans if g.polarity == ENABLER)
    recovered = 0
    for g in spans:
        if g.polarity != ENABLER:
            continue
        if any(
            _span_jaccard(p.start, p.end, g.start, g.end) >= jaccard_min
            for p in top_pos
        ):
            recovered += 1

    matched = 0
    agreed = 0
    for g in spans:
        best = None
        best_j = 0.0
        for p in top_any:
            j = _span_jaccard(p.start, p.end, g.start, g.end)
            if j >= jaccard_min and j > best_j:
                best, best_j = p, j
        if best is not None:
            matched += 1
            if best.polarity == g.polarity:
                agreed += 1
    return RecoveryReport(
        n_gold_enablers=n_enablers,
        n_recovered_enablers=recovered,
        n_gold_matched=matched,
        n_polarity_agreed=agreed,
    )


# --- highlight rendering -------------------------------------------------

_ANSI_GREEN = "\x1b[32m"
_ANSI_RED = "\x1b[31m"
_ANSI_RESET = "\x1b[0m"


def _token_styles(n: int, effects: Sequence[PhraseEffect]) -> list[str]:
    styles = [NEUTRAL] * n
    # Weakest first so the strongest phrase wins any (rare) overlap.
    for p in sorted(effects, key=lambda q: abs(q.ei)):
        if p.polarity == NEUTRAL:
            continue
        for t in range(p.start, min(p.end + 1, n)):
            styles[t] = p.polarity
    return styles


def render_terminal(
    tokens: Sequence[str], effects: Sequence[PhraseEffect], color: bool = True
) -> str:
    """One-line rendering with enablers green / disablers red.

    With color=False falls back to [+ ... ] / [- ... ] bracket markers.
    """
    styles = _token_styles(len(tokens), effects)
    pieces: list[str] = []
    i = 0
    while i < len(tokens):
        style = styles[i]
        j = i
        while j + 1 < len(tokens) and styles[j + 1] == style:
            j += 1
        chunk = " ".join(tokens[i : j + 1])
        if style == ENABLER:
            chunk = (
                f"{_ANSI_GREEN}{chunk}{_ANSI_RESET}" if color else f"[+ {chunk} ]"
            )
        elif style == DISABLER:
            chunk = f"{_ANSI_RED}{chunk}{_ANSI_RESET}" if color else f"[- {chunk} ]"
        pieces.append(chunk)
        i = j + 1
    return " ".join(pieces)


def render_html(
    tokens: Sequence[str],
    effects: Sequence[PhraseEffect],
    title: str = "score explanation",
) -> str:
    """Self-contained HTML page with green/red phrase highlights."""
    styles = _token_styles(len(tokens), effects)
    body: list[str] = []
    i = 0
    while i < len(tokens):
        style = styles[i]
        j = i
        while j + 1 < len(tokens) and styles[j + 1] == style:
            j += 1
        chunk = html.escape(" ".join(tokens[i : j + 1]))
        if style == ENABLER:
            body.append(f'<mark class="enabler">{chunk}</mark>')
        elif style == DISABLER:
            body.append(f'<mark class="disabler">{chunk}</mark>')
        else:
            body.append(chunk)
        i = j + 1
    rows = "".join(
        f"<tr><td>{html.escape(p.phrase)}</td><td>{p.polarity}</td>"
        f"<td>{p.ei:+.2f}%</td></tr>"
        for p in sorted(effects, key=lambda q: (-abs(q.ei), q.start))
    )
    return (
        "<!doctype html><html><head><meta charset='utf-8'>"
        f"<title>{html.escape(title)}</title>"
        "<style>"
        "body{font-family:sans-serif;max-width:60em;margin:2em auto;}"
        "mark.enabler{background:#b6e8b0;}"
        "mark.disabler{background:#f3b0b0;}"
        "table{border-collapse:collapse;margin-top:1.5em;}"
        "td{border:1px solid #999;padding:0.3em 0.8em;}"
        "</style></head><body>"
        f"<h1>{html.escape(title)}</h1>"
        f"<p>{' '.join(body)}</p>"
        f"<table><tr><th>phrase</th><th>polarity</th><th>effect</th></tr>{rows}"
        "</table></body></html>"
    )
