"""Auxiliary document features and bag-of-words text vectors.

The auxiliary vector concatenates: word count, average word length,
lexical richness, a 12-tag part-of-speech distribution, the six entity
mask counts, redaction percentage, a 10-way domain one-hot, and an
optional mean-pooled document embedding.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import DataError, DomainError
from .ingest import (
    DOMAIN_CATEGORIES,
    MASK_TOKENS,
    REDACTED_TOKEN,
    ResponseExample,
    compute_redaction_pct,
)

POS_TAGS = (
    "NOUN", "VERB", "ADJ", "ADV", "PRON", "DET",
    "ADP", "NUM", "CONJ", "PRT", "PUNCT", "X",
)

# Closed-class lexicons checked before the suffix rules.  Membership is
# first-match in the order below.
_LEXICON = {}
for _tag, _words in (
    ("DET", "the a an this that these those each every some any no all both "
            "few many much several most other another such"),
    ("PRON", "i you he she it we they me him her us them my your his its our "
             "their mine yours hers ours theirs myself yourself himself "
             "herself itself ourselves themselves who whom whose which what"),
    ("ADP", "of in to for with on at by from about as into like through "
            "after over between out against during without before under "
            "around among within across behind beyond near except"),
    ("CONJ", "and or but nor so yet although because while if when than "
             "whether since unless"),
    ("PRT", "not"),
    ("ADJ", "good better best bad high low new old large small timely "
            "comprehensive effective efficient strong robust important key "
            "critical significant clinical medical annual available"),
):
    for _w in _words.split():
        _LEXICON.setdefault(_w, _tag)

_NUM_RE = re.compile(r"^\d+(?:\.\d+)?$")


def pos_tag(tokens: Sequence[str]) -> list[str]:
    """Rule-based tagging over the 12-tag set.

    Lexicon lookup first, then suffix rules (-ly ADV, -ing/-ed VERB,
    -tion/-ment/-ness NOUN, numeric NUM); everything else defaults to NOUN.
    There is deliberately no "-s" verb rule: it mislabels plural nouns.
    """
    tags = []
    for tok in tokens:
        if tok in MASK_TOKENS or tok == REDACTED_TOKEN:
            tags.append("X")
        elif tok in _LEXICON:
            tags.append(_LEXICON[tok])
        elif _NUM_RE.match(tok):
            tags.append("NUM")
        elif not any(c.isalnum() for c in tok):
            tags.append("PUNCT")
        elif tok.endswith("ly"):
            tags.append("ADV")
        elif tok.endswith(("ing", "ed")):
            tags.append("VERB")
        elif tok.endswith(("tion", "ment", "ness")):
            tags.append("NOUN")
        else:
            tags.append("NOUN")
    return tags


def pos_distribution(tokens: Sequence[str]) -> np.ndarray:
    """Normalized tag frequencies; all-zero for empty input."""
    dist = np.zeros(len(POS_TAGS))
    if not tokens:
        return dist
    counts = Counter(pos_tag(tokens))
    for i, tag in enumerate(POS_TAGS):
        dist[i] = counts.get(tag, 0)
    return dist / dist.sum()


def lexical_richness(tokens: Sequence[str]) -> float:
    """Unique-token to total-token ratio."""
    if not tokens:
        raise DomainError("lexical_richness undefined for empty input")
    return len(set(tokens)) / len(tokens)


@dataclass
class AuxFeatures:
    n_words: int
    avg_word_len: float
    lexical_richness: float
    pos_dist: np.ndarray
    mask_counts: np.ndarray  # order follows MASK_TOKENS
    redaction_pct: float
    domain_onehot: np.ndarray
    doc_vector: np.ndarray

    def to_vector(self) -> np.ndarray:
        return np.concatenate(
            [
                [self.n_words, self.avg_word_len, self.lexical_richness],
                self.pos_dist,
                self.mask_counts,
                [self.redaction_pct],
                self.domain_onehot,
                self.doc_vector,
            ]
        ).astype(np.float64)


def aux_dim(embedding_dim: int = 0) -> int:
    return 3 + len(POS_TAGS) + len(MASK_TOKENS) + 1 + len(DOMAIN_CATEGORIES) + embedding_dim


class EmbeddingTable:
    """Static word vectors loaded from a text file (token v1 ... vE)."""

    def __init__(self, vectors: dict[str, np.ndarray], dim: int):
        self.vectors = vectors
        self.dim = dim

    @classmethod
    def load(cls, path) -> "EmbeddingTable":
        vectors: dict[str, np.ndarray] = {}
        dim = None
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                parts = line.rstrip("\n").split(" ")
                if len(parts) < 2:
                    continue
                try:
                    vec = np.array([float(v) for v in parts[1:]], dtype=np.float64)
                except ValueError:
                    raise DataError(
                        f"{path}:{line_no}: non-numeric embedding value"
                    ) from None
                if dim is None:
                    dim = vec.size
                elif vec.size != dim:
                    raise DataError(
                        f"{path}:{line_no}: dimension {vec.size} != {dim}"
                    )
                vectors[parts[0]] = vec
        if not vectors:
            raise DataError(f"{path}: no embeddings found")
        return cls(vectors, dim)

    def pool(self, tokens: Sequence[str]) -> np.ndarray:
        """Mean of rows for in-vocabulary tokens; zero vector when none."""
        rows = [self.vectors[t] for t in tokens if t in self.vectors]
        if not rows:
            return np.zeros(self.dim)
        return np.mean(rows, axis=0)


def extract_aux(
    example: ResponseExample,
    embedding_table: Optional[EmbeddingTable] = None,
) -> AuxFeatures:
    """Compute the full auxiliary feature set for one example."""
    tokens = example.response_tokens
    if not tokens:
        raise DataError("cannot extract features from an empty token sequence")
    if not example.domain_ids:
        raise DomainError("example has no domain ids")
    unknown = set(example.domain_ids) - set(DOMAIN_CATEGORIES)
    if unknown:
        raise DomainError(f"unknown domain id(s): {sorted(unknown)}")

    onehot = np.zeros(len(DOMAIN_CATEGORIES))
    for dom in example.domain_ids:
        onehot[DOMAIN_CATEGORIES.index(dom)] = 1.0

    counts = Counter(tokens)
    mask_counts = np.array([counts.get(t, 0) for t in MASK_TOKENS], dtype=np.float64)

    if embedding_table is not None:
        doc_vector = embedding_table.pool(tokens)
    else:
        doc_vector = np.zeros(0)

    return AuxFeatures(
        n_words=len(tokens),
        avg_word_len=sum(len(t) for t in tokens) / len(tokens),
        lexical_richness=lexical_richness(tokens),
        pos_dist=pos_distribution(tokens),
        mask_counts=mask_counts,
        redaction_pct=compute_redaction_pct(tokens),
        domain_onehot=onehot,
        doc_vector=doc_vector,
    )


# ---------------------------------------------------------------------------
# Vocabulary and bag-of-words vectors
# ---------------------------------------------------------------------------

PAD_ID, UNK_ID, MASK_ID = 0, 1, 2
RESERVED = ("<PAD>", "<UNK>", "<MASK>")


@dataclass
class Vocabulary:
    id_to_token: list[str]
    min_freq: int = 1
    token_to_id: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.token_to_id:
            self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}

    def __len__(self):
        return len(self.id_to_token)

    def encode(self, tokens: Sequence[str]) -> np.ndarray:
        return np.array(
            [self.token_to_id.get(t, UNK_ID) for t in tokens], dtype=np.int64
        )

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.id_to_token[i] for i in ids]


def build_vocab(
    corpus: Iterable[Sequence[str]], min_freq: int = 1, max_size: Optional[int] = None
) -> Vocabulary:
    """Frequency-ordered vocabulary with reserved ids 0=PAD, 1=UNK, 2=MASK.

    Tokens with corpus frequency >= min_freq are admitted in order of
    descending frequency, ties broken lexicographically.
    """
    if min_freq < 1:
        raise DomainError(f"min_freq must be >= 1, got {min_freq}")
    counts = Counter()
    for tokens in corpus:
        counts.update(tokens)
    admitted = sorted(
        (t for t, n in counts.items() if n >= min_freq),
        key=lambda t: (-counts[t], t),
    )
    if max_size is not None:
        admitted = admitted[: max(0, max_size - len(RESERVED))]
    return Vocabulary(id_to_token=list(RESERVED) + admitted, min_freq=min_freq)


@dataclass
class BowVector:
    indices: np.ndarray
    weights: np.ndarray

    def to_dense(self, size: int) -> np.ndarray:
        dense = np.zeros(size)
        dense[self.indices] = self.weights
        return dense


@dataclass
class IdfTable:
    """Smoothed inverse document frequencies fitted on the training corpus."""

    idf: np.ndarray  # one entry per vocabulary id
    n_docs: int


def fit_idf(corpus: Iterable[Sequence[str]], vocab: Vocabulary) -> IdfTable:
    df = np.zeros(len(vocab))
    n_docs = 0
    for tokens in corpus:
        n_docs += 1
        for idx in set(vocab.token_to_id.get(t, UNK_ID) for t in tokens):
            df[idx] += 1
    idf = np.log((1.0 + n_docs) / (1.0 + df)) + 1.0
    return IdfTable(idf=idf, n_docs=n_docs)


def vectorize_bow(
    tokens: Sequence[str],
    vocab: Vocabulary,
    weighting: str = "count",
    idf_table: Optional[IdfTable] = None,
) -> BowVector:
    """Sparse bag-of-words vector; unknown tokens count at the UNK index.

    tfidf weight = count * (ln((1+N)/(1+df)) + 1) with the idf table fitted
    on training data only.
    """
    if weighting not in ("count", "tfidf"):
        raise DomainError(f"unknown weighting {weighting!r}")
    if weighting == "tfidf" and idf_table is None:
        raise DomainError("tfidf weighting requires a fitted idf table")
    counts = Counter(vocab.token_to_id.get(t, UNK_ID) for t in tokens)
    indices = np.array(sorted(counts), dtype=np.int64)
    weights = np.array([counts[i] for i in indices], dtype=np.float64)
    if weighting == "tfidf":
        weights = weights * idf_table.idf[indices]
    return BowVector(indices=indices, weights=weights)


def bow_from_ids(ids: np.ndarray, vocab_size: int) -> np.ndarray:
    """Dense token-count vector from an already-encoded id sequence.

    PAD and MASK ids contribute nothing, so masking a token removes it from
    the bag — the bag-of-words analog of the neural MASK embedding.  Counts
    agree with vectorize_bow on the encoding of the same tokens.
    """
    ids = np.asarray(ids, dtype=np.int64)
    kept = ids[(ids != PAD_ID) & (ids != MASK_ID)]
    return np.bincount(kept, minlength=vocab_size).astype(np.float64)
