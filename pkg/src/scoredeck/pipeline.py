"""Dataset assembly and the model-comparison experiments.

Glue between the corpus, the two model families and the attribution
module: encoding examples, building leak-free per-fold vocabularies and
design matrices, running the four-variant cross-validated comparison
(bag-of-words forest with/without aux, Bi-LSTM with/without aux), and
sweeping the attribution quality metrics over documents with gold spans.

Everything here is deterministic given the input seeds; per-fold and
per-variant streams are derived, never shared.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DataError
from .explain import (
    ForestTokenScorer,
    NeuralTokenScorer,
    explain_tokens,
    occlusion_importance,
    phrase_quality,
    recovery_report,
    top_enablers_disablers,
    PhraseEffect,
    polarity_of,
)
from .features import Vocabulary, bow_from_ids, build_vocab, extract_aux
from .forest import ForestParams, adjusted_r2, fit_forest, mae
from .ingest import ResponseExample
from .model import (
    EncodedExample,
    ModelConfig,
    NeuralScorer,
    SplitDataset,
    train,
    validation_mae,
)
from .synth import SyntheticCorpus, SyntheticExample

VARIANTS = ("forest", "forest+aux", "bilstm+attention", "bilstm+attention+aux")

# Nominal predictor count for the adjusted-R2 column of eval tables; one
# shared value keeps the column comparable across variants with wildly
# different raw feature counts (bag-of-words vs dense aux).
R2_PREDICTORS = 32


def encode_examples(
    examples: Sequence[ResponseExample], vocab: Vocabulary
) -> list[EncodedExample]:
    out = []
    for e in examples:
        aux = e.aux.to_vector() if e.aux is not None else extract_aux(e).to_vector()
        out.append(
            EncodedExample(
                ids=vocab.encode(e.response_tokens),
                aux=aux,
                target=e.normalized_score,
            )
        )
    return out


def corpus_vocab(
    examples: Sequence[ResponseExample],
    max_size: Optional[int] = 2000,
    min_freq: int = 1,
) -> Vocabulary:
    return build_vocab(
        (e.response_tokens for e in examples), min_freq=min_freq, max_size=max_size
    )


def design_matrix(
    encoded: Sequence[EncodedExample], vocab_size: int, include_aux: bool
) -> tuple[np.ndarray, np.ndarray]:
    """Bag-of-words (+ optional aux columns) matrix for the forest."""
    rows = []
    for ex in encoded:
        bow = bow_from_ids(ex.ids, vocab_size)
        rows.append(np.concatenate([bow, ex.aux]) if include_aux else bow)
    X = np.stack(rows)
    y = np.array([ex.target for ex in encoded])
    return X, y


def kfold_indices(
    n: int, k: int, seed: int
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Shuffle once, cut into k folds of near-equal size.

    Returns (train_idx, val_idx) pairs; every index validates exactly once.
    """
    if k < 2:
        raise DataError(f"k must be >= 2, got {k}")
    if k > n:
        raise DataError(f"k={k} exceeds dataset size {n}")
    perm = np.random.default_rng(seed).permutation(n)
    folds = np.array_split(perm, k)
    out = []
    for i, fold in enumerate(folds):
        train_idx = np.concatenate([f for j, f in enumerate(folds) if j != i])
        out.append((np.sort(train_idx), np.sort(fold)))
    return out


def default_cv_config(use_aux: bool = True) -> ModelConfig:
    """Desk-scale network for the cross-validated comparison runs."""
    return ModelConfig(
        b=16,
        e=16,
        d=8,
        r=0.1,
        l=0.005,
        epochs=15,
        batch_size=8,
        pooling="attention",
        use_aux=use_aux,
    )


@dataclass
class VariantResult:
    variant: str
    seed: int
    fold_maes: list[float]
    mean_mae: float
    r2_adj: Optional[float]  # pooled out-of-fold; None when undefined


def _fold_seed(seed: int, fold: int, variant: str) -> int:
    return int(
        np.random.SeedSequence(
            seed, spawn_key=(fold, VARIANTS.index(variant))
        ).generate_state(1)[0]
        % (2**31 - 1)
    )


def evaluate_variants(
    examples: Sequence[ResponseExample],
    k: int = 5,
    seeds: Sequence[int] = (0, 1, 2),
    neural_config: Optional[ModelConfig] = None,
    forest_params: Optional[ForestParams] = None,
    variants: Sequence[str] = VARIANTS,
    max_vocab: Optional[int] = 2000,
    progress: Optional[Callable[[str], None]] = None,
) -> list[VariantResult]:
    """Cross-validated MAE for each model variant, one result row per seed.

    Within a seed every variant sees identical folds.  Vocabulary and the
    aux scaler refit on each training split, so no fold ever leaks into
    the model that predicts it.
    """
    unknown = set(variants) - set(VARIANTS)
    if unknown:
        raise DataError(f"unknown variant(s): {sorted(unknown)}")
    neural_config = neural_config or default_cv_config()
    forest_params = forest_params or ForestParams(n_trees=50)
    n = len(examples)
    targets = np.array([e.normalized_score for e in examples])
    results = []
    for seed in seeds:
        folds = kfold_indices(n, k, seed)
        for variant in variants:
            fold_maes: list[float] = []
            pooled = np.empty(n)
            for fold_i, (tr, va) in enumerate(folds):
                if progress:
                    progress(f"seed={seed} variant={variant} fold={fold_i}")
                fseed = _fold_seed(seed, fold_i, variant)
                train_ex = [examples[i] for i in tr]
                val_ex = [examples[i] for i in va]
                vocab = corpus_vocab(train_ex, max_size=max_vocab)
                enc_tr = encode_examples(train_ex, vocab)
                enc_va = encode_examples(val_ex, vocab)
                if variant.startswith("forest"):
                    aux = variant.endswith("+aux")
                    Xtr, ytr = design_matrix(enc_tr, len(vocab), aux)
                    Xva, yva = design_matrix(enc_va, len(vocab), aux)
                    fm = fit_forest(Xtr, ytr, forest_params, seed=fseed)
                    preds = fm.predict(Xva)
                else:
                    cfg = replace(
                        neural_config, use_aux=variant.endswith("+aux")
                    )
                    net = NeuralScorer.build(cfg, vocab, enc_tr, seed=fseed)
                    net, _ = train(
                        net, SplitDataset(enc_tr, enc_va), seed=fseed
                    )
                    aux_rows = np.stack([ex.aux for ex in enc_va])
                    preds = net.predict_batch(
                        [ex.ids for ex in enc_va], aux_rows
                    )
                fold_maes.append(mae(preds, targets[va]))
                pooled[va] = preds
            try:
                r2 = adjusted_r2(pooled, targets, R2_PREDICTORS)
            except Exception:
                r2 = None
            results.append(
                VariantResult(
                    variant=variant,
                    seed=seed,
                    fold_maes=fold_maes,
                    mean_mae=float(np.mean(fold_maes)),
                    r2_adj=r2,
                )
            )
    return results


def ordering_holds(
    results: Sequence[VariantResult],
    better: str,
    worse: str,
    strict: bool = False,
) -> bool:
    """Majority vote across seeds: is `better` at least as good as `worse`?"""
    seeds = sorted({r.seed for r in results})
    wins = 0
    for seed in seeds:
        a = next(r for r in results if r.seed == seed and r.variant == better)
        b = next(r for r in results if r.seed == seed and r.variant == worse)
        if (a.mean_mae < b.mean_mae) if strict else (a.mean_mae <= b.mean_mae):
            wins += 1
    return wins * 2 > len(seeds)


def format_eval_table(results: Sequence[VariantResult]) -> str:
    """Fixed-width comparison table, one row per variant (seed-averaged)."""
    lines = [f"{'model':<24} {'mae':>8} {'adj_r2':>8}"]
    for variant in VARIANTS:
        rows = [r for r in results if r.variant == variant]
        if not rows:
            continue
        m = float(np.mean([r.mean_mae for r in rows]))
        r2s = [r.r2_adj for r in rows if r.r2_adj is not None]
        r2 = f"{np.mean(r2s):8.3f}" if r2s else f"{'-':>8}"
        lines.append(f"{variant:<24} {m:8.2f} {r2}")
    return "\n".join(lines) + "\n"


def train_split(
    examples: Sequence[ResponseExample],
    val_fraction: float = 0.2,
    seed: int = 0,
    max_vocab: Optional[int] = 2000,
) -> tuple[Vocabulary, SplitDataset]:
    """Single shuffled train/validation split with a train-only vocabulary."""
    if not 0.0 < val_fraction < 1.0:
        raise DataError(f"val_fraction must be in (0,1), got {val_fraction}")
    n = len(examples)
    n_val = max(1, int(round(n * val_fraction)))
    if n_val >= n:
        raise DataError("validation split would swallow the whole dataset")
    perm = np.random.default_rng(seed).permutation(n)
    val_idx = set(perm[:n_val].tolist())
    train_ex = [examples[i] for i in range(n) if i not in val_idx]
    val_ex = [examples[i] for i in range(n) if i in val_idx]
    vocab = corpus_vocab(train_ex, max_size=max_vocab)
    return vocab, SplitDataset(
        train=encode_examples(train_ex, vocab),
        val=encode_examples(val_ex, vocab),
    )


def mean_baseline_mae(dataset: SplitDataset) -> float:
    """MAE of always predicting the training-set mean score."""
    mean = float(np.mean([ex.target for ex in dataset.train]))
    return float(np.mean([abs(ex.target - mean) for ex in dataset.val]))


@dataclass
class AttributionStats:
    """Pooled attribution quality over a set of gold-annotated documents."""

    n_docs: int
    n_gold_enablers: int
    n_recovered_enablers: int
    n_gold_matched: int
    n_polarity_agreed: int
    pq_ei_values: list[float]
    pq_occlusion_values: list[float]

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

    @property
    def pq_ei(self) -> Optional[float]:
        return float(np.mean(self.pq_ei_values)) if self.pq_ei_values else None

    @property
    def pq_occlusion(self) -> Optional[float]:
        if not self.pq_occlusion_values:
            return None
        return float(np.mean(self.pq_occlusion_values))


def _occlusion_phrases(
    scorer, ids: np.ndarray, top_k: int
) -> list[PhraseEffect]:
    """Single-token spans from the occlusion baseline, strongest first."""
    te = occlusion_importance(scorer, ids)
    order = np.argsort(-np.abs(te.effects), kind="stable")[:top_k]
    out = []
    for t in order:
        ei = float(te.effects[t])
        out.append(
            PhraseEffect(
                start=int(t),
                end=int(t),
                phrase="",
                y_in=te.y_full,
                y_ex=float(te.y_full - ei * te.y_full / 100.0)
                if not te.absolute_fallback
                else float(te.y_full - ei),
                ei=ei,
                polarity=polarity_of(ei),
            )
        )
    return out


def attribution_stats(
    net: NeuralScorer,
    docs: Sequence[SyntheticExample],
    top_k: int = 10,
    epsilon: float = 1.0,
    max_n: int = 5,
    jaccard_min: float = 0.5,
) -> AttributionStats:
    """Recovery and phrase-quality numbers for one trained scorer.

    Documents without planted spans contribute nothing (no gold to agree
    with) and are skipped.
    """
    stats = AttributionStats(0, 0, 0, 0, 0, [], [])
    for doc in docs:
        if not doc.gold.spans:
            continue
        ids = net.vocab.encode(doc.tokens)
        aux = extract_aux(doc.example).to_vector()
        scorer = NeuralTokenScorer(net, aux)
        expl = explain_tokens(
            scorer, ids, tokens=doc.tokens, epsilon=epsilon, max_n=max_n
        )
        rec = recovery_report(
            expl.phrases, doc.gold, top_k=top_k, jaccard_min=jaccard_min
        )
        stats.n_docs += 1
        stats.n_gold_enablers += rec.n_gold_enablers
        stats.n_recovered_enablers += rec.n_recovered_enablers
        stats.n_gold_matched += rec.n_gold_matched
        stats.n_polarity_agreed += rec.n_polarity_agreed

        top_en, top_dis = top_enablers_disablers(expl.phrases, top_k)
        pq = phrase_quality(top_en + top_dis, doc.gold, jaccard_min)
        if pq is not None:
            stats.pq_ei_values.append(pq)
        occ = _occlusion_phrases(scorer, ids, top_k)
        pq_occ = phrase_quality(occ, doc.gold, jaccard_min)
        if pq_occ is not None:
            stats.pq_occlusion_values.append(pq_occ)
    return stats
