"""Release gate: one test per headline guarantee, measured numbers printed.

Run with -v to read this file as a scorecard.  The corpus-level checks share
the session fixtures from conftest (500-document corpus, seed-0 trained
scorer); the multi-seed attribution comparison trains four more scorers and
dominates the runtime of this file.
"""

import time

import numpy as np
import pytest

import scoredeck.autodiff as ad
from scoredeck import cli
from scoredeck.autodiff import Tensor, grad_check
from scoredeck.explain import ei_score
from scoredeck.features import PAD_ID, aux_dim, build_vocab
from scoredeck.forest import ForestParams, fit_forest, tree_predict
from scoredeck.ingest import (
    DocMeta,
    load_document_file,
    mask_entities,
    normalize_score,
    parse_document,
    scan_unmasked,
)
from scoredeck.model import (
    EncodedExample,
    ModelConfig,
    NeuralScorer,
    clip_activation,
    clipped_l1_loss,
    train,
    validation_mae,
)
from scoredeck.pipeline import (
    attribution_stats,
    encode_examples,
    evaluate_variants,
    format_eval_table,
    mean_baseline_mae,
    ordering_holds,
    train_split,
)

# ---------------------------------------------------------------------------
# 1. gradient correctness
# ---------------------------------------------------------------------------


def _full_model_grad_err(seed: int) -> float:
    """Max rel. error of the complete scorer's gradients at one seeded point."""
    rng = np.random.default_rng(1000 + seed)
    tokens = [f"w{i}" for i in range(24)]
    vocab = build_vocab([tokens] * 3, min_freq=1)
    examples = [
        EncodedExample(
            ids=rng.integers(3, len(vocab), size=int(rng.integers(4, 13))),
            aux=rng.normal(size=aux_dim()),
            target=float(rng.uniform(20, 80)),
        )
        for _ in range(8)
    ]
    cfg = ModelConfig(b=8, e=8, d=8, r=0.0, epochs=1, batch_size=4)
    net = NeuralScorer.build(cfg, vocab, examples, seed=seed)

    batch = examples[:4]
    lengths = np.array([len(ex.ids) for ex in batch])
    ids = np.full((4, 12), PAD_ID, dtype=np.int64)
    for i, ex in enumerate(batch):
        ids[i, : len(ex.ids)] = ex.ids
    aux = np.stack([ex.aux for ex in batch])
    targets = np.array([ex.target for ex in batch])

    def f():
        pred = net.forward(ids, lengths, aux, train=True, rng=np.random.default_rng(0))
        return clipped_l1_loss(pred, targets)

    params = list(net.params.values())
    jitter = iter(range(10**6))

    def resample():
        r = np.random.default_rng(seed * 7919 + 13 + next(jitter))
        for p in params:
            p.data = p.data + r.normal(scale=0.05, size=p.data.shape)

    # floor=1e-5: the loss is of magnitude ~40, so central differences carry
    # ~ulp(40)/2h ~ 2e-10 of quantization noise; gradients below that are
    # unresolvable in float64 and must be compared absolutely, not relatively.
    return grad_check(f, params, resample=resample, floor=1e-5)


def _per_op_errors() -> dict[str, float]:
    errs: dict[str, float] = {}
    rng = np.random.default_rng(42)

    def put(name, f, params, resample_rng=None):
        def resample():
            for p in params:
                p.data = resample_rng.normal(scale=0.8, size=p.data.shape)

        errs[name] = grad_check(
            f, params, resample=resample if resample_rng is not None else None
        )

    def t(*shape):
        return Tensor(rng.normal(scale=0.8, size=shape), requires_grad=True)

    a, b = t(3, 4), t(3, 4)
    w = Tensor(rng.normal(size=(3, 4)))
    put("add", lambda: ad.sum_(a + b), [a, b])
    put("mul_neg", lambda: ad.sum_(a * b + (-a)), [a, b])
    m = t(4, 2)
    put("matmul", lambda: ad.sum_(a @ m), [a, m])
    put("sigmoid", lambda: ad.sum_(ad.sigmoid(a) * w), [a])
    put("tanh", lambda: ad.sum_(ad.tanh(a) * w), [a])
    put("relu", lambda: ad.sum_(ad.relu(a) * w), [a], rng)
    put("clip", lambda: ad.sum_(ad.clip(a, -0.5, 0.5) * w), [a], rng)
    put("abs", lambda: ad.sum_(ad.abs_(a) * w), [a], rng)
    put("softmax", lambda: ad.sum_(ad.softmax(a, axis=1) * w), [a])
    put("sum_axis", lambda: ad.mean(ad.sum_(a * w, axis=1)), [a])
    put("mean_keepdims", lambda: ad.sum_(a * ad.mean(a, axis=0, keepdims=True)), [a])
    put("reshape", lambda: ad.sum_(ad.reshape(a, (12,)) * Tensor(w.data.ravel())), [a])
    put("slice", lambda: ad.sum_(ad.slice_(a, (slice(0, 2), slice(1, 3)))), [a])
    wc = Tensor(rng.normal(size=(3, 8)))
    put("concat", lambda: ad.sum_(ad.concat([a, b], axis=1) * wc), [a, b])
    hole = np.zeros((3, 4), dtype=bool)
    hole[1, 2] = hole[0, 0] = True
    put("masked_fill", lambda: ad.sum_(ad.masked_fill(a, hole, 0.7) * w), [a])
    tab, ids = t(7, 3), np.array([[0, 2, 2], [5, 1, 6]])
    we = Tensor(rng.normal(size=(2, 3, 3)))
    put("embedding", lambda: ad.sum_(ad.embedding_lookup(tab, ids) * we), [tab])
    x, g, beta = t(6, 4), t(4), t(4)
    wb = Tensor(rng.normal(size=(6, 4)))
    put(
        "batchnorm",
        lambda: ad.sum_(
            ad.batchnorm(x, g, beta, np.zeros(4), np.ones(4), True) * wb
        ),
        [x, g, beta],
    )
    put(
        "dropout",
        lambda: ad.sum_(ad.dropout(x, 0.3, True, np.random.default_rng(5)) * wb),
        [x],
    )
    return errs


def test_gradient_correctness():
    t0 = time.monotonic()
    model_errs = [_full_model_grad_err(seed) for seed in range(5)]
    op_errs = _per_op_errors()
    elapsed = time.monotonic() - t0
    worst_op = max(op_errs, key=op_errs.get)
    print(
        f"\nfull model: {', '.join(f'{e:.1e}' for e in model_errs)}"
        f" | worst op {worst_op} {op_errs[worst_op]:.1e} | {elapsed:.1f}s"
    )
    assert max(model_errs) < 1e-4
    assert all(e < 1e-5 for e in op_errs.values()), op_errs
    assert elapsed < 60.0


# ---------------------------------------------------------------------------
# 2. model family ordering under cross-validation
# ---------------------------------------------------------------------------


def test_variant_ordering_under_cross_validation(default_corpus):
    t0 = time.monotonic()
    results = evaluate_variants(
        [s.example for s in default_corpus], k=5, seeds=(0, 1, 2)
    )
    elapsed = time.monotonic() - t0
    print("\n" + format_eval_table(results) + f"({elapsed:.0f}s)")
    assert ordering_holds(results, "forest+aux", "forest")
    assert ordering_holds(results, "bilstm+attention", "forest+aux", strict=True)
    assert ordering_holds(results, "bilstm+attention+aux", "bilstm+attention")
    assert elapsed < 900.0


# ---------------------------------------------------------------------------
# 3. learning signal vs. predict-the-mean
# ---------------------------------------------------------------------------


def test_validation_mae_beats_mean_baseline(default_split, trained_net):
    vocab, dataset = default_split
    baseline = mean_baseline_mae(dataset)
    val = validation_mae(trained_net, dataset.val)
    print(f"\nval MAE {val:.2f} vs mean baseline {baseline:.2f} "
          f"(ratio {val / baseline:.3f})")
    assert val <= 0.60 * baseline


# ---------------------------------------------------------------------------
# 4 & 5. attribution quality on gold-annotated documents
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def attribution_by_seed(default_corpus, trained_net, scorer_config):
    """Attribution stats for five independently split/trained scorers."""
    docs = default_corpus[:40]
    examples = [s.example for s in default_corpus]
    stats = {0: attribution_stats(trained_net, docs)}
    for seed in (1, 2, 3, 4):
        vocab, dataset = train_split(examples, val_fraction=0.2, seed=seed)
        net = NeuralScorer.build(scorer_config, vocab, dataset.train, seed=seed)
        net, _ = train(net, dataset, seed=seed)
        stats[seed] = attribution_stats(net, docs)
    return stats


def test_planted_enabler_recovery(attribution_by_seed):
    s = attribution_by_seed[0]
    print(
        f"\nenabler recovery {s.enabler_recovery:.3f} "
        f"({s.n_recovered_enablers}/{s.n_gold_enablers}), polarity agreement "
        f"{s.polarity_agreement:.3f} over {s.n_docs} annotated docs"
    )
    assert s.enabler_recovery >= 0.70
    assert s.polarity_agreement >= 0.80


def test_phrase_quality_beats_occlusion_across_seeds(attribution_by_seed):
    wins = 0
    lines = []
    for seed in sorted(attribution_by_seed):
        s = attribution_by_seed[seed]
        win = s.pq_ei > s.pq_occlusion
        wins += int(win)
        lines.append(
            f"seed {seed}: PQ {s.pq_ei:.3f} vs occlusion {s.pq_occlusion:.3f}"
            f" {'>' if win else '<='}"
        )
    print("\n" + "\n".join(lines) + f"\nwins {wins}/5")
    assert wins >= 4


# ---------------------------------------------------------------------------
# 6. scoring arithmetic, exact
# ---------------------------------------------------------------------------


def test_scoring_unit_values_exact():
    assert ei_score(80.0, 60.0) == 25.0
    assert ei_score(40.0, 50.0) == -25.0
    assert ei_score(50.0, 50.0) == 0.0
    assert clip_activation(-3.2) == 0.0
    assert clip_activation(57.4) == 57.4
    assert clip_activation(142.0) == 100.0
    assert clipped_l1_loss(120.0, 100.0) == 0.0


# ---------------------------------------------------------------------------
# 7. parser and forest invariants, exact
# ---------------------------------------------------------------------------

ENTITY_SAMPLES = [
    "Visit https://example.com/path?x=1&y=2 or www.portal.example.org/docs today.",
    "Contact ops@example.com and backup.admin+rfp@mail.example.co.uk directly.",
    "See Section 4.2.1 and §12.9 plus sections 7 of the appendix.",
    "As shown in Figure 12, fig. 3 and figures 4 the trend holds.",
    "Refer to Table 7 and tables 11 for the quarterly totals.",
    "Delivered 2024-03-15, reviewed March 2, 2024 at 14:30:00 sharp.",
]


def _fixture_doc(body_lines, header="ACME Corp Proposal", footer="Page 1"):
    pages = []
    for i in range(3):
        lines = [header, ""] + body_lines[i::3] + ["", footer.replace("1", str(i + 1))]
        pages.append("\n".join(lines))
    return "\f".join(pages)


def test_parser_and_forest_invariants_exact():
    # entity masking leaves nothing for a second pass to find
    for text in ENTITY_SAMPLES + [" | ".join(ENTITY_SAMPLES)]:
        masked, counts = mask_entities(text)
        assert scan_unmasked(masked) == []
        assert sum(counts.values()) > 0

    # header/footer stripping + section splitting conserves body lines
    for j in range(10):
        body = []
        for q in range(1, 4):
            body.append(f"Q{q}. Topic {q} for fixture {j}")
            body += [f"line {q}-{k} fixture {j} content" for k in range(1, 4)]
        doc = parse_document(
            load_document_file(_fixture_doc(body), DocMeta(bid_id=f"B{j}"))
        )
        parsed = []
        for sec in doc.sections:
            parsed.append(sec.heading)
            parsed += [l for l in sec.body.split("\n") if l.strip()]
        assert sorted(parsed) == sorted(body)

    # score normalization endpoint mapping
    assert normalize_score(0.0, 80.0) == 0.0
    assert normalize_score(80.0, 80.0) == 100.0
    assert normalize_score(40.0, 80.0) == 50.0

    # out-of-bag predictions use exactly the trees that excluded the example
    rng = np.random.default_rng(11)
    X = rng.normal(size=(50, 6))
    y = rng.uniform(0, 100, size=50)
    model = fit_forest(X, y, ForestParams(n_trees=25), seed=2)
    checked = 0
    for i in range(50):
        excluding = [
            t for t, bi in enumerate(model.bootstrap_indices) if not np.isin(i, bi)
        ]
        if not excluding:
            assert np.isnan(model.oob_predictions[i])
            continue
        acc = 0.0
        for t in excluding:
            acc += float(tree_predict(model.trees[t], X[i : i + 1])[0])
        assert model.oob_predictions[i] == acc / len(excluding)
        checked += 1
    print(f"\nmasking/conservation/normalize/OOB all exact ({checked} OOB rows)")
    assert checked >= 40


# ---------------------------------------------------------------------------
# 8. end-to-end determinism of the command-line chain
# ---------------------------------------------------------------------------

_GEN_CFG = "n_docs = 24\ndoc_len = 40,80\nn_neutral = 250\nmax_phrases_per_doc = 3\nseed = 5\n"
_NET_CFG = "b = 6\ne = 6\nd = 4\nr = 0.0\nl = 0.01\nepochs = 2\nbatch_size = 8\n"


def _cli_chain(root):
    root.mkdir()
    (root / "gen.cfg").write_text(_GEN_CFG)
    (root / "net.cfg").write_text(_NET_CFG)
    corpus = root / "corpus.jsonl"
    assert cli.main(["gen", "--config", str(root / "gen.cfg"), "--out", str(corpus)]) == 0
    assert (
        cli.main(
            ["train", "--model", "bilstm", "--data", str(corpus),
             "--config", str(root / "net.cfg"), "--seed", "0",
             "--out", str(root / "net.scdk")]
        )
        == 0
    )
    assert (
        cli.main(
            ["train", "--model", "forest", "--data", str(corpus),
             "--trees", "10", "--seed", "0", "--out", str(root / "rf.scdk")]
        )
        == 0
    )
    assert (
        cli.main(
            ["eval", "--data", str(corpus), "--folds", "2", "--seeds", "1",
             "--seed", "0", "--config", str(root / "net.cfg"),
             "--out", str(root / "table.txt")]
        )
        == 0
    )
    artifacts = [
        corpus,
        root / "net.scdk",
        root / "rf.scdk",
        cli.vocab_sidecar_path(root / "rf.scdk"),
        root / "table.txt",
    ]
    return {p.name: p.read_bytes() for p in artifacts}


def test_cli_gen_train_eval_byte_determinism(tmp_path):
    first = _cli_chain(tmp_path / "a")
    second = _cli_chain(tmp_path / "b")
    assert set(first) == set(second)
    for name in first:
        assert first[name] == second[name], f"{name} differs between identical runs"
    print(f"\n{len(first)} artifacts byte-identical across repeated runs")


# ---------------------------------------------------------------------------
# 9. padding invariance at scale
# ---------------------------------------------------------------------------


def test_padding_invariance_at_scale(default_corpus, trained_net):
    enc = encode_examples(
        [s.example for s in default_corpus[:100]], trained_net.vocab
    )
    lengths = np.array([len(ex.ids) for ex in enc])
    T = int(lengths.max())
    ids = np.full((len(enc), T), PAD_ID, dtype=np.int64)
    for i, ex in enumerate(enc):
        ids[i, : len(ex.ids)] = ex.ids
    extended = np.concatenate(
        [ids, np.full((len(enc), 9), PAD_ID, dtype=np.int64)], axis=1
    )
    aux = np.stack([ex.aux for ex in enc])
    with ad.no_grad():
        y = trained_net.forward(ids, lengths, aux).data
        y_ext = trained_net.forward(extended, lengths, aux).data
    worst = float(np.max(np.abs(y - y_ext)))
    print(f"\nmax shift under trailing padding: {worst:.2e} over {len(enc)} docs")
    assert worst <= 1e-10
