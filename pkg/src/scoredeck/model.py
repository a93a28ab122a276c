"""Bi-LSTM + attention regression scorer with an auxiliary feature branch.

Text branch: embedding, bidirectional LSTM, attention (or masked global
average) pooling, dropout, batch normalization.  The auxiliary vector
passes through one dense layer and is concatenated with the text context;
after another dropout + batchnorm a single linear unit emits the score.
Predictions are confined to the 0-100 score range either by a clipped
output activation or by clipping inside the L1 loss (config choice; both
are equivalent in effect).
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from . import kernels as K
from .autodiff import Tensor
from .container import read_container, write_container
from .errors import (
    ConfigError,
    DataError,
    DomainError,
    EmptySequence,
    FormatError,
)
from .features import (
    MASK_ID,
    PAD_ID,
    Vocabulary,
    aux_dim,
    extract_aux,
)
from .ingest import ResponseExample

_POOLINGS = ("attention", "global_average")
_CLIP_MODES = ("activation", "loss")
_OPTIMIZERS = ("adam", "sgd")
_ACTIVATIONS = ("relu", "tanh", "sigmoid", "clip")

# Hyper-parameter search space reported for the full-scale problem.  Desk
# scale configs deliberately go below it, so it is advisory (see
# in_search_space), not a hard bound.
SEARCH_SPACE = {
    "b": (32, 64, 128, 256, 512),
    "e": (32, 64, 128, 256, 512, 1024),
    "d": (32, 64, 128, 256, 512, 1024),
    "l": (1e-7, 1e-2),
}


@dataclass
class ModelConfig:
    b: int = 32  # hidden units per LSTM direction
    e: int = 32  # embedding dimension
    r: float = 0.2  # dropout rate
    l: float = 1e-3  # learning rate
    d: int = 32  # auxiliary dense size
    pooling: str = "attention"
    clip_mode: str = "loss"
    optimizer: str = "adam"
    epochs: int = 15
    batch_size: int = 4
    use_aux: bool = True
    hidden_activation: str = "relu"
    clip_all_activations: bool = False
    grad_clip_norm: float = 5.0

    def __post_init__(self):
        if not 0.0 <= self.r < 1.0:
            raise ConfigError(f"dropout rate r must be in [0, 1), got {self.r}")
        if self.l < 0:
            raise ConfigError(f"learning rate l must be >= 0, got {self.l}")
        for name in ("b", "e", "d"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.pooling not in _POOLINGS:
            raise ConfigError(f"pooling must be one of {_POOLINGS}, got {self.pooling!r}")
        if self.clip_mode not in _CLIP_MODES:
            raise ConfigError(f"clip_mode must be one of {_CLIP_MODES}")
        if self.optimizer not in _OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {_OPTIMIZERS}")
        if self.hidden_activation not in _ACTIVATIONS:
            raise ConfigError(f"hidden_activation must be one of {_ACTIVATIONS}")


def in_search_space(cfg: ModelConfig) -> list[str]:
    """Fields outside the reported full-scale search space (advisory)."""
    out = []
    for name in ("b", "e", "d"):
        if getattr(cfg, name) not in SEARCH_SPACE[name]:
            out.append(name)
    lo, hi = SEARCH_SPACE["l"]
    if not lo <= cfg.l <= hi:
        out.append("l")
    return out


def clip_activation(z):
    """Score-range activation: 0 below 0, identity inside, 100 above 100."""
    if isinstance(z, Tensor):
        return ad.clip(z, 0.0, 100.0)
    return float(np.clip(z, 0.0, 100.0))


def clipped_l1_loss(pred, target):
    """Mean absolute error after clipping predictions to [0, 100]."""
    target_arr = np.atleast_1d(np.asarray(target, dtype=np.float64))
    if np.any((target_arr < 0) | (target_arr > 100)):
        raise DomainError("targets must lie in [0, 100]")
    if isinstance(pred, Tensor):
        diff = ad.clip(pred, 0.0, 100.0) - Tensor(target_arr)
        return ad.mean(ad.abs_(diff))
    return float(np.mean(np.abs(np.clip(pred, 0.0, 100.0) - target_arr)))


def l1_loss(pred: Tensor, target) -> Tensor:
    target_arr = np.atleast_1d(np.asarray(target, dtype=np.float64))
    return ad.mean(ad.abs_(pred - Tensor(target_arr)))


def _reverse_indices(lengths: np.ndarray, T: int) -> np.ndarray:
    """Per-row index map reversing positions within the true length.

    Identity on padding, involutive, so the same map reverses and
    un-reverses.
    """
    B = lengths.shape[0]
    idx = np.tile(np.arange(T), (B, 1))
    for i, n in enumerate(lengths):
        idx[i, :n] = np.arange(n - 1, -1, -1)
    return idx


def bilstm(E: Tensor, lengths: np.ndarray, fw: dict, bw: dict) -> Tensor:
    """Fused bidirectional LSTM over a padded batch; output (B, T, 2b).

    The sequence recurrence runs in the selected kernel backend; this
    wrapper handles the input projections, the within-length time reversal
    for the backward direction, and gradient routing.
    """
    B, T, _ = E.data.shape
    rows = np.arange(B)[:, None]
    rev = _reverse_indices(lengths, T)

    xp_f = E.data @ fw["Wx"].data + fw["b"].data
    Hf, Cf, Gf, TCf = K.lstm_forward(xp_f, fw["Wh"].data)

    E_rev = E.data[rows, rev]
    xp_b = E_rev @ bw["Wx"].data + bw["b"].data
    Hbr, Cb, Gb, TCb = K.lstm_forward(xp_b, bw["Wh"].data)
    Hb = Hbr[rows, rev]

    out = Tensor(np.concatenate([Hf, Hb], axis=2))
    parents = (E, fw["Wx"], fw["Wh"], fw["b"], bw["Wx"], bw["Wh"], bw["b"])
    out.requires_grad = ad.grad_enabled() and any(p.requires_grad for p in parents)
    if not out.requires_grad:
        return out
    out._parents = parents

    b_units = Hf.shape[2]

    def backward():
        g = out.grad
        gf = np.ascontiguousarray(g[:, :, :b_units])
        gbr = np.ascontiguousarray(g[:, :, b_units:][rows, rev])

        dXp_f, dWh_f = K.lstm_backward(gf, fw["Wh"].data, Hf, Cf, Gf, TCf)
        dXp_b, dWh_b = K.lstm_backward(gbr, bw["Wh"].data, Hbr, Cb, Gb, TCb)

        flatE = E.data.reshape(-1, E.data.shape[2])
        flatE_rev = E_rev.reshape(-1, E_rev.shape[2])
        ad._accum(fw["Wx"], flatE.T @ dXp_f.reshape(-1, dXp_f.shape[2]))
        ad._accum(bw["Wx"], flatE_rev.T @ dXp_b.reshape(-1, dXp_b.shape[2]))
        ad._accum(fw["Wh"], dWh_f)
        ad._accum(bw["Wh"], dWh_b)
        ad._accum(fw["b"], dXp_f.sum(axis=(0, 1)))
        ad._accum(bw["b"], dXp_b.sum(axis=(0, 1)))
        dE = dXp_f @ fw["Wx"].data.T
        dE += (dXp_b @ bw["Wx"].data.T)[rows, rev]
        ad._accum(E, dE)

    out._backward = backward
    return out


def attention_pool(
    H: Tensor,
    W_a: Tensor,
    v_a: Tensor,
    pad_mask: Optional[np.ndarray] = None,
) -> Tensor:
    """Additive attention pooling: softmax(v_a . tanh(W_a h_t)) over time.

    H is (T, 2b) for a single sequence or (B, T, 2b) batched; pad_mask is
    True at valid positions.  Padded positions receive exactly zero weight.
    """
    single = H.data.ndim == 2
    H3 = ad.reshape(H, (1,) + H.data.shape) if single else H
    B, T, _ = H3.data.shape
    if pad_mask is None:
        pad_mask = np.ones((B, T), dtype=bool)
    if T == 0 or not pad_mask.any(axis=1).all():
        raise EmptySequence("attention over a fully padded sequence")

    U = ad.tanh(ad.matmul(H3, W_a))
    scores = ad.reshape(ad.matmul(U, ad.reshape(v_a, (-1, 1))), (B, T))
    # -1e300 underflows to exactly 0 after softmax, keeping pads weightless
    # while staying finite for debug-mode checks.
    scores = ad.masked_fill(scores, ~pad_mask, -1e300)
    weights = ad.softmax(scores, axis=1)
    ctx = ad.sum_(ad.mul(H3, ad.reshape(weights, (B, T, 1))), axis=1)
    return ad.reshape(ctx, (ctx.data.shape[1],)) if single else ctx


def masked_average_pool(H: Tensor, pad_mask: np.ndarray) -> Tensor:
    """Mean of hidden states over valid positions only."""
    B, T, _ = H.data.shape
    lengths = pad_mask.sum(axis=1)
    if (lengths == 0).any():
        raise EmptySequence("average pool over a fully padded sequence")
    masked = ad.mul(H, Tensor(pad_mask[:, :, None].astype(np.float64)))
    total = ad.sum_(masked, axis=1)
    return ad.mul(total, Tensor(1.0 / lengths[:, None]))


@dataclass
class EncodedExample:
    ids: np.ndarray
    aux: np.ndarray
    target: float


@dataclass
class SplitDataset:
    train: list[EncodedExample]
    val: list[EncodedExample]


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    wall_time: list[float] = field(default_factory=list)


class NeuralScorer:
    """Trainable Bi-LSTM scorer bound to a vocabulary and aux feature scale."""

    def __init__(
        self,
        config: ModelConfig,
        vocab: Vocabulary,
        aux_mean: np.ndarray,
        aux_std: np.ndarray,
        seed: int = 0,
    ):
        self.config = config
        self.vocab = vocab
        self.aux_mean = np.asarray(aux_mean, dtype=np.float64)
        self.aux_std = np.asarray(aux_std, dtype=np.float64)
        self.aux_dim = self.aux_mean.shape[0]
        self.params: dict[str, Tensor] = {}
        self.running: dict[str, np.ndarray] = {}
        self._init_params(np.random.default_rng(seed))

    # -- construction ------------------------------------------------------

    @classmethod
    def build(
        cls,
        config: ModelConfig,
        vocab: Vocabulary,
        train_examples: Sequence[EncodedExample],
        seed: int = 0,
    ) -> "NeuralScorer":
        """Create a scorer whose aux scaler is fitted on the training split."""
        if not train_examples:
            raise DataError("cannot fit aux scaler on an empty training set")
        aux = np.stack([ex.aux for ex in train_examples])
        std = aux.std(axis=0)
        std[std < 1e-12] = 1.0
        return cls(config, vocab, aux.mean(axis=0), std, seed=seed)

    def _glorot(self, rng, fan_in, fan_out, shape):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return Tensor(rng.uniform(-limit, limit, shape), requires_grad=True)

    def _init_params(self, rng: np.random.Generator):
        cfg = self.config
        V, e, b, d = len(self.vocab), cfg.e, cfg.b, cfg.d
        emb = rng.uniform(-0.5, 0.5, (V, e)) / np.sqrt(e)
        emb[PAD_ID] = 0.0
        emb[MASK_ID] = 0.0  # neutral until (unless) trained
        p = {"emb": Tensor(emb, requires_grad=True)}
        for direction in ("fw", "bw"):
            p[f"{direction}.Wx"] = self._glorot(rng, e, 4 * b, (e, 4 * b))
            p[f"{direction}.Wh"] = self._glorot(rng, b, 4 * b, (b, 4 * b))
            bias = np.zeros(4 * b)
            bias[b : 2 * b] = 1.0  # forget-gate bias
            p[f"{direction}.b"] = Tensor(bias, requires_grad=True)
        a = b  # attention projection size
        p["att.W"] = self._glorot(rng, 2 * b, a, (2 * b, a))
        p["att.v"] = self._glorot(rng, a, 1, (a,))
        p["bn_text.gamma"] = Tensor(np.ones(2 * b), requires_grad=True)
        p["bn_text.beta"] = Tensor(np.zeros(2 * b), requires_grad=True)
        merged = 2 * b
        if cfg.use_aux:
            p["aux.W"] = self._glorot(rng, self.aux_dim, d, (self.aux_dim, d))
            p["aux.b"] = Tensor(np.zeros(d), requires_grad=True)
            merged += d
        p["bn_merge.gamma"] = Tensor(np.ones(merged), requires_grad=True)
        p["bn_merge.beta"] = Tensor(np.zeros(merged), requires_grad=True)
        p["out.W"] = self._glorot(rng, merged, 1, (merged, 1))
        out_b = Tensor(np.array([50.0]), requires_grad=True)  # start mid-scale
        p["out.b"] = out_b
        self.params = p
        self.running = {
            "bn_text.mean": np.zeros(2 * b),
            "bn_text.var": np.ones(2 * b),
            "bn_merge.mean": np.zeros(merged),
            "bn_merge.var": np.ones(merged),
        }

    @property
    def mask_id(self) -> int:
        return MASK_ID

    # -- forward -----------------------------------------------------------

    def _hidden_act(self, x: Tensor) -> Tensor:
        if self.config.clip_all_activations:
            return ad.clip(x, 0.0, 100.0)
        act = self.config.hidden_activation
        if act == "relu":
            return ad.relu(x)
        if act == "tanh":
            return ad.tanh(x)
        if act == "sigmoid":
            return ad.sigmoid(x)
        return ad.clip(x, 0.0, 100.0)

    def forward(
        self,
        ids: np.ndarray,
        lengths: np.ndarray,
        aux: Optional[np.ndarray],
        train: bool = False,
        rng: Optional[np.random.Generator] = None,
    ) -> Tensor:
        """Batched forward pass; returns predictions of shape (B,)."""
        cfg = self.config
        if train and rng is None:
            raise DataError("training forward pass requires an RNG for dropout")
        ids = np.atleast_2d(np.asarray(ids, dtype=np.int64))
        lengths = np.asarray(lengths, dtype=np.int64)
        if (lengths < 1).any():
            raise EmptySequence("every sequence needs at least one token")
        B, T = ids.shape
        pad_mask = np.arange(T)[None, :] < lengths[:, None]

        E = ad.embedding_lookup(self.params["emb"], ids)
        H = bilstm(
            E,
            lengths,
            {k: self.params[f"fw.{k}"] for k in ("Wx", "Wh", "b")},
            {k: self.params[f"bw.{k}"] for k in ("Wx", "Wh", "b")},
        )
        H = ad.mul(H, Tensor(pad_mask[:, :, None].astype(np.float64)))
        if cfg.pooling == "attention":
            ctx = attention_pool(H, self.params["att.W"], self.params["att.v"], pad_mask)
        else:
            ctx = masked_average_pool(H, pad_mask)
        ctx = ad.dropout(ctx, cfg.r, train, rng)
        ctx = ad.batchnorm(
            ctx,
            self.params["bn_text.gamma"],
            self.params["bn_text.beta"],
            self.running["bn_text.mean"],
            self.running["bn_text.var"],
            train,
        )
        if cfg.use_aux:
            if aux is None:
                raise DataError("model was built with use_aux=True but got no aux")
            aux = np.atleast_2d(np.asarray(aux, dtype=np.float64))
            aux_n = (aux - self.aux_mean) / self.aux_std
            a1 = self._hidden_act(
                ad.matmul(Tensor(aux_n), self.params["aux.W"]) + self.params["aux.b"]
            )
            merged = ad.concat([ctx, a1], axis=1)
        else:
            merged = ctx
        merged = ad.dropout(merged, cfg.r, train, rng)
        merged = ad.batchnorm(
            merged,
            self.params["bn_merge.gamma"],
            self.params["bn_merge.beta"],
            self.running["bn_merge.mean"],
            self.running["bn_merge.var"],
            train,
        )
        y = ad.reshape(ad.matmul(merged, self.params["out.W"]) + self.params["out.b"], (B,))
        if cfg.clip_mode == "activation":
            y = clip_activation(y)
        return y

    # -- inference ---------------------------------------------------------

    def predict_ids(self, ids_batch: Sequence[np.ndarray], aux: np.ndarray) -> np.ndarray:
        """Inference scores for many token-id sequences sharing one aux vector.

        Used heavily by the explanation loop: all masked variants of a
        document are scored in chunks.  Reported scores are clipped to the
        score range.
        """
        preds = np.empty(len(ids_batch))
        chunk = 64
        with ad.no_grad():
            for start in range(0, len(ids_batch), chunk):
                part = ids_batch[start : start + chunk]
                lengths = np.array([len(s) for s in part], dtype=np.int64)
                T = int(lengths.max())
                padded = np.full((len(part), T), PAD_ID, dtype=np.int64)
                for i, seq in enumerate(part):
                    padded[i, : len(seq)] = seq
                aux_rows = np.tile(aux, (len(part), 1)) if self.config.use_aux else None
                out = self.forward(padded, lengths, aux_rows, train=False)
                preds[start : start + len(part)] = out.data
        return np.clip(preds, 0.0, 100.0)

    def predict_batch(
        self, ids_batch: Sequence[np.ndarray], aux_batch: Optional[np.ndarray]
    ) -> np.ndarray:
        """Inference scores with one aux row per sequence.

        Same chunked padding as predict_ids, but for heterogeneous
        examples (validation, eval tables) rather than masked variants of
        one document.
        """
        preds = np.empty(len(ids_batch))
        chunk = 64
        with ad.no_grad():
            for start in range(0, len(ids_batch), chunk):
                part = ids_batch[start : start + chunk]
                lengths = np.array([len(s) for s in part], dtype=np.int64)
                T = int(lengths.max())
                padded = np.full((len(part), T), PAD_ID, dtype=np.int64)
                for i, seq in enumerate(part):
                    padded[i, : len(seq)] = seq
                aux_rows = (
                    aux_batch[start : start + len(part)]
                    if self.config.use_aux
                    else None
                )
                out = self.forward(padded, lengths, aux_rows, train=False)
                preds[start : start + len(part)] = out.data
        return np.clip(preds, 0.0, 100.0)

    def example_aux(self, example: ResponseExample) -> np.ndarray:
        aux = example.aux or extract_aux(example)
        return aux.to_vector()

    def predict(self, example: ResponseExample) -> float:
        """Score one example; the reported value always lies in [0, 100]."""
        ids = self.vocab.encode(example.response_tokens)
        if ids.size == 0:
            raise EmptySequence("example has no tokens")
        aux = self.example_aux(example) if self.config.use_aux else np.zeros(0)
        return float(self.predict_ids([ids], aux)[0])

    # -- persistence -------------------------------------------------------

    def save(self, path) -> None:
        header = {
            "config": asdict(self.config),
            "vocab": self.vocab.id_to_token,
            "vocab_min_freq": self.vocab.min_freq,
            "aux_dim": self.aux_dim,
        }
        arrays = {f"param.{k}": v.data for k, v in self.params.items()}
        arrays.update({f"running.{k}": v for k, v in self.running.items()})
        arrays["aux.mean"] = self.aux_mean
        arrays["aux.std"] = self.aux_std
        write_container(path, "bilstm", header, arrays)

    @classmethod
    def load(cls, path) -> "NeuralScorer":
        kind, header, arrays = read_container(path)
        if kind != "bilstm":
            raise FormatError(f"expected a bilstm model file, found {kind!r}")
        config = ModelConfig(**header["config"])
        vocab = Vocabulary(
            id_to_token=list(header["vocab"]), min_freq=header["vocab_min_freq"]
        )
        model = cls(config, vocab, arrays["aux.mean"], arrays["aux.std"])
        for key in model.params:
            model.params[key] = Tensor(arrays[f"param.{key}"], requires_grad=True)
        for key in model.running:
            model.running[key] = arrays[f"running.{key}"].copy()
        return model

    def state_snapshot(self) -> dict[str, np.ndarray]:
        snap = {f"param.{k}": v.data.copy() for k, v in self.params.items()}
        snap.update({f"running.{k}": v.copy() for k, v in self.running.items()})
        return snap

    def load_snapshot(self, snap: dict[str, np.ndarray]) -> None:
        for k in self.params:
            self.params[k].data = snap[f"param.{k}"].copy()
        for k in self.running:
            self.running[k][:] = snap[f"running.{k}"]


# ---------------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------------


class SGD:
    def __init__(self, params: Sequence[Tensor], lr: float):
        self.params = list(params)
        self.lr = lr

    def step(self):
        for p in self.params:
            if p.grad is not None:
                p.data -= self.lr * p.grad


class Adam:
    def __init__(
        self,
        params: Sequence[Tensor],
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            m_hat = self.m[i] / (1 - b1**self.t)
            v_hat = self.v[i] / (1 - b2**self.t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _clip_grad_norm(params: Sequence[Tensor], max_norm: float) -> None:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad**2).sum())
    norm = np.sqrt(total)
    if norm > max_norm > 0:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= scale


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def _length_bucketed_batches(
    examples: Sequence[EncodedExample], batch_size: int
) -> list[list[int]]:
    """Group example indices into batches of similar sequence length."""
    order = sorted(range(len(examples)), key=lambda i: (len(examples[i].ids), i))
    return [order[i : i + batch_size] for i in range(0, len(order), batch_size)]


def _collate(examples: Sequence[EncodedExample], use_aux: bool):
    lengths = np.array([len(ex.ids) for ex in examples], dtype=np.int64)
    T = int(lengths.max())
    ids = np.full((len(examples), T), PAD_ID, dtype=np.int64)
    for i, ex in enumerate(examples):
        ids[i, : len(ex.ids)] = ex.ids
    aux = np.stack([ex.aux for ex in examples]) if use_aux else None
    targets = np.array([ex.target for ex in examples])
    return ids, lengths, aux, targets


def validation_mae(model: NeuralScorer, examples: Sequence[EncodedExample]) -> float:
    # Length-sorted chunks keep padding (and wasted LSTM steps) small.
    order = sorted(range(len(examples)), key=lambda i: (len(examples[i].ids), i))
    ids = [examples[i].ids for i in order]
    aux = np.stack([examples[i].aux for i in order]) if examples else None
    preds = model.predict_batch(ids, aux)
    targets = np.array([examples[i].target for i in order])
    return float(np.mean(np.abs(preds - targets)))


def train(
    model: NeuralScorer,
    dataset: SplitDataset,
    config: Optional[ModelConfig] = None,
    seed: int = 0,
) -> tuple[NeuralScorer, TrainHistory]:
    """Train with length-bucketed mini-batches; retains best-validation weights.

    Deterministic for a fixed seed in single-threaded execution: batch
    order and dropout masks derive from one seeded generator.
    """
    cfg = config or model.config
    if not dataset.train:
        raise DataError("training set is empty")
    rng = np.random.default_rng(seed)
    params = [model.params[k] for k in sorted(model.params)]
    if cfg.optimizer == "adam":
        opt = Adam(params, cfg.l)
    else:
        opt = SGD(params, cfg.l)

    batches = _length_bucketed_batches(dataset.train, cfg.batch_size)
    history = TrainHistory()
    best_val = np.inf
    best_state = model.state_snapshot()
    start = time.monotonic()

    for _ in range(cfg.epochs):
        order = rng.permutation(len(batches))
        epoch_losses = []
        for bi in order:
            batch = [dataset.train[i] for i in batches[bi]]
            ids, lengths, aux, targets = _collate(batch, cfg.use_aux)
            pred = model.forward(ids, lengths, aux, train=True, rng=rng)
            if cfg.clip_mode == "loss":
                loss = clipped_l1_loss(pred, targets)
            else:
                loss = l1_loss(pred, targets)
            for p in params:
                p.zero_grad()
            loss.backward()
            _clip_grad_norm(params, cfg.grad_clip_norm)
            opt.step()
            epoch_losses.append(float(loss.data))
        val = validation_mae(model, dataset.val) if dataset.val else np.nan
        history.train_loss.append(float(np.mean(epoch_losses)))
        history.val_loss.append(val)
        history.wall_time.append(time.monotonic() - start)
        if dataset.val and val < best_val:
            best_val = val
            best_state = model.state_snapshot()
    if dataset.val and cfg.epochs > 0:
        model.load_snapshot(best_state)
    return model, history
