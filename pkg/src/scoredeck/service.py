"""HTTP scoring and explanation service.

A small FastAPI app over a registry of loaded models.  Models are
immutable once registered, so request handling is read-only and
concurrent requests cannot interfere.  Explanations report character
offsets into the submitted text (see ingest.tokenize_with_spans), so
clients never need a tokenizer of their own.

Long explanations (big documents) are handed to a single background
worker and a poll token is returned instead of blocking the connection.
"""

from __future__ import annotations

import threading
import uuid
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, PlainTextResponse
from pydantic import BaseModel

from .errors import ScoredeckError
from .explain import (
    ForestTokenScorer,
    NeuralTokenScorer,
    explain_tokens,
    top_enablers_disablers,
)
from .features import AuxFeatures, Vocabulary, bow_from_ids, extract_aux
from .forest import ForestModel
from .ingest import DOMAIN_CATEGORIES, ResponseExample, tokenize_with_spans
from .model import NeuralScorer

DEFAULT_PORT = 8750
# Documents longer than this (tokens) take the slow path: the exclusion
# sweep costs one inference per token, so this bounds the synchronous
# request budget.
ASYNC_TOKEN_THRESHOLD = 4000


class ScoreRequest(BaseModel):
    model_id: str
    response_text: str
    question: str = ""
    domain_ids: list[str] = []


class ExplainRequest(ScoreRequest):
    max_n: int = 5
    epsilon: float = 1.0
    top_k: int = 10


@dataclass
class ModelEntry:
    """One registered model with everything needed to run it."""

    model_id: str
    kind: str  # "bilstm" | "forest"
    model: object
    vocab: Vocabulary
    forest_uses_aux: bool = True
    explainable: bool = True

    def summary(self) -> dict:
        info: dict = {"model_id": self.model_id, "kind": self.kind}
        if self.kind == "bilstm":
            cfg = self.model.config
            info["config"] = {
                "b": cfg.b,
                "e": cfg.e,
                "d": cfg.d,
                "pooling": cfg.pooling,
                "use_aux": cfg.use_aux,
            }
        else:
            p = self.model.params
            info["config"] = {
                "n_trees": p.n_trees,
                "max_depth": p.max_depth,
                "min_leaf": p.min_leaf,
                "aux": self.forest_uses_aux,
            }
        info["explainable"] = self.explainable
        return info


class ModelRegistry:
    """Thread-safe id → model map; entries are never mutated after add."""

    def __init__(self):
        self._entries: dict[str, ModelEntry] = {}
        self._lock = threading.Lock()

    def add_neural(
        self, model_id: str, model: NeuralScorer, explainable: bool = True
    ) -> None:
        self._add(
            ModelEntry(
                model_id=model_id,
                kind="bilstm",
                model=model,
                vocab=model.vocab,
                explainable=explainable,
            )
        )

    def add_forest(
        self,
        model_id: str,
        model: ForestModel,
        vocab: Vocabulary,
        uses_aux: bool = True,
        explainable: bool = True,
    ) -> None:
        self._add(
            ModelEntry(
                model_id=model_id,
                kind="forest",
                model=model,
                vocab=vocab,
                forest_uses_aux=uses_aux,
                explainable=explainable,
            )
        )

    def _add(self, entry: ModelEntry) -> None:
        with self._lock:
            if entry.model_id in self._entries:
                raise ScoredeckError(f"model id {entry.model_id!r} already registered")
            self._entries[entry.model_id] = entry

    def get(self, model_id: str) -> Optional[ModelEntry]:
        return self._entries.get(model_id)

    def list(self) -> list[dict]:
        return [e.summary() for _, e in sorted(self._entries.items())]


def _aux_payload(aux: AuxFeatures) -> dict:
    return {
        "n_words": aux.n_words,
        "avg_word_len": aux.avg_word_len,
        "lexical_richness": aux.lexical_richness,
        "pos_distribution": list(aux.pos_dist),
        "mask_counts": list(aux.mask_counts),
        "redaction_pct": aux.redaction_pct,
        "domain_onehot": list(aux.domain_onehot),
    }


def _prepare(req: ScoreRequest, entry: ModelEntry):
    """Shared request pipeline: mask, tokenize with offsets, aux features."""
    if not req.response_text.strip():
        raise HTTPException(status_code=422, detail="response_text is empty")
    bad = [d for d in req.domain_ids if d not in DOMAIN_CATEGORIES]
    if bad:
        raise HTTPException(status_code=422, detail=f"unknown domain_ids: {bad}")
    tokens, spans = tokenize_with_spans(req.response_text)
    if not tokens:
        raise HTTPException(
            status_code=422, detail="response_text has no scoreable tokens"
        )
    domains = tuple(req.domain_ids) if req.domain_ids else (DOMAIN_CATEGORIES[0],)
    example = ResponseExample(
        question_id="",
        question_text=req.question,
        response_tokens=tokens,
        normalized_score=0.0,
        domain_ids=domains,
    )
    aux = extract_aux(example)
    ids = entry.vocab.encode(tokens)
    return tokens, spans, ids, aux


def _score_entry(entry: ModelEntry, ids: np.ndarray, aux_vec: np.ndarray) -> float:
    if entry.kind == "bilstm":
        return float(entry.model.predict_ids([ids], aux_vec)[0])
    row = bow_from_ids(ids, len(entry.vocab))
    if entry.forest_uses_aux:
        row = np.concatenate([row, aux_vec])
    return float(entry.model.predict(row[None, :])[0])


def _token_scorer(entry: ModelEntry, aux_vec: np.ndarray):
    if entry.kind == "bilstm":
        return NeuralTokenScorer(entry.model, aux_vec)
    aux_part = aux_vec if entry.forest_uses_aux else np.zeros(0)
    return ForestTokenScorer(entry.model, len(entry.vocab), aux_part)


def _explain_payload(req: ExplainRequest, entry: ModelEntry) -> dict:
    tokens, spans, ids, aux = _prepare(req, entry)
    aux_vec = aux.to_vector()
    scorer = _token_scorer(entry, aux_vec)
    result = explain_tokens(
        scorer, ids, tokens=tokens, epsilon=req.epsilon, max_n=req.max_n
    )
    enablers, disablers = top_enablers_disablers(result.phrases, req.top_k)
    phrases = []
    for p in sorted(enablers + disablers, key=lambda q: (-abs(q.ei), q.start)):
        rec = p.to_record()
        rec["char_start"] = spans[p.start][0]
        rec["char_end"] = spans[p.end][1]
        phrases.append(rec)
    return {
        "score": result.y_full,
        "phrases": phrases,
        "absolute_fallback": result.absolute_fallback,
    }


def create_app(
    registry: Optional[ModelRegistry] = None,
    async_token_threshold: int = ASYNC_TOKEN_THRESHOLD,
) -> FastAPI:
    registry = registry if registry is not None else ModelRegistry()
    app = FastAPI(title="scoredeck", docs_url=None, redoc_url=None)
    app.state.registry = registry
    app.state.async_token_threshold = async_token_threshold
    app.state.executor = ThreadPoolExecutor(max_workers=1)
    app.state.jobs = {}
    app.state.jobs_lock = threading.Lock()

    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(RequestValidationError)
    async def malformed_body(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    def _entry_or_404(model_id: str) -> ModelEntry:
        entry = registry.get(model_id)
        if entry is None:
            raise HTTPException(status_code=404, detail=f"no model {model_id!r}")
        return entry

    @app.get("/healthz", response_class=PlainTextResponse)
    def healthz() -> str:
        return "ok"

    @app.get("/v1/models")
    def models() -> list[dict]:
        return registry.list()

    @app.post("/v1/score")
    def score(req: ScoreRequest) -> dict:
        entry = _entry_or_404(req.model_id)
        _, _, ids, aux = _prepare(req, entry)
        value = _score_entry(entry, ids, aux.to_vector())
        return {"score": value, "aux_features": _aux_payload(aux)}

    @app.post("/v1/explain")
    def explain(req: ExplainRequest):
        entry = _entry_or_404(req.model_id)
        if not entry.explainable:
            raise HTTPException(
                status_code=409,
                detail=f"model {req.model_id!r} does not support explanation",
            )
        tokens, _, _, _ = _prepare(req, entry)
        if len(tokens) > app.state.async_token_threshold:
            token = uuid.uuid4().hex
            future = app.state.executor.submit(_explain_payload, req, entry)
            with app.state.jobs_lock:
                app.state.jobs[token] = future
            return JSONResponse(status_code=202, content={"poll": token})
        return _explain_payload(req, entry)

    @app.get("/v1/explain/{token}")
    def explain_poll(token: str):
        with app.state.jobs_lock:
            future: Optional[Future] = app.state.jobs.get(token)
        if future is None:
            raise HTTPException(status_code=404, detail="unknown poll token")
        if not future.done():
            return JSONResponse(status_code=202, content={"status": "pending"})
        exc = future.exception()
        if exc is not None:
            if isinstance(exc, HTTPException):
                raise exc
            raise HTTPException(status_code=500, detail=str(exc))
        return future.result()

    return app


def serve(
    registry: ModelRegistry, host: str = "127.0.0.1", port: int = DEFAULT_PORT
) -> None:
    """Run the service until interrupted (blocking)."""
    import uvicorn

    uvicorn.run(create_app(registry), host=host, port=port, log_level="warning")
