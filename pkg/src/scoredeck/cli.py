"""Command-line entry points for the full pipeline.

Subcommands: gen, ingest, train, eval, explain, gridsearch, serve.
Config files are plain ``key=value`` lines ('#' starts a comment); the
SCOREDECK_SEED environment variable overrides any configured seed.  Every
run logs its resolved seed and config so artifacts can be reproduced; with
a fixed seed, output files are byte-identical across runs.

Exit codes: 0 success, 2 usage, 3 missing input file, 4 input schema or
model-file format violation, 5 configuration error, 1 anything else.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import typing
from pathlib import Path
from typing import Optional

import numpy as np

from .container import read_container
from .errors import (
    ConfigError,
    FormatError,
    RowError,
    SchemaError,
    ScoredeckError,
    VersionError,
)
from .explain import (
    ForestTokenScorer,
    NeuralTokenScorer,
    explain_tokens,
    render_html,
    render_terminal,
    top_enablers_disablers,
)
from .features import Vocabulary, extract_aux
from .forest import ForestModel, ForestParams, fit_forest, grid_search, load_forest, save_forest
from .ingest import (
    DOMAIN_CATEGORIES,
    DocMeta,
    ResponseExample,
    example_from_record,
    join_responses_scores,
    load_document_file,
    parse_document,
    parse_scoring_sheet,
    read_corpus_records,
    tokenize_with_spans,
    write_corpus_records,
)
from .model import ModelConfig, NeuralScorer, train as train_neural, validation_mae
from .pipeline import (
    corpus_vocab,
    design_matrix,
    encode_examples,
    evaluate_variants,
    format_eval_table,
    train_split,
)
from .service import DEFAULT_PORT, ModelRegistry, serve as serve_app
from .synth import GeneratorConfig, example_record, gen_corpus, write_gold_sidecar

log = logging.getLogger("scoredeck")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MISSING_FILE = 3
EXIT_SCHEMA = 4
EXIT_CONFIG = 5
EXIT_OTHER = 1


# ---------------------------------------------------------------------------
# key=value config files
# ---------------------------------------------------------------------------


def parse_config_text(text: str) -> dict[str, str]:
    """Parse ``key=value`` lines; '#' comments and blank lines ignored."""
    out: dict[str, str] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {line_no}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"config line {line_no}: empty key")
        if key in out:
            raise ConfigError(f"config line {line_no}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def _coerce_value(raw: str, target_type, key: str):
    """Convert one config string to the (resolved) type of a dataclass field."""
    args = typing.get_args(target_type)
    if type(None) in args:  # Optional[...]
        if raw.lower() in ("none", "null"):
            return None
        target_type = next(a for a in args if a is not type(None))
    try:
        if target_type is bool:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if target_type is int:
            return int(raw)
        if target_type is float:
            return float(raw)
        if typing.get_origin(target_type) is tuple:
            parts = [p.strip() for p in raw.split(",") if p.strip()]
            if all(_is_int(p) for p in parts):
                return tuple(int(p) for p in parts)
            try:
                return tuple(float(p) for p in parts)
            except ValueError:
                return tuple(parts)
        return raw
    except ValueError:
        raise ConfigError(f"config {key}={raw!r}: cannot parse as {target_type}") from None


def _is_int(s: str) -> bool:
    try:
        int(s)
        return True
    except ValueError:
        return False


def config_from_mapping(cls, raw: dict[str, str], ignore_unknown: bool = False):
    """Build a config dataclass from string key=value pairs."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        if key not in names:
            if ignore_unknown:
                continue
            raise ConfigError(
                f"unknown config key {key!r} for {cls.__name__}; "
                f"known: {', '.join(sorted(names))}"
            )
        kwargs[key] = _coerce_value(value, hints[key], key)
    return cls(**kwargs)


def _read_config_file(path: Optional[str]) -> dict[str, str]:
    if path is None:
        return {}
    return parse_config_text(_read_text(path))


def _read_text(path) -> str:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(path)
    return p.read_text(encoding="utf-8")


def resolve_seed(flag_seed: Optional[int], config_seed: Optional[int], default: int = 0) -> int:
    """Precedence: SCOREDECK_SEED env > --seed flag > config file > default."""
    env = os.environ.get("SCOREDECK_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"SCOREDECK_SEED must be an integer, got {env!r}") from None
    if flag_seed is not None:
        return flag_seed
    if config_seed is not None:
        return config_seed
    return default


# ---------------------------------------------------------------------------
# model artifact helpers
# ---------------------------------------------------------------------------


def vocab_sidecar_path(model_path) -> Path:
    return Path(str(model_path) + ".vocab.json")


def write_forest_sidecar(model_path, vocab: Vocabulary, include_aux: bool) -> None:
    payload = {"tokens": vocab.id_to_token, "include_aux": include_aux}
    vocab_sidecar_path(model_path).write_text(
        json.dumps(payload, sort_keys=True), encoding="utf-8"
    )


def read_forest_sidecar(model_path) -> tuple[Vocabulary, bool]:
    side = vocab_sidecar_path(model_path)
    if not side.exists():
        raise FileNotFoundError(side)
    payload = json.loads(side.read_text(encoding="utf-8"))
    if "tokens" not in payload or "include_aux" not in payload:
        raise SchemaError(f"{side}: expected keys 'tokens' and 'include_aux'")
    return Vocabulary(id_to_token=list(payload["tokens"])), bool(payload["include_aux"])


def load_any_model(path):
    """Load a model file of either kind.

    Returns ("bilstm", NeuralScorer, vocab, True) or
    ("forest", ForestModel, vocab, include_aux).
    """
    if not Path(path).exists():
        raise FileNotFoundError(path)
    kind, _, _ = read_container(path)
    if kind == "bilstm":
        net = NeuralScorer.load(path)
        return kind, net, net.vocab, net.config.use_aux
    if kind == "forest":
        forest = load_forest(path)
        vocab, include_aux = read_forest_sidecar(path)
        return kind, forest, vocab, include_aux
    raise FormatError(f"unknown model kind {kind!r} in {path}")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen(args) -> int:
    raw_cfg = _read_config_file(args.config)
    if args.docs is not None:
        raw_cfg["n_docs"] = str(args.docs)
    seed = resolve_seed(args.seed, int(raw_cfg["seed"]) if "seed" in raw_cfg else None)
    raw_cfg["seed"] = str(seed)
    cfg = config_from_mapping(GeneratorConfig, raw_cfg)
    log.info("gen seed=%d config=%s", seed, dataclasses.asdict(cfg))
    corpus = gen_corpus(cfg)
    write_corpus_records((example_record(ex) for ex in corpus), args.out)
    log.info("wrote %d records to %s", len(corpus), args.out)
    if args.gold:
        write_gold_sidecar(corpus, args.gold)
        log.info("wrote gold sidecar to %s", args.gold)
    return EXIT_OK


def _load_meta(path: Optional[str]) -> dict[str, dict]:
    if path is None:
        return {}
    payload = json.loads(_read_text(path))
    if not isinstance(payload, dict):
        raise SchemaError("meta file must map bid_id to {state, year, domain_ids}")
    return payload


def cmd_ingest(args) -> int:
    resp_dir = Path(args.responses)
    if not resp_dir.exists():
        raise FileNotFoundError(args.responses)
    meta_map = _load_meta(args.meta)
    score_records = parse_scoring_sheet(_read_text(args.scores))
    docs = []
    paths = sorted(resp_dir.glob("*.txt")) if resp_dir.is_dir() else [resp_dir]
    if not paths:
        raise SchemaError(f"no .txt response documents under {resp_dir}")
    for p in paths:
        bid_id = p.stem
        m = meta_map.get(bid_id, {})
        meta = DocMeta(
            bid_id=bid_id,
            state=m.get("state", ""),
            year=int(m.get("year", 0)),
            domain_ids=tuple(m.get("domain_ids", ())),
        )
        raw = load_document_file(p.read_text(encoding="utf-8"), meta)
        docs.append((meta, parse_document(raw)))
    joined = join_responses_scores(docs, score_records, policy=args.policy)
    for key in joined.unmatched_questions:
        log.warning("no score for question %s", key)
    for key in joined.unmatched_scores:
        log.warning("no document section for score record %s", key)

    # Normalization happened during the join, so records carry the
    # normalized value on a fixed 0-100 scale.
    section_bodies = {}
    for meta, doc in docs:
        for sec in doc.sections:
            if sec.question_id is not None:
                section_bodies[(meta.bid_id, sec.question_id)] = sec.body
    records = []
    for ex in joined.examples:
        records.append(
            {
                "bid_id": ex.bid_id,
                "state": ex.state,
                "year": ex.year,
                "domain_ids": list(ex.domain_ids),
                "question_id": ex.question_id,
                "question": ex.question_text,
                "response_text": section_bodies[(ex.bid_id, ex.question_id)],
                "raw_score": ex.normalized_score,
                "max_score": 100.0,
            }
        )
    write_corpus_records(records, args.out)
    log.info(
        "wrote %d examples to %s (%d unmatched questions, %d unmatched scores)",
        len(records),
        args.out,
        len(joined.unmatched_questions),
        len(joined.unmatched_scores),
    )
    return EXIT_OK


def _load_examples(path) -> list[ResponseExample]:
    if not Path(path).exists():
        raise FileNotFoundError(path)
    return [example_from_record(rec) for rec in read_corpus_records(path)]


def _forest_params_from_args(args, raw_cfg: dict[str, str]) -> ForestParams:
    cfg = {k: v for k, v in raw_cfg.items() if k in {f.name for f in dataclasses.fields(ForestParams)}}
    if args.trees is not None:
        cfg["n_trees"] = str(args.trees)
    if args.max_depth is not None:
        cfg["max_depth"] = str(args.max_depth)
    if args.min_leaf is not None:
        cfg["min_leaf"] = str(args.min_leaf)
    return config_from_mapping(ForestParams, cfg)


def cmd_train(args) -> int:
    examples = _load_examples(args.data)
    raw_cfg = _read_config_file(args.config)
    seed = resolve_seed(args.seed, int(raw_cfg["seed"]) if "seed" in raw_cfg else None)
    raw_cfg.pop("seed", None)
    include_aux = not args.no_aux

    if args.model == "forest":
        params = _forest_params_from_args(args, raw_cfg)
        log.info("train forest seed=%d params=%s aux=%s", seed, params, include_aux)
        vocab = corpus_vocab(examples)
        encoded = encode_examples(examples, vocab)
        X, y = design_matrix(encoded, len(vocab), include_aux=include_aux)
        forest = fit_forest(X, y, params, seed=seed)
        save_forest(forest, args.out)
        write_forest_sidecar(args.out, vocab, include_aux)
        oob = forest.oob_predictions
        covered = ~np.isnan(oob)
        if covered.any():
            oob_mae = float(np.mean(np.abs(oob[covered] - y[covered])))
            log.info("out-of-bag MAE %.3f over %d/%d examples", oob_mae, covered.sum(), len(y))
    else:
        model_keys = {f.name for f in dataclasses.fields(ModelConfig)}
        cfg = config_from_mapping(
            ModelConfig, {k: v for k, v in raw_cfg.items() if k in model_keys}
        )
        unknown = set(raw_cfg) - model_keys - {"val_fraction"}
        if unknown:
            raise ConfigError(f"unknown config key(s) for bilstm training: {sorted(unknown)}")
        if include_aux != cfg.use_aux:
            cfg = dataclasses.replace(cfg, use_aux=include_aux)
        val_fraction = args.val_fraction
        if val_fraction is None:
            val_fraction = float(raw_cfg.get("val_fraction", 0.2))
        log.info("train bilstm seed=%d config=%s", seed, dataclasses.asdict(cfg))
        vocab, dataset = train_split(examples, val_fraction=val_fraction, seed=seed)
        net = NeuralScorer.build(cfg, vocab, dataset.train, seed=seed)
        net, history = train_neural(net, dataset, seed=seed)
        net.save(args.out)
        if history.train_loss:
            log.info("final training loss %.3f", history.train_loss[-1])
        if dataset.val:
            log.info("validation MAE %.3f", validation_mae(net, dataset.val))
    log.info("wrote model to %s", args.out)
    return EXIT_OK


def cmd_eval(args) -> int:
    examples = _load_examples(args.data)
    raw_cfg = _read_config_file(args.config)
    seed = resolve_seed(args.seed, int(raw_cfg["seed"]) if "seed" in raw_cfg else None)
    raw_cfg.pop("seed", None)
    model_keys = {f.name for f in dataclasses.fields(ModelConfig)}
    neural_cfg = (
        config_from_mapping(ModelConfig, {k: v for k, v in raw_cfg.items() if k in model_keys})
        if any(k in model_keys for k in raw_cfg)
        else None
    )
    seeds = [seed + i for i in range(args.seeds)]
    log.info("eval folds=%d seeds=%s", args.folds, seeds)
    results = evaluate_variants(
        examples,
        k=args.folds,
        seeds=seeds,
        neural_config=neural_cfg,
        progress=lambda msg: log.info("%s", msg),
    )
    table = format_eval_table(results)
    print(table)
    if args.out:
        Path(args.out).write_text(table + "\n", encoding="utf-8")
        log.info("wrote eval table to %s", args.out)
    return EXIT_OK


def _parse_domains(arg: Optional[str]) -> tuple[str, ...]:
    if not arg:
        return (DOMAIN_CATEGORIES[0],)
    domains = tuple(d.strip() for d in arg.split(",") if d.strip())
    bad = [d for d in domains if d not in DOMAIN_CATEGORIES]
    if bad:
        raise ConfigError(f"unknown domain(s) {bad}; choose from {DOMAIN_CATEGORIES}")
    return domains


def cmd_explain(args) -> int:
    text = _read_text(args.doc)
    if not text.strip():
        raise SchemaError(f"{args.doc} is empty")
    kind, model, vocab, uses_aux = load_any_model(args.model)
    tokens, spans = tokenize_with_spans(text)
    if not tokens:
        raise SchemaError(f"{args.doc} has no scoreable tokens")
    domains = _parse_domains(args.domains)
    example = ResponseExample(
        question_id="",
        question_text="",
        response_tokens=tokens,
        normalized_score=0.0,
        domain_ids=domains,
    )
    aux_vec = extract_aux(example).to_vector()
    ids = vocab.encode(tokens)
    if kind == "bilstm":
        scorer = NeuralTokenScorer(model, aux_vec)
    else:
        scorer = ForestTokenScorer(model, len(vocab), aux_vec if uses_aux else np.zeros(0))
    result = explain_tokens(
        scorer, ids, tokens=tokens, epsilon=args.epsilon, max_n=args.max_n
    )
    enablers, disablers = top_enablers_disablers(result.phrases, args.top_k)
    effects = sorted(enablers + disablers, key=lambda p: (-abs(p.ei), p.start))
    log.info("score %.2f with %d phrase effects", result.y_full, len(effects))

    if args.format == "json":
        payload = {"score": result.y_full, "phrases": []}
        for p in effects:
            rec = p.to_record()
            rec["char_start"] = spans[p.start][0]
            rec["char_end"] = spans[p.end][1]
            payload["phrases"].append(rec)
        rendered = json.dumps(payload, indent=2, sort_keys=True)
    elif args.format == "html":
        rendered = render_html(tokens, effects, title=Path(args.doc).name)
    else:
        rendered = f"score: {result.y_full:.2f}\n" + render_terminal(
            tokens, effects, color=sys.stdout.isatty()
        )
    if args.out:
        Path(args.out).write_text(rendered + "\n", encoding="utf-8")
        log.info("wrote explanation to %s", args.out)
    else:
        print(rendered)
    return EXIT_OK


def cmd_gridsearch(args) -> int:
    examples = _load_examples(args.data)
    raw_grid = parse_config_text(_read_text(args.grid))
    param_names = {f.name for f in dataclasses.fields(ForestParams)}
    grid: dict[str, list] = {}
    for key, value in raw_grid.items():
        if key not in param_names:
            raise ConfigError(f"unknown grid key {key!r}; choose from {sorted(param_names)}")
        cells = []
        for part in value.split(","):
            part = part.strip()
            if part.lower() in ("none", "null"):
                cells.append(None)
            elif _is_int(part):
                cells.append(int(part))
            else:
                raise ConfigError(f"grid {key}: cannot parse {part!r}")
        grid[key] = cells
    seed = resolve_seed(args.seed, None)
    log.info("gridsearch folds=%d seed=%d grid=%s", args.folds, seed, grid)
    vocab = corpus_vocab(examples)
    encoded = encode_examples(examples, vocab)
    X, y = design_matrix(encoded, len(vocab), include_aux=not args.no_aux)
    result = grid_search(X, y, grid, k=args.folds, seed=seed)
    print(f"{'params':<48} {'mean_mae':>9}")
    for row in result.rows:
        print(f"{str(row.params):<48} {row.mean_mae:9.3f}")
    print(f"best: {result.best}")
    return EXIT_OK


def cmd_serve(args) -> int:
    registry = ModelRegistry()
    for spec_arg in args.model:
        if "=" not in spec_arg:
            raise ConfigError(f"--model expects name=path, got {spec_arg!r}")
        name, path = spec_arg.split("=", 1)
        kind, model, vocab, uses_aux = load_any_model(path)
        if kind == "bilstm":
            registry.add_neural(name, model)
        else:
            registry.add_forest(name, model, vocab, uses_aux=uses_aux)
        log.info("loaded %s model %r from %s", kind, name, path)
    log.info("serving on %s:%d", args.host, args.port)
    serve_app(registry, host=args.host, port=args.port)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scoredeck", description="RFP response scoring and explanation toolkit"
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic scored corpus")
    p.add_argument("--docs", type=int, default=None, help="number of documents")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="corpus JSONL output path")
    p.add_argument("--gold", default=None, help="optional gold-span sidecar path")
    p.add_argument("--config", default=None, help="key=value generator config file")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("ingest", help="parse response documents + scoring sheet")
    p.add_argument("--responses", required=True, help="directory of .txt documents")
    p.add_argument("--scores", required=True, help="CSV scoring sheet")
    p.add_argument("--meta", default=None, help="JSON bid_id -> {state, year, domain_ids}")
    p.add_argument("--policy", default="mean", help="multi-evaluator aggregation policy")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train a model on a corpus file")
    p.add_argument("--model", choices=("forest", "bilstm"), required=True)
    p.add_argument("--data", required=True, help="corpus JSONL")
    p.add_argument("--out", required=True, help="model output path")
    p.add_argument("--config", default=None, help="key=value config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--val-fraction", type=float, default=None)
    p.add_argument("--no-aux", action="store_true", help="text features only")
    p.add_argument("--trees", type=int, default=None, help="forest size")
    p.add_argument("--max-depth", type=int, default=None)
    p.add_argument("--min-leaf", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="cross-validated MAE table over model variants")
    p.add_argument("--data", required=True)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--seeds", type=int, default=3, help="number of seeds")
    p.add_argument("--seed", type=int, default=None, help="first seed")
    p.add_argument("--config", default=None)
    p.add_argument("--out", default=None, help="also write the table to this file")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("explain", help="phrase-level explanation for one document")
    p.add_argument("--doc", required=True, help="plain-text document")
    p.add_argument("--model", required=True, help="trained model file")
    p.add_argument("--format", choices=("terminal", "html", "json"), default="terminal")
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--epsilon", type=float, default=1.0)
    p.add_argument("--max-n", type=int, default=5)
    p.add_argument("--domains", default=None, help="comma-separated domain ids")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("gridsearch", help="forest hyperparameter grid search")
    p.add_argument("--data", required=True)
    p.add_argument("--grid", required=True, help="key=comma,separated,values file")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--no-aux", action="store_true")
    p.set_defaults(func=cmd_gridsearch)

    p = sub.add_parser("serve", help="run the HTTP scoring service")
    p.add_argument(
        "--model",
        action="append",
        required=True,
        metavar="NAME=PATH",
        help="model to load (repeatable)",
    )
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=DEFAULT_PORT)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(message)s",
        stream=sys.stderr,
        force=True,
    )
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        log.error("missing file: %s", exc)
        return EXIT_MISSING_FILE
    except (SchemaError, RowError, FormatError, VersionError) as exc:
        log.error("%s", exc)
        return EXIT_SCHEMA
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except ScoredeckError as exc:
        log.error("%s", exc)
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
