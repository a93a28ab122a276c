"""Corpus ingestion: normalized documents and scoring sheets to scored examples.

Input documents use a normalized plain-text layout: UTF-8, pages separated
by form-feed characters, headings prefixed with "## " (question headings of
the form "Q7. ..." are also recognized).  Scoring sheets are CSV with a
header row naming bid_id, question_id, evaluator_id, raw_score, max_score.

Entity masking replaces URLs, emails, date/time expressions and
section/figure/table cross-references with reserved uppercase tokens so
that downstream models see a bounded symbol instead of an open class.
Redacted passages are marked with the literal token REDACTED.
"""

from __future__ import annotations

import csv
import io
import json
import re
import statistics
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .errors import (
    DomainError,
    DuplicateKey,
    EmptyDocument,
    RowError,
    SchemaError,
)

MASK_TOKENS = ("SECTION", "FIGURE", "URL", "EMAIL", "DATE", "TABLE")
REDACTED_TOKEN = "REDACTED"
RESERVED_TOKENS = MASK_TOKENS + (REDACTED_TOKEN,)

# The ten document domain categories (broad-level response categorization).
DOMAIN_CATEGORIES = (
    "quality_management",
    "compliance",
    "technology",
    "care_coordination",
    "member_services",
    "pharmacy",
    "behavioral_health",
    "claims",
    "network",
    "finance",
)

# Embedded English stopword list (~150 words).  Fixed so preprocessing is
# reproducible without external data files.
STOPWORDS = frozenset(
    """
    a about above after again against all am an and any are as at be because
    been before being below between both but by can cannot could did do does
    doing down during each few for from further had has have having he her
    here hers herself him himself his how i if in into is it its itself just
    me more most my myself no nor not now of off on once only or other our
    ours ourselves out over own same she should so some such than that the
    their theirs them themselves then there these they this those through to
    too under until up very was we were what when where which while who whom
    why will with would you your yours yourself yourselves shall may might
    must ought also upon onto among amongst per via etc ie eg
    """.split()
)

_MONTHS = (
    "January|February|March|April|May|June|July|August|September|October|"
    "November|December"
)

# Replacement order matters: URLs may contain @ (consume before EMAIL) and
# cross-references carry numbers (consume before DATE could touch them).
_MASK_PATTERNS = (
    ("URL", re.compile(r"\bhttps?://[^\s<>\"]+|\bwww\.[^\s<>\"]+", re.I)),
    ("EMAIL", re.compile(r"\b[A-Za-z0-9._%+-]+@[A-Za-z0-9.-]+\.[A-Za-z]{2,}\b")),
    ("SECTION", re.compile(r"\b[Ss]ections?\s+\d+(?:\.\d+)*\b|§\s*\d+(?:\.\d+)*")),
    ("FIGURE", re.compile(r"\b(?:[Ff]igures?|[Ff]ig\.)\s*\d+\b")),
    ("TABLE", re.compile(r"\b[Tt]ables?\s+\d+\b")),
    (
        "DATE",
        re.compile(
            r"\b\d{4}-\d{2}-\d{2}\b"
            r"|\b(?:" + _MONTHS + r")\s+\d{1,2},\s*\d{4}\b"
            r"|\b\d{1,2}:\d{2}(?::\d{2})?\b"
        ),
    ),
)

_TOKEN_WORD = re.compile(r"[A-Za-z0-9]+")


@dataclass
class DocMeta:
    """Provenance carried alongside a raw document."""

    bid_id: str
    state: str = ""
    year: int = 0
    domain_ids: tuple[str, ...] = ()


@dataclass
class RawDocumentFile:
    """A normalized plain-text document: one string per page."""

    pages: list[str]
    meta: DocMeta


@dataclass
class Section:
    heading: str
    question_id: Optional[str]
    body: str
    masked_body: str = ""
    mask_counts: dict[str, int] = field(default_factory=dict)
    redaction_pct: float = 0.0


@dataclass
class Document:
    sections: list[Section]
    header_lines_removed: int = 0
    footer_lines_removed: int = 0


@dataclass
class ScoreRecord:
    bid_id: str
    question_id: str
    evaluator_id: str
    raw_score: float
    max_score: float


@dataclass
class ResponseExample:
    """One question/response pair with its normalized score."""

    question_id: str
    question_text: str
    response_tokens: list[str]
    normalized_score: float
    domain_ids: tuple[str, ...] = ()
    bid_id: str = ""
    state: str = ""
    year: int = 0
    aux: object = None  # populated by features.extract_aux


@dataclass
class ParserConfig:
    """Controls document structure detection.

    heading_patterns: regexes tried per line; the first group (or the whole
    match) becomes the heading text.  repeat_threshold: fraction of pages a
    (digit-stripped) line must appear on, within the top/bottom margin, to
    count as a header/footer.
    """

    heading_patterns: tuple[str, ...] = (
        r"^##\s+(.+)$",
        r"^(Q\d+[.):]?\s+.+)$",
    )
    question_id_pattern: str = r"^(Q\d+)"
    repeat_threshold: float = 0.6
    margin_lines: int = 2


def mask_entities(text: str) -> tuple[str, dict[str, int]]:
    """Replace entity expressions with reserved tokens.

    Returns the masked text and the count of each reserved token present in
    the output (already-masked tokens are therefore counted even though no
    replacement happened, which makes the operation idempotent).
    """
    masked = text
    for token, pattern in _MASK_PATTERNS:
        masked = pattern.sub(token, masked)
    counts = {
        token: len(re.findall(rf"\b{token}\b", masked)) for token in MASK_TOKENS
    }
    return masked, counts


def preprocess(text: str, drop_stopwords: bool = True) -> list[str]:
    """Normalize masked text into a token sequence.

    Lowercases everything except reserved tokens, splits on whitespace and
    punctuation, drops pure-punctuation tokens and (optionally) stopwords.
    Deterministic and idempotent.
    """
    tokens: list[str] = []
    for chunk in text.split():
        core = chunk.strip("\"'()[]{}<>.,;:!?*#-_/\\|")
        if core in RESERVED_TOKENS:
            tokens.append(core)
            continue
        for word in _TOKEN_WORD.findall(chunk):
            if word in RESERVED_TOKENS:
                tokens.append(word)
                continue
            word = word.lower()
            if drop_stopwords and word in STOPWORDS:
                continue
            tokens.append(word)
    return tokens


def compute_redaction_pct(section_tokens: Sequence[str]) -> float:
    """Percentage of tokens equal to the REDACTED marker; 0 for empty input."""
    if not section_tokens:
        return 0.0
    n_red = sum(1 for t in section_tokens if t == REDACTED_TOKEN)
    return 100.0 * n_red / len(section_tokens)


def _strip_digits(line: str) -> str:
    return re.sub(r"\d+", "", line).strip()


def _detect_repeats(
    pages_lines: list[list[str]], cfg: ParserConfig, top: bool
) -> set[str]:
    """Digit-stripped lines appearing in the page margin of enough pages."""
    if len(pages_lines) < 2:
        return set()
    seen: dict[str, int] = {}
    for lines in pages_lines:
        margin = lines[: cfg.margin_lines] if top else lines[-cfg.margin_lines :]
        for key in {_strip_digits(ln) for ln in margin if ln.strip()}:
            seen[key] = seen.get(key, 0) + 1
    cutoff = cfg.repeat_threshold * len(pages_lines)
    return {key for key, n in seen.items() if n >= cutoff}


def _match_heading(line: str, cfg: ParserConfig) -> Optional[str]:
    for pat in cfg.heading_patterns:
        m = re.match(pat, line)
        if m:
            return m.group(1) if m.groups() else m.group(0)
    return None


def parse_document(raw: RawDocumentFile, cfg: Optional[ParserConfig] = None) -> Document:
    """Split a normalized document into sections, stripping headers/footers."""
    cfg = cfg or ParserConfig()
    if not raw.pages or all(not p.strip() for p in raw.pages):
        raise EmptyDocument(f"document {raw.meta.bid_id!r} has no content")

    pages_lines = [p.split("\n") for p in raw.pages]
    headers = _detect_repeats(pages_lines, cfg, top=True)
    footers = _detect_repeats(pages_lines, cfg, top=False)

    header_removed = 0
    footer_removed = 0
    content_lines: list[str] = []
    for lines in pages_lines:
        keep = []
        for idx, line in enumerate(lines):
            key = _strip_digits(line)
            if line.strip() and idx < cfg.margin_lines and key in headers:
                header_removed += 1
                continue
            if (
                line.strip()
                and idx >= len(lines) - cfg.margin_lines
                and key in footers
            ):
                footer_removed += 1
                continue
            keep.append(line)
        content_lines.extend(keep)

    sections: list[Section] = []
    current_heading: Optional[str] = None
    current_body: list[str] = []

    def flush():
        if current_heading is None and not any(l.strip() for l in current_body):
            return
        heading = current_heading or "PREAMBLE"
        qid_match = re.match(cfg.question_id_pattern, heading)
        body = "\n".join(current_body).strip("\n")
        masked, counts = mask_entities(body)
        red_tokens = preprocess(masked, drop_stopwords=False)
        sections.append(
            Section(
                heading=heading,
                question_id=qid_match.group(1) if qid_match else None,
                body=body,
                masked_body=masked,
                mask_counts=counts,
                redaction_pct=compute_redaction_pct(red_tokens),
            )
        )

    for line in content_lines:
        heading = _match_heading(line, cfg)
        if heading is not None:
            flush()
            current_heading = heading
            current_body = []
        else:
            current_body.append(line)
    flush()

    if not sections:
        raise EmptyDocument(f"document {raw.meta.bid_id!r} has no content")
    return Document(
        sections=sections,
        header_lines_removed=header_removed,
        footer_lines_removed=footer_removed,
    )


def load_document_file(text: str, meta: DocMeta) -> RawDocumentFile:
    """Split fixture text on form-feed page breaks."""
    pages = text.split("\f")
    return RawDocumentFile(pages=pages, meta=meta)


_SHEET_COLUMNS = ("bid_id", "question_id", "evaluator_id", "raw_score", "max_score")


def parse_scoring_sheet(table_text: str) -> list[ScoreRecord]:
    """Parse a CSV scoring sheet into validated records."""
    reader = csv.reader(io.StringIO(table_text))
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaError("scoring sheet is empty") from None
    header = [h.strip() for h in header]
    missing = [c for c in _SHEET_COLUMNS if c not in header]
    if missing:
        raise SchemaError(f"missing required column(s): {', '.join(missing)}")
    idx = {c: header.index(c) for c in _SHEET_COLUMNS}

    records = []
    for line_no, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        try:
            raw = float(row[idx["raw_score"]])
            mx = float(row[idx["max_score"]])
        except (ValueError, IndexError) as exc:
            raise RowError(line_no, f"unparseable number ({exc})") from None
        if mx <= 0:
            raise RowError(line_no, f"max_score must be positive, got {mx}")
        if not 0 <= raw <= mx:
            raise RowError(line_no, f"raw_score {raw} outside [0, {mx}]")
        records.append(
            ScoreRecord(
                bid_id=row[idx["bid_id"]].strip(),
                question_id=row[idx["question_id"]].strip(),
                evaluator_id=row[idx["evaluator_id"]].strip(),
                raw_score=raw,
                max_score=mx,
            )
        )
    return records


def normalize_score(raw: float, max_score: float) -> float:
    """Rescale a raw evaluator score to the common 0-100 scale."""
    if max_score <= 0:
        raise DomainError(f"max_score must be positive, got {max_score}")
    if not 0 <= raw <= max_score:
        raise DomainError(f"raw score {raw} outside [0, {max_score}]")
    return 100.0 * raw / max_score


_AGG_POLICIES = {
    "mean": statistics.fmean,
    "median": statistics.median,
    "min": min,
    "max": max,
}


@dataclass
class JoinResult:
    examples: list[ResponseExample]
    unmatched_questions: list[tuple[str, str]]  # (bid_id, question_id)
    unmatched_scores: list[tuple[str, str]]


def join_responses_scores(
    docs: Sequence[tuple[DocMeta, Document]],
    score_records: Sequence[ScoreRecord],
    policy: str = "mean",
) -> JoinResult:
    """Join parsed documents with scoring records on (bid_id, question_id).

    Multiple evaluator scores aggregate per the policy (raw scores combined
    first, then normalized).  Unmatched questions and score records are
    reported, never silently dropped.
    """
    if policy not in _AGG_POLICIES:
        raise DomainError(f"unknown aggregation policy {policy!r}")
    agg = _AGG_POLICIES[policy]

    by_key: dict[tuple[str, str], list[ScoreRecord]] = {}
    for rec in score_records:
        by_key.setdefault((rec.bid_id, rec.question_id), []).append(rec)

    examples: list[ResponseExample] = []
    unmatched_q: list[tuple[str, str]] = []
    matched_keys: set[tuple[str, str]] = set()
    seen_doc_keys: set[tuple[str, str]] = set()

    for meta, doc in docs:
        for section in doc.sections:
            if section.question_id is None:
                continue
            key = (meta.bid_id, section.question_id)
            if key in seen_doc_keys:
                raise DuplicateKey(f"duplicate question {key} in documents")
            seen_doc_keys.add(key)
            recs = by_key.get(key)
            if not recs:
                unmatched_q.append(key)
                continue
            matched_keys.add(key)
            max_scores = {r.max_score for r in recs}
            if len(max_scores) == 1:
                score = normalize_score(agg([r.raw_score for r in recs]), recs[0].max_score)
            else:
                # Evaluators used different scales: normalize first.
                score = agg([normalize_score(r.raw_score, r.max_score) for r in recs])
            tokens = preprocess(section.masked_body)
            examples.append(
                ResponseExample(
                    question_id=section.question_id,
                    question_text=section.heading,
                    response_tokens=tokens,
                    normalized_score=score,
                    domain_ids=tuple(meta.domain_ids),
                    bid_id=meta.bid_id,
                    state=meta.state,
                    year=meta.year,
                )
            )

    unmatched_s = sorted(set(by_key) - matched_keys)
    return JoinResult(examples, unmatched_q, unmatched_s)


# ---------------------------------------------------------------------------
# Corpus record file (line-delimited JSON)
# ---------------------------------------------------------------------------

_RECORD_FIELDS = (
    "bid_id",
    "state",
    "year",
    "domain_ids",
    "question_id",
    "question",
    "response_text",
    "raw_score",
    "max_score",
)


def write_corpus_records(records: Iterable[dict], path) -> None:
    """Write corpus records as one JSON object per line (sorted keys)."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            missing = [f for f in _RECORD_FIELDS if f not in rec]
            if missing:
                raise SchemaError(f"record missing field(s): {missing}")
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_corpus_records(path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RowError(line_no, f"bad JSON: {exc}") from None
            missing = [f for f in _RECORD_FIELDS if f not in rec]
            if missing:
                raise RowError(line_no, f"missing field(s): {missing}")
            records.append(rec)
    return records


def example_from_record(rec: dict) -> ResponseExample:
    """Run the preprocessing pipeline over one corpus record."""
    masked, _ = mask_entities(rec["response_text"])
    tokens = preprocess(masked)
    return ResponseExample(
        question_id=rec["question_id"],
        question_text=rec["question"],
        response_tokens=tokens,
        normalized_score=normalize_score(rec["raw_score"], rec["max_score"]),
        domain_ids=tuple(rec["domain_ids"]),
        bid_id=rec["bid_id"],
        state=rec.get("state", ""),
        year=int(rec.get("year", 0)),
    )


def scan_unmasked(text: str) -> list[str]:
    """Return entity matches still present in text (empty after masking)."""
    found = []
    for _, pattern in _MASK_PATTERNS:
        found.extend(m.group(0) for m in pattern.finditer(text))
    return found


_STRIP_CHARS = "\"'()[]{}<>.,;:!?*#-_/\\|"


def tokenize_with_spans(
    text: str, drop_stopwords: bool = True
) -> tuple[list[str], list[tuple[int, int]]]:
    """mask_entities + preprocess, keeping character offsets.

    Returns the token sequence the normal pipeline would produce for this
    text, plus one (start, end) character span per token pointing into the
    *original* text — entity mask tokens span the matched entity.  Slicing
    a span (or a run of spans) out of the original and re-running the
    pipeline reproduces exactly the covered tokens, which is what lets a
    client highlight phrases without owning a tokenizer.
    """
    # Carve the text into alternating unmasked stretches and entity spans,
    # applying patterns in the same order as mask_entities.
    pieces: list[tuple[int, int, Optional[str]]] = [(0, len(text), None)]
    for token, pattern in _MASK_PATTERNS:
        carved: list[tuple[int, int, Optional[str]]] = []
        for start, end, tok in pieces:
            if tok is not None:
                carved.append((start, end, tok))
                continue
            last = start
            for m in pattern.finditer(text, start, end):
                if m.start() > last:
                    carved.append((last, m.start(), None))
                carved.append((m.start(), m.end(), token))
                last = m.end()
            if last < end:
                carved.append((last, end, None))
        pieces = carved

    tokens: list[str] = []
    spans: list[tuple[int, int]] = []
    for start, end, tok in pieces:
        if tok is not None:
            tokens.append(tok)
            spans.append((start, end))
            continue
        segment = text[start:end]
        for cm in re.finditer(r"\S+", segment):
            chunk = cm.group(0)
            stripped = chunk.strip(_STRIP_CHARS)
            if stripped in RESERVED_TOKENS:
                lead = len(chunk) - len(chunk.lstrip(_STRIP_CHARS))
                tokens.append(stripped)
                spans.append(
                    (
                        start + cm.start() + lead,
                        start + cm.start() + lead + len(stripped),
                    )
                )
                continue
            for wm in _TOKEN_WORD.finditer(chunk):
                word = wm.group(0)
                w_span = (start + cm.start() + wm.start(), start + cm.start() + wm.end())
                if word in RESERVED_TOKENS:
                    tokens.append(word)
                    spans.append(w_span)
                    continue
                word = word.lower()
                if drop_stopwords and word in STOPWORDS:
                    continue
                tokens.append(word)
                spans.append(w_span)
    return tokens, spans
