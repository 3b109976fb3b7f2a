"""Query-side and execution-side scores for predicted queries.

Query side: exact match (EM), stage-keyword match (QSM) and field coverage
(QFC). Execution side: result equality (EX), result field-name match (EFM)
and result value match (EVM). Every ratio is ``count(true) / N`` with failed
predictions counted as misses, never dropped.
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping

from .engine import DocumentDatabase, execute_query, fields_match, results_equal, values_match
from .errors import MissingDatabase, NormalizationConflict, Text2NoSQLError
from .query import QueryAst, extract_field_profile, extract_stage_keywords, normalize_renames, parse_query

METRICS = ("EM", "QSM", "QFC", "EX", "EFM", "EVM")


def _normalized(ast: QueryAst, normalize: bool) -> QueryAst:
    if not normalize:
        return ast
    try:
        return normalize_renames(ast)
    except NormalizationConflict:
        return ast


def exact_match(pred: QueryAst, gold: QueryAst, normalize: bool = True) -> bool:
    """Structural equality; object keys compare without regard to order."""
    p, g = _normalized(pred, normalize), _normalized(gold, normalize)
    return p.structure(ordered_keys=False) == g.structure(ordered_keys=False)


def query_stages_match(pred: QueryAst, gold: QueryAst) -> bool:
    return extract_stage_keywords(pred) == extract_stage_keywords(gold)


def query_fields_coverage(pred: QueryAst, gold: QueryAst, normalize: bool = True) -> bool:
    p = extract_field_profile(_normalized(pred, normalize))
    g = extract_field_profile(_normalized(gold, normalize))
    return p.database_fields >= g.database_fields and p.defined_fields >= g.defined_fields


@dataclass(frozen=True)
class ExecutionScores:
    ex: bool
    efm: bool
    evm: bool
    error: str | None = None


def execution_metrics(pred: QueryAst, gold: QueryAst, db: DocumentDatabase) -> ExecutionScores:
    # a missing collection yields an empty result, as a live server would
    try:
        want = execute_query(db, gold, strict=False)
    except Text2NoSQLError as exc:
        return ExecutionScores(False, False, False, f"gold query failed: {exc}")
    try:
        got = execute_query(db, pred, strict=False)
    except Text2NoSQLError as exc:
        return ExecutionScores(False, False, False, f"{type(exc).__name__}: {exc}")
    return ExecutionScores(results_equal(got, want), fields_match(got, want), values_match(got, want))


@dataclass
class ExampleScore:
    id: str
    em: bool = False
    qsm: bool = False
    qfc: bool = False
    ex: bool = False
    efm: bool = False
    evm: bool = False
    error: str | None = None

    def flags(self) -> dict[str, bool]:
        return {m: getattr(self, m.lower()) for m in METRICS}


@dataclass
class EvalReport:
    per_example: list[ExampleScore]

    @property
    def corpus(self) -> dict[str, float | int]:
        n = len(self.per_example)
        out: dict[str, float | int] = {"N": n}
        for m in METRICS:
            hits = sum(getattr(e, m.lower()) for e in self.per_example)
            out[m] = hits / n if n else 0.0
        return out

    def to_json(self) -> dict[str, Any]:
        return {"corpus": self.corpus, "per_example": [asdict(e) for e in self.per_example]}

    def write_json(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2, ensure_ascii=False)
            fh.write("\n")

    def write_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["id", *METRICS, "error"])
            for e in self.per_example:
                w.writerow([e.id, *(int(v) for v in e.flags().values()), e.error or ""])
            c = self.corpus
            w.writerow(["ALL", *(f"{c[m]:.4f}" for m in METRICS), f"N={c['N']}"])

    def summary(self) -> str:
        c = self.corpus
        return "  ".join(f"{m}={c[m] * 100:.2f}%" for m in METRICS) + f"  N={c['N']}"


def score_example(ex_id: str, pred_text: str, gold_text: str, db: DocumentDatabase,
                  normalize: bool = True) -> ExampleScore:
    out = ExampleScore(str(ex_id))
    try:
        gold = parse_query(gold_text)
    except Text2NoSQLError as exc:
        out.error = f"gold query does not parse: {exc}"
        return out
    try:
        pred = parse_query(pred_text)
    except Text2NoSQLError as exc:
        out.error = f"{type(exc).__name__}: {exc}"
        return out
    out.em = exact_match(pred, gold, normalize)
    out.qsm = query_stages_match(pred, gold)
    out.qfc = query_fields_coverage(pred, gold, normalize)
    scores = execution_metrics(pred, gold, db)
    out.ex, out.efm, out.evm, out.error = scores.ex, scores.efm, scores.evm, scores.error
    # both are guaranteed by construction; a failure here is a bug, not a bad prediction
    assert not out.em or (out.qsm and out.qfc), f"EM without QSM/QFC on {ex_id}"
    assert not out.ex or (out.efm and out.evm), f"EX without EFM/EVM on {ex_id}"
    return out


def evaluate_corpus(pairs: Iterable[Mapping[str, Any]], dbs: Mapping[str, DocumentDatabase],
                    normalize: bool = True, workers: int = 1) -> EvalReport:
    """Score ``{id, db_id, gold, pred}`` records; output order follows input order."""
    items = list(pairs)
    for i, p in enumerate(items):
        if p["db_id"] not in dbs:
            raise MissingDatabase(p["db_id"])

    def one(i_p: tuple[int, Mapping[str, Any]]) -> ExampleScore:
        i, p = i_p
        return score_example(p.get("id", i), p.get("pred") or "", p["gold"], dbs[p["db_id"]], normalize)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            scores = list(pool.map(one, enumerate(items)))
    else:
        scores = [one(x) for x in enumerate(items)]
    return EvalReport(scores)


def read_jsonl(path: str | os.PathLike) -> list[dict[str, Any]]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                try:
                    out.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise ValueError(f"{path}:{lineno}: {exc}") from None
    return out


def merge_predictions(gold_rows: list[dict[str, Any]], pred_path: str | os.PathLike) -> list[dict[str, Any]]:
    """Attach predictions to gold rows.

    ``pred_path`` holds either JSON lines with ``id`` and ``pred`` (or
    ``final_query``), or one raw query per line aligned with the gold file.
    """
    lines = [ln.rstrip("\n") for ln in Path(pred_path).read_text(encoding="utf-8").splitlines()]
    by_id: dict[str, str] = {}
    raw: list[str] = []
    for ln in lines:
        s = ln.strip()
        if s.startswith("{"):
            rec = json.loads(s)
            by_id[str(rec["id"])] = rec.get("pred", rec.get("final_query")) or ""
        elif s:
            raw.append(s)
    out = []
    for i, g in enumerate(gold_rows):
        row = dict(g)
        key = str(g.get("id", i))
        if key in by_id:
            row["pred"] = by_id[key]
        elif i < len(raw):
            row["pred"] = raw[i]
        else:
            row.setdefault("pred", "")
        out.append(row)
    return out
