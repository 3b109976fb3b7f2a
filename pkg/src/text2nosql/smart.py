"""The four-step generation pipeline: schema prediction, initial query
generation, retrieval-grounded refinement and execution-grounded optimisation."""

from __future__ import annotations

import json
import logging
import os
import re
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

from . import prompts
from .engine import DocumentDatabase, execute_query
from .errors import EmptyLibrary, GenerationFailed, NoQueryFound, ProviderError, Text2NoSQLError
from .providers import ChatClient
from .query import parse_query
from .retrieval import Embedder, ExampleRecord, RetrievalWeights, VectorLibrary, embed_query, retrieve_top_k

log = logging.getLogger(__name__)

SCHEMA_KINDS = ("db_fields", "defined_fields", "result_fields", "collections")
EXCERPT_SIZE = 5

# -- query extraction ------------------------------------------------------------------------

_FENCE = re.compile(r"```[^\n`]*\n(.*?)```", re.S)
_CALL = re.compile(r"db\.[A-Za-z0-9_]+\.(?:find|aggregate)\s*\(")
_CHAIN = re.compile(r"\s*\.\s*(?:sort|limit|skip|pretty|toArray)\s*\(")


def _close_paren(text: str, i: int) -> int:
    """Index just past the parenthesis matching the one before ``i``, or -1."""
    depth, quote = 1, None
    while i < len(text):
        ch = text[i]
        if quote:
            if ch == "\\":
                i += 1
            elif ch == quote:
                quote = None
        elif ch in "\"'":
            quote = ch
        elif ch in "([{":
            depth += 1
        elif ch in ")]}":
            depth -= 1
            if depth == 0:
                return i + 1
        i += 1
    return -1


def _last_call(text: str) -> str | None:
    starts = list(_CALL.finditer(text))
    if not starts:
        return None
    m = starts[-1]
    end = _close_paren(text, m.end())
    if end < 0:
        # unbalanced: keep the rest of the line and let the parser complain
        line_end = text.find("\n", m.start())
        return text[m.start():line_end if line_end >= 0 else len(text)].strip()
    while True:
        chained = _CHAIN.match(text, end)
        if not chained:
            break
        nxt = _close_paren(text, chained.end())
        if nxt < 0:
            break
        end = nxt
    return text[m.start():end]


def extract_query(reply: str) -> str:
    """Pull the final query out of a model reply.

    The last fenced code block wins; otherwise the last ``db.<name>.find(...)`` or
    ``db.<name>.aggregate(...)`` call in the text. The result always ends in ``;``.
    """
    blocks = _FENCE.findall(reply or "")
    if blocks:
        body = blocks[-1].strip()
        q = _last_call(body) or body
    else:
        q = _last_call(reply or "")
    if not q or not q.strip():
        raise NoQueryFound("no query found in model reply")
    q = q.strip()
    return q if q.endswith(";") else q + ";"


# -- single stages ----------------------------------------------------------------------------


@dataclass
class Call:
    """One model exchange, kept verbatim in the trace."""
    key: str
    messages: list[dict[str, str]]
    reply: str | None = None
    error: str | None = None


def _ask(client: ChatClient, user: str, key: str, calls: list[Call] | None) -> str:
    msgs = prompts.messages(user)
    call = Call(key, msgs)
    if calls is not None:
        calls.append(call)
    try:
        call.reply = client.chat(msgs, key=key)
    except ProviderError as exc:
        call.error = str(exc)
        raise
    return call.reply


def split_fields(reply: str) -> list[str]:
    """Comma- or newline-separated names, deduplicated, first occurrence kept."""
    out: dict[str, None] = {}
    for part in re.split(r"[,\n]", reply or ""):
        name = part.strip().strip("`").strip()
        if name:
            out.setdefault(name)
    return list(out)


def predict_schema(client: ChatClient, nlq: str, db_schema: str, key: str = "",
                   calls: list[Call] | None = None) -> dict[str, list[str]]:
    """One call per schema kind; an empty reply is an empty prediction."""
    out = {}
    for kind in SCHEMA_KINDS:
        user = prompts.SCHEMA_TEMPLATE.format(instruction=prompts.SCHEMA_INSTRUCTIONS[kind], nlq=nlq, schema=db_schema)
        out[kind] = split_fields(_ask(client, user, f"{key}|schema:{kind}", calls))
    return out


def generate_initial_query(client: ChatClient, nlq: str, db_schema: str, key: str = "",
                           calls: list[Call] | None = None) -> str:
    """The generator's raw reply; use :func:`extract_query` on it."""
    return _ask(client, prompts.GENERATE_TEMPLATE.format(nlq=nlq, schema=db_schema), f"{key}|generate", calls)


def _render_examples(examples: Sequence[ExampleRecord], results: Sequence[str] | None = None) -> str:
    if not examples:
        return "(none)"
    parts = []
    for i, rec in enumerate(examples, 1):
        lines = [f"### Example {i}", f"   - Question: `{rec.nlq}`", f"   - Query: {rec.nosql}"]
        if results is not None:
            lines.append(f"   - Execution Results: {results[i - 1]}")
        parts.append("\n".join(lines))
    return "\n".join(parts)


def _render_predicted(predicted: Mapping[str, Sequence[str]]) -> str:
    titles = {"db_fields": "Predicted Database Fields", "defined_fields": "Predicted Defined Fields",
              "result_fields": "Predicted Result Fields", "collections": "Predicted Collections"}
    return "\n".join(f"## {titles[k]}\n   - `{','.join(predicted.get(k, []))}`" for k in SCHEMA_KINDS)


def _checked(reply: str, previous: str, stage: str, warnings: list[str]) -> str:
    try:
        q = extract_query(reply)
        parse_query(q)
        return q
    except Text2NoSQLError as exc:
        warnings.append(f"{stage}: unusable reply ({exc}); keeping the previous query")
        log.warning("%s: unusable reply (%s); keeping the previous query", stage, exc)
        return previous


def refine_query(client: ChatClient, nlq: str, db_schema: str, predicted: Mapping[str, Sequence[str]],
                 initial_query: str, examples: Sequence[ExampleRecord], key: str = "",
                 calls: list[Call] | None = None, warnings: list[str] | None = None) -> str:
    user = prompts.REFINE_TEMPLATE.format(
        examples=_render_examples(examples), schema=db_schema, nlq=nlq, query=initial_query,
        predicted=_render_predicted(predicted), instruction=prompts.REFINE_INSTRUCTION)
    reply = _ask(client, user, f"{key}|refine", calls)
    return _checked(reply, initial_query, "refine", warnings if warnings is not None else [])


def execution_excerpt(db: DocumentDatabase | None, query: str, size: int = EXCERPT_SIZE) -> str:
    """First ``size`` result documents as JSON, or the error the query raised."""
    if db is None:
        return "Execution failed: database not available"
    try:
        res = execute_query(db, parse_query(query))
    except Text2NoSQLError as exc:
        return f"Execution failed: {type(exc).__name__}: {exc}"
    text = prompts.dump_json(res.docs[:size])
    if len(res) > size:
        text += f"\n(showing {size} of {len(res)} documents)"
    return text


def optimize_query(client: ChatClient, db: DocumentDatabase, refined_query: str,
                   examples_with_results: Sequence[tuple[ExampleRecord, str]], nlq: str,
                   predicted_result_fields: Sequence[str], db_schema: str | None = None,
                   excerpt_size: int = EXCERPT_SIZE, key: str = "", calls: list[Call] | None = None,
                   warnings: list[str] | None = None) -> str:
    schema = db_schema if db_schema is not None else prompts.describe_schema(db)
    excerpt = execution_excerpt(db, refined_query, excerpt_size)
    user = prompts.OPTIMIZE_TEMPLATE.format(
        examples=_render_examples([e for e, _ in examples_with_results], [r for _, r in examples_with_results]),
        schema=schema, nlq=nlq, target_fields=",".join(predicted_result_fields), query=refined_query,
        results=excerpt, instruction=prompts.OPTIMIZE_INSTRUCTION)
    reply = _ask(client, user, f"{key}|optimize", calls)
    return _checked(reply, refined_query, "optimize", warnings if warnings is not None else [])


# -- the whole run -----------------------------------------------------------------------------


@dataclass
class SmartClients:
    schema: ChatClient
    generator: ChatClient
    refiner: ChatClient
    optimizer: ChatClient


@dataclass
class SmartConfig:
    weights: RetrievalWeights = field(default_factory=RetrievalWeights)
    k: int = 20
    excerpt_size: int = EXCERPT_SIZE
    workers: int = 1


@dataclass
class SmartTrace:
    id: str
    db_id: str
    nlq: str
    predicted_schemas: dict[str, list[str]] = field(default_factory=dict)
    initial_query: str | None = None
    refine_retrieved_ids: list[str] = field(default_factory=list)
    refined_query: str | None = None
    execution_excerpt: str | None = None
    optimize_retrieved_ids: list[str] = field(default_factory=list)
    final_query: str | None = None
    status: str = "pending"
    error: str | None = None
    warnings: list[str] = field(default_factory=list)
    transcripts: list[dict[str, Any]] = field(default_factory=list)

    def to_json(self) -> dict[str, Any]:
        return asdict(self)

    def to_line(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, ensure_ascii=False)


class StageLog:
    """Append-only record of finished stages, so a crashed run can resume mid-example."""

    def __init__(self, path: str | os.PathLike | None):
        self.path = Path(path) if path else None
        self._lock = threading.Lock()
        self.done: dict[str, dict[str, Any]] = {}
        if self.path and self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    rec = json.loads(line)
                    self.done.setdefault(rec["id"], {})[rec["stage"]] = rec["value"]

    def run(self, ex_id: str, stage: str, fn: Callable[[], Any]) -> Any:
        cached = self.done.get(ex_id, {})
        if stage in cached:
            return cached[stage]
        value = fn()
        if isinstance(value, dict) and value.get("error"):
            return value  # provider failures are retried on resume, not replayed
        with self._lock:
            self.done.setdefault(ex_id, {})[stage] = value
            if self.path:
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps({"id": ex_id, "stage": stage, "value": value}, sort_keys=True,
                                        ensure_ascii=False) + "\n")
        return value


def _retrieve(library: VectorLibrary, embedder: Embedder, cfg: SmartConfig, nlq: str, nosql: str | None,
              predicted: Mapping[str, Sequence[str]], warnings: list[str]) -> list[ExampleRecord]:
    q = embed_query(embedder, nlq, nosql, ",".join(predicted.get("db_fields", [])),
                    ",".join(predicted.get("result_fields", [])))
    try:
        return retrieve_top_k(library, q, cfg.weights, cfg.k)
    except EmptyLibrary:
        warnings.append("retrieval: library is empty")
        return []


def smart_example(example: Mapping[str, Any], dbs: Mapping[str, DocumentDatabase], library: VectorLibrary,
                  clients: SmartClients, embedder: Embedder, cfg: SmartConfig = SmartConfig(),
                  stages: StageLog | None = None) -> SmartTrace:
    stages = stages or StageLog(None)
    ex_id = str(example["id"])
    t = SmartTrace(ex_id, example.get("db_id", ""), example["nlq"])
    db = dbs.get(t.db_id)
    if db is None:
        t.status, t.error = "failed", f"MissingDatabase: no database named {t.db_id!r}"
        return t
    schema = prompts.describe_schema(db)

    def with_calls(fn):
        def go():
            calls: list[Call] = []
            warnings: list[str] = []
            try:
                value = fn(calls, warnings)
                err = None
            except ProviderError as exc:
                value, err = None, f"ProviderError: {exc}"
            return {"value": value, "error": err, "warnings": warnings, "calls": [asdict(c) for c in calls]}
        return go

    def absorb(stage: str, rec: dict[str, Any]) -> Any:
        t.transcripts.extend(dict(c, stage=stage) for c in rec["calls"])
        t.warnings.extend(rec["warnings"])
        return rec["value"]

    # (i) schema prediction: a provider failure degrades to empty predictions
    rec = stages.run(ex_id, "schema", with_calls(lambda c, w: predict_schema(clients.schema, t.nlq, schema, ex_id, c)))
    t.predicted_schemas = absorb("schema", rec) or {k: [] for k in SCHEMA_KINDS}
    if rec["error"]:
        t.warnings.append(f"schema: {rec['error']}")

    # (ii) initial query
    def gen(calls, warnings):
        reply = generate_initial_query(clients.generator, t.nlq, schema, ex_id, calls)
        try:
            return extract_query(reply)
        except NoQueryFound:
            return None
    rec = stages.run(ex_id, "generate", with_calls(gen))
    t.initial_query = absorb("generate", rec)
    if t.initial_query is None:
        t.status = "failed"
        t.error = rec["error"] or f"{GenerationFailed.__name__}: generator reply contained no query"
        return t

    # (iii) refinement grounded in retrieved examples
    def refine(calls, warnings):
        found = _retrieve(library, embedder, cfg, t.nlq, t.initial_query, t.predicted_schemas, warnings)
        ids = [r.id for r in found]
        try:
            q = refine_query(clients.refiner, t.nlq, schema, t.predicted_schemas, t.initial_query, found,
                             ex_id, calls, warnings)
        except ProviderError as exc:
            warnings.append(f"refine: ProviderError: {exc}; keeping the initial query")
            q = t.initial_query
        return {"ids": ids, "query": q}
    out = absorb("refine", stages.run(ex_id, "refine", with_calls(refine)))
    t.refine_retrieved_ids, t.refined_query = out["ids"], out["query"]

    # (iv) optimisation grounded in execution results
    def optimize(calls, warnings):
        found = _retrieve(library, embedder, cfg, t.nlq, t.refined_query, t.predicted_schemas, warnings)
        with_results = [(r, execution_excerpt(dbs.get(r.db_id), r.nosql, cfg.excerpt_size)) for r in found]
        excerpt = execution_excerpt(db, t.refined_query, cfg.excerpt_size)
        try:
            q = optimize_query(clients.optimizer, db, t.refined_query, with_results, t.nlq,
                               t.predicted_schemas.get("result_fields", []), schema, cfg.excerpt_size,
                               ex_id, calls, warnings)
        except ProviderError as exc:
            warnings.append(f"optimize: ProviderError: {exc}; keeping the refined query")
            q = t.refined_query
        return {"ids": [r.id for r in found], "excerpt": excerpt, "query": q}
    out = absorb("optimize", stages.run(ex_id, "optimize", with_calls(optimize)))
    t.optimize_retrieved_ids, t.execution_excerpt, t.final_query = out["ids"], out["excerpt"], out["query"]

    try:
        parse_query(t.final_query)
        t.status = "ok"
    except Text2NoSQLError as exc:
        t.status, t.error = "failed", f"final query does not parse: {exc}"
    return t


def read_traces(path: str | os.PathLike) -> list[dict[str, Any]]:
    p = Path(path)
    if not p.exists():
        return []
    return [json.loads(line) for line in p.read_text(encoding="utf-8").splitlines() if line.strip()]


def provider_failed(trace: SmartTrace | Mapping[str, Any]) -> bool:
    blob = trace if isinstance(trace, Mapping) else trace.to_json()
    return blob.get("status") == "failed" and str(blob.get("error") or "").startswith(ProviderError.__name__)


def run_manifest(clients: SmartClients, library: VectorLibrary, embedder: Embedder, cfg: SmartConfig,
                 n: int) -> dict[str, Any]:
    def desc(c):
        return c.describe() if hasattr(c, "describe") else {"name": getattr(c, "name", type(c).__name__)}
    return {
        "examples": n,
        "retrieval": {"w_nlq": cfg.weights.w_nlq, "w_other": cfg.weights.w_other, "k": cfg.k},
        "excerpt_size": cfg.excerpt_size,
        "library": {"provider_tag": library.provider_tag, "records": len(library)},
        "embedder": embedder.tag,
        "clients": {role: dict(desc(getattr(clients, role)), temperature=getattr(clients, role).temperature)
                    for role in ("schema", "generator", "refiner", "optimizer")},
    }


def run_smart(test_set: Iterable[Mapping[str, Any]], dbs: Mapping[str, DocumentDatabase], library: VectorLibrary,
              clients: SmartClients, embedder: Embedder, cfg: SmartConfig = SmartConfig(),
              out_dir: str | os.PathLike | None = None, resume: bool = True) -> list[SmartTrace]:
    """Run every example; with ``out_dir`` the traces go to ``traces.jsonl``.

    Traces are written in input order. Examples already present in an existing
    trace file are skipped when ``resume`` is set, and stages finished before a
    crash are replayed from ``stages.jsonl`` instead of calling the models again.
    """
    examples = list(test_set)
    traces_path = stages_path = None
    finished: dict[str, SmartTrace] = {}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        traces_path, stages_path = out / "traces.jsonl", out / "stages.jsonl"
        if not resume:
            for p in (traces_path, stages_path):
                if p.exists():
                    p.unlink()
        traces_path.touch()
        for blob in read_traces(traces_path):
            # later lines win; examples stopped by a provider outage count as unfinished
            if provider_failed(blob):
                finished.pop(blob["id"], None)
            else:
                finished[blob["id"]] = SmartTrace(**blob)
        (out / "smart_manifest.json").write_text(
            json.dumps(run_manifest(clients, library, embedder, cfg, len(examples)), indent=2, sort_keys=True) + "\n",
            encoding="utf-8")
    stages = StageLog(stages_path)
    todo = [e for e in examples if str(e["id"]) not in finished]

    def one(ex):
        try:
            return smart_example(ex, dbs, library, clients, embedder, cfg, stages)
        except Exception as exc:  # keep the run going; the trace carries the failure
            log.exception("example %s crashed", ex.get("id"))
            return SmartTrace(str(ex["id"]), ex.get("db_id", ""), ex.get("nlq", ""), status="failed",
                              error=f"{type(exc).__name__}: {exc}")

    with ThreadPoolExecutor(max(1, cfg.workers)) as pool:
        for ex, trace in zip(todo, pool.map(one, todo)):
            finished[trace.id] = trace
            if traces_path is not None:
                with traces_path.open("a", encoding="utf-8") as fh:
                    fh.write(trace.to_line() + "\n")
    return [finished[str(e["id"])] for e in examples]
