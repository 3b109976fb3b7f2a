"""Dataset construction loop.

For each seed question a candidate query is generated, executed and compared
with the pre-computed reference result. Mismatches go through an
inspector/debugger loop: a cheaper model gets two tries, the strongest model
gets one, and the seed is abandoned after that. Verified queries get extra
questions from several models, and every record passes the rename normaliser
and the special-operation filter before it is emitted.
"""

from __future__ import annotations

import enum
import json
import logging
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from . import prompts
from .engine import Comparison, DocumentDatabase, ResultSet, compare_results, execute_query
from .errors import NoQueryFound, NormalizationConflict, ProviderError, SchemaError, Text2NoSQLError
from .providers import ChatClient
from .query import DEFAULT_BANNED_OPS, detect_special_ops, normalize_renames, parse_query, serialize_canonical
from .smart import extract_query

log = logging.getLogger(__name__)

SECOND_TIER_TRIES = 2
QUESTIONS_PER_QUERY = 5


@dataclass
class SeedExample:
    id: str
    nlq: str
    db_id: str
    reference_result: ResultSet
    target_schema: list[str] = field(default_factory=list)

    @classmethod
    def from_json(cls, blob: Mapping[str, Any], index: int = 0) -> "SeedExample":
        if "reference_result" not in blob:
            raise SchemaError(f"seed {blob.get('id', index)!r} has no reference_result")
        ref = blob["reference_result"]
        if isinstance(ref, dict):
            ref = ResultSet(list(ref["docs"]), bool(ref.get("ordered", False)))
        elif isinstance(ref, list):
            ref = ResultSet(list(ref))
        else:
            raise SchemaError(f"seed {blob.get('id', index)!r}: reference_result must be a list of documents")
        schema = blob.get("target_schema") or []
        if isinstance(schema, str):
            schema = [s.strip() for s in schema.split(",") if s.strip()]
        return cls(str(blob.get("id", index)), blob["nlq"], blob["db_id"], ref, list(schema))


def load_seeds(path: str | os.PathLike) -> list[SeedExample]:
    out = []
    for i, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines()):
        if line.strip():
            out.append(SeedExample.from_json(json.loads(line), i))
    return out


# -- verification -------------------------------------------------------------------------


@dataclass(frozen=True)
class Verification:
    """``kind`` is a :class:`Comparison` value, or ``"Error"`` when the candidate did not run."""
    kind: str
    detail: str = ""
    result: ResultSet | None = None

    @property
    def verified(self) -> bool:
        return self.kind == Comparison.EQUAL.value


def verify_candidate(candidate: str, seed: SeedExample, db: DocumentDatabase) -> Verification:
    try:
        result = execute_query(db, parse_query(candidate))
    except Text2NoSQLError as exc:
        return Verification("Error", f"{type(exc).__name__}: {exc}")
    verdict = compare_results(result, seed.reference_result)
    detail = "" if verdict is Comparison.EQUAL else \
        f"{verdict.value}: candidate returned {len(result)} documents, reference has {len(seed.reference_result)}"
    return Verification(verdict.value, detail, result)


# -- model calls -------------------------------------------------------------------------


def _user_messages(user: str, demo: Sequence[Mapping[str, str]] | None) -> list[dict[str, str]]:
    return prompts.messages(user, demo=demo or ())


def generate_candidate(client: ChatClient, seed: SeedExample, db_schema: str,
                       cot_demo: Sequence[Mapping[str, str]] | None = None, key: str | None = None) -> str:
    """First turn: the worked demonstration (if any); second turn: this seed."""
    if not cot_demo:
        log.warning("seed %s: no demonstration supplied, prompting without one", seed.id)
    user = prompts.CANDIDATE_TEMPLATE.format(nlq=seed.nlq, target_fields=",".join(seed.target_schema),
                                             schema=db_schema)
    reply = client.chat(_user_messages(user, cot_demo), key=key or f"{seed.id}|candidate")
    return extract_query(reply)


def generate_feedback(client: ChatClient, candidate: str, seed: SeedExample, verification: Verification,
                      key: str | None = None) -> str:
    """Ask the inspector where the two results differ and why; the reply is stored as is."""
    got = verification.result.docs if verification.result is not None else verification.detail
    user = prompts.FEEDBACK_TEMPLATE.format(
        nlq=seed.nlq, target_fields=",".join(seed.target_schema), query=candidate,
        query_result=prompts.dump_json(got), reference_result=prompts.dump_json(seed.reference_result.docs),
        diff=verification.detail or verification.kind)
    return client.chat(prompts.messages(user), key=key or f"{seed.id}|feedback")


class Status(str, enum.Enum):
    PENDING = "Pending"
    VERIFIED = "Verified"
    ABANDONED = "Abandoned"


@dataclass
class DebugState:
    candidate_query: str
    attempts: int = 0
    feedback_history: list[str] = field(default_factory=list)
    escalated: bool = False
    status: Status = Status.PENDING
    tried: list[str] = field(default_factory=list)
    last_verdict: str | None = None

    def to_json(self) -> dict[str, Any]:
        return {"candidate_query": self.candidate_query, "attempts": self.attempts,
                "feedback_history": list(self.feedback_history), "escalated": self.escalated,
                "status": self.status.value, "tried": list(self.tried), "last_verdict": self.last_verdict}

    @classmethod
    def from_json(cls, blob: Mapping[str, Any]) -> "DebugState":
        return cls(blob["candidate_query"], blob.get("attempts", 0), list(blob.get("feedback_history", [])),
                   blob.get("escalated", False), Status(blob.get("status", "Pending")),
                   list(blob.get("tried", [])), blob.get("last_verdict"))


@dataclass
class DebugClients:
    second_tier: ChatClient
    top_tier: ChatClient
    inspector: ChatClient | None = None

    @property
    def feedback(self) -> ChatClient:
        return self.inspector or self.second_tier


def debug_loop(clients: DebugClients, state: DebugState, seed: SeedExample, db: DocumentDatabase,
               cot_demo: Sequence[Mapping[str, str]] | None = None, db_schema: str | None = None) -> DebugState:
    """Drive ``state`` to Verified or Abandoned.

    ``attempts`` counts failed verifications of debugged candidates. After
    ``SECOND_TIER_TRIES`` of them the top-tier client gets exactly one try. The
    state is updated in place, so when a provider error escapes, the caller
    still holds everything done so far and can resume from it.
    """
    if state.status is not Status.PENDING:
        return state
    schema = db_schema if db_schema is not None else prompts.describe_schema(db)
    v = verify_candidate(state.candidate_query, seed, db)
    state.last_verdict = v.kind
    if v.verified:
        state.status = Status.VERIFIED
        return state
    if len(state.feedback_history) <= state.attempts:
        state.feedback_history.append(generate_feedback(clients.feedback, state.candidate_query, seed, v,
                                                        key=f"{seed.id}|feedback"))
    while True:
        state.escalated = state.attempts >= SECOND_TIER_TRIES
        client = clients.top_tier if state.escalated else clients.second_tier
        user = prompts.DEBUG_TEMPLATE.format(
            nlq=seed.nlq, target_fields=",".join(seed.target_schema), schema=schema, query=state.candidate_query,
            feedback="\n\n".join(f"Round {i + 1}:\n{f}" for i, f in enumerate(state.feedback_history)))
        reply = client.chat(_user_messages(user, cot_demo), key=f"{seed.id}|debug")
        try:
            candidate = extract_query(reply)
        except NoQueryFound:
            candidate = state.candidate_query
            v = Verification("Error", "the debugger's reply contained no query")
        else:
            v = verify_candidate(candidate, seed, db)
        state.tried.append(candidate)
        state.candidate_query = candidate
        state.last_verdict = v.kind
        if v.verified:
            state.status = Status.VERIFIED
            return state
        if state.escalated:
            state.status = Status.ABANDONED
            return state
        state.attempts += 1
        state.feedback_history.append(generate_feedback(clients.feedback, candidate, seed, v,
                                                        key=f"{seed.id}|feedback"))


# -- question extension -----------------------------------------------------------------------

_BULLET = re.compile(r"^\s*(?:[-*•]|\d+[.)]|Q\d*[:.])\s*")


def _question_lines(reply: str) -> list[str]:
    out = []
    for line in (reply or "").splitlines():
        q = _BULLET.sub("", line).strip().strip('"').strip()
        if q:
            out.append(q)
    return out


def _dedup_key(q: str) -> str:
    return " ".join(q.split()).casefold()


def extend_questions(clients: Sequence[ChatClient], nosql: str, db_schema: str, reference_questions: Sequence[str],
                     target_schema: Sequence[str], n: int = QUESTIONS_PER_QUERY, key: str = "",
                     provenance: dict[str, str] | None = None) -> list[str]:
    """Pool new questions from every client, dropping repeats and the reference questions themselves.

    A failing client is skipped; if all of them fail the last error is raised.
    """
    if n <= 0 or not clients:
        return []
    user = prompts.EXTEND_TEMPLATE.format(
        n=n, query=nosql, target_fields=",".join(target_schema), schema=db_schema,
        references="\n".join(f"   - {q}" for q in reference_questions) or "(none)")
    msgs = prompts.messages(user)

    def ask(c):
        try:
            return c.chat(msgs, key=f"{key}|extend"), None
        except ProviderError as exc:
            log.warning("question extension via %s failed: %s", getattr(c, "name", c), exc)
            return None, exc

    with ThreadPoolExecutor(len(clients)) as pool:
        replies = list(pool.map(ask, clients))
    if all(r is None for r, _ in replies):
        raise replies[-1][1]
    seen = {_dedup_key(q) for q in reference_questions}
    out: list[str] = []
    for c, (reply, _) in zip(clients, replies):
        for q in _question_lines(reply or ""):
            k = _dedup_key(q)
            if k in seen:
                continue
            seen.add(k)
            out.append(q)
            if provenance is not None:
                provenance[q] = getattr(c, "name", type(c).__name__)
            if len(out) == n:
                return out
    return out


# -- final filtering -------------------------------------------------------------------------


@dataclass
class DatasetBundle:
    records: list[dict[str, Any]] = field(default_factory=list)
    rejections: list[dict[str, Any]] = field(default_factory=list)

    def write(self, out_dir: str | os.PathLike) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, rows in (("dataset.jsonl", self.records), ("rejections.jsonl", self.rejections)):
            with (out / name).open("w", encoding="utf-8") as fh:
                for r in rows:
                    fh.write(json.dumps(r, ensure_ascii=False, sort_keys=True) + "\n")


def finalize_dataset(records: Iterable[Mapping[str, Any]], banned: Iterable[str] = DEFAULT_BANNED_OPS) -> DatasetBundle:
    """Canonicalise and filter ``{nlq, nosql, db_id}`` records."""
    banned = frozenset(banned)
    bundle = DatasetBundle()
    for i, rec in enumerate(records):
        rid = rec.get("id", i)
        try:
            ast = parse_query(rec["nosql"])
        except Text2NoSQLError as exc:
            bundle.rejections.append({"id": rid, "nosql": rec["nosql"], "reason": f"unparseable: {exc}"})
            continue
        special = detect_special_ops(ast, banned)
        if special:
            bundle.rejections.append({"id": rid, "nosql": rec["nosql"],
                                      "reason": f"special operations: {', '.join(sorted(special))}"})
            continue
        try:
            norm = normalize_renames(ast)
        except NormalizationConflict as exc:
            bundle.rejections.append({"id": rid, "nosql": rec["nosql"], "reason": f"rename conflict: {exc}"})
            continue
        text = serialize_canonical(norm)
        assert serialize_canonical(normalize_renames(parse_query(text))) == text, "normaliser is not idempotent"
        bundle.records.append({"id": rid, "nlq": rec["nlq"], "nosql": text, "db_id": rec["db_id"]})
    return bundle


# -- whole build ------------------------------------------------------------------------------


@dataclass
class BuildClients:
    generator: ChatClient
    debug: DebugClients
    extenders: Sequence[ChatClient] = ()


@dataclass
class SeedOutcome:
    seed_id: str
    status: str
    query: str | None
    state: dict[str, Any] | None
    questions: list[str]
    provenance: dict[str, str]
    error: str | None = None

    def to_json(self) -> dict[str, Any]:
        return {"seed_id": self.seed_id, "status": self.status, "query": self.query, "state": self.state,
                "questions": self.questions, "provenance": self.provenance, "error": self.error}


def build_seed(seed: SeedExample, db: DocumentDatabase, clients: BuildClients,
               cot_demo: Sequence[Mapping[str, str]] | None = None, n_questions: int = QUESTIONS_PER_QUERY,
               state: DebugState | None = None) -> SeedOutcome:
    schema = prompts.describe_schema(db)
    try:
        if state is None:
            try:
                state = DebugState(generate_candidate(clients.generator, seed, schema, cot_demo))
            except NoQueryFound:
                state = DebugState("")
        state = debug_loop(clients.debug, state, seed, db, cot_demo, schema)
    except ProviderError as exc:
        return SeedOutcome(seed.id, Status.PENDING.value, None, state.to_json() if state else None, [], {},
                           f"ProviderError: {exc}")
    questions: list[str] = []
    provenance: dict[str, str] = {}
    if state.status is Status.VERIFIED and clients.extenders:
        try:
            questions = extend_questions(clients.extenders, state.candidate_query, schema, [seed.nlq],
                                         seed.target_schema, n_questions, key=seed.id, provenance=provenance)
        except ProviderError as exc:
            log.warning("seed %s: question extension failed: %s", seed.id, exc)
    query = state.candidate_query if state.status is Status.VERIFIED else None
    return SeedOutcome(seed.id, state.status.value, query, state.to_json(), questions, provenance)


def build_dataset(seeds: Sequence[SeedExample], dbs: Mapping[str, DocumentDatabase], clients: BuildClients,
                  out_dir: str | os.PathLike, cot_demo: Sequence[Mapping[str, str]] | None = None,
                  n_questions: int = QUESTIONS_PER_QUERY, workers: int = 1) -> DatasetBundle:
    """Run every seed and write dataset, rejections, provenance and per-seed progress.

    Seeds whose progress line is already Verified or Abandoned are not rerun;
    seeds stopped by a provider error resume from their saved debug state.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    progress_path = out / "progress.jsonl"
    done: dict[str, dict[str, Any]] = {}
    if progress_path.exists():
        for line in progress_path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                rec = json.loads(line)
                done[rec["seed_id"]] = rec

    def one(seed: SeedExample) -> SeedOutcome:
        prev = done.get(seed.id)
        if prev and prev["status"] in (Status.VERIFIED.value, Status.ABANDONED.value):
            return SeedOutcome(**prev)
        if seed.db_id not in dbs:
            return SeedOutcome(seed.id, Status.ABANDONED.value, None, None, [], {},
                               f"MissingDatabase: no database named {seed.db_id!r}")
        state = DebugState.from_json(prev["state"]) if prev and prev.get("state") else None
        return build_seed(seed, dbs[seed.db_id], clients, cot_demo, n_questions, state)

    outcomes = []
    with ThreadPoolExecutor(max(1, workers)) as pool:
        # later lines win on reload, so appending is enough to record progress
        for o in pool.map(one, seeds):
            outcomes.append(o)
            with progress_path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(o.to_json(), ensure_ascii=False, sort_keys=True) + "\n")

    raw = []
    for seed, o in zip(seeds, outcomes):
        if o.query is None:
            continue
        raw.append({"id": f"{seed.id}:0", "nlq": seed.nlq, "nosql": o.query, "db_id": seed.db_id})
        raw.extend({"id": f"{seed.id}:{i}", "nlq": q, "nosql": o.query, "db_id": seed.db_id}
                   for i, q in enumerate(o.questions, 1))
    bundle = finalize_dataset(raw)
    bundle.rejections.extend({"id": o.seed_id, "reason": o.error or o.status}
                             for o in outcomes if o.query is None)
    bundle.write(out)
    with (out / "provenance.jsonl").open("w", encoding="utf-8") as fh:
        for o in outcomes:
            for q, src in o.provenance.items():
                fh.write(json.dumps({"seed_id": o.seed_id, "nlq": q, "client": src}, ensure_ascii=False) + "\n")
    return bundle
