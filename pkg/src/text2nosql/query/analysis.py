"""Structural analysis over parsed queries: stage keywords, field usage,
banned-operator detection and rename standardisation."""

from __future__ import annotations

from dataclasses import replace
from typing import Any, Iterable

from ..errors import NormalizationConflict
from .ast import FieldProfile, QueryAst, Stage, StageKind

DEFAULT_BANNED_OPS = frozenset({"$isArray", "$concatArrays", "$arrayElemAt"})

FIND_CLAUSE_ORDER = ("filter", "projection", "sort", "limit")

_LOGICAL = ("$and", "$or", "$nor")


def extract_stage_keywords(ast: QueryAst) -> list[str]:
    if ast.find_clauses is None:
        return [s.operator for s in ast.pipeline]
    fc = ast.find_clauses
    present = {
        "filter": fc.filter is not None,
        "projection": fc.projection is not None,
        "sort": fc.sort is not None,
        "limit": fc.limit is not None,
    }
    return [name for name in FIND_CLAUSE_ORDER if present[name]]


# -- field profile -----------------------------------------------------------


def _field_ref(v: Any) -> str | None:
    if isinstance(v, str) and v.startswith("$") and not v.startswith("$$") and len(v) > 1:
        return v[1:]
    return None


def _expression_refs(expr: Any, out: set[str]) -> None:
    """Collect ``"$path"`` references anywhere inside an expression."""
    ref = _field_ref(expr)
    if ref is not None:
        out.add(ref)
    elif isinstance(expr, dict):
        for k, v in expr.items():
            if k == "$literal":
                continue
            _expression_refs(v, out)
    elif isinstance(expr, list):
        for v in expr:
            _expression_refs(v, out)


def _filter_fields(flt: Any, out: set[str]) -> None:
    if not isinstance(flt, dict):
        return
    for key, val in flt.items():
        if key in _LOGICAL and isinstance(val, list):
            for sub in val:
                _filter_fields(sub, out)
        elif key == "$expr":
            _expression_refs(val, out)
        elif key.startswith("$"):
            continue
        else:
            out.add(key)


def _is_operator_object(v: Any) -> bool:
    return isinstance(v, dict) and len(v) > 0 and all(k.startswith("$") for k in v)


def _projection_fields(proj: dict[str, Any], prof: FieldProfile) -> None:
    for key, val in proj.items():
        if isinstance(val, bool) or (isinstance(val, (int, float)) and not isinstance(val, bool)):
            prof.database_fields.add(key)
        elif isinstance(val, dict) and not _is_operator_object(val):
            nested = {f"{key}.{k}": v for k, v in val.items()}
            _projection_fields(nested, prof)
        else:
            prof.defined_fields.add(key)
            _expression_refs(val, prof.database_fields)


def _pipeline_fields(stages: Iterable[Stage], prof: FieldProfile) -> None:
    for stage in stages:
        body = stage.body
        kind = stage.kind
        if kind is StageKind.MATCH:
            _filter_fields(body, prof.database_fields)
        elif kind is StageKind.PROJECT and isinstance(body, dict):
            _projection_fields(body, prof)
        elif kind is StageKind.SORT and isinstance(body, dict):
            prof.database_fields.update(body)
        elif kind is StageKind.UNWIND:
            path = body.get("path") if isinstance(body, dict) else body
            _expression_refs(path, prof.database_fields)
        elif kind is StageKind.GROUP and isinstance(body, dict):
            for key, val in body.items():
                if key == "_id":
                    if isinstance(val, dict) and not _is_operator_object(val):
                        prof.defined_fields.update(val)
                    _expression_refs(val, prof.database_fields)
                else:
                    prof.defined_fields.add(key)
                    _expression_refs(val, prof.database_fields)
        elif kind is StageKind.LOOKUP and isinstance(body, dict):
            if isinstance(body.get("from"), str):
                prof.collections.add(body["from"])
            for k in ("localField", "foreignField"):
                if isinstance(body.get(k), str):
                    prof.database_fields.add(body[k])
            if isinstance(body.get("as"), str):
                prof.defined_fields.add(body["as"])
            if isinstance(body.get("let"), dict):
                _expression_refs(list(body["let"].values()), prof.database_fields)
            if isinstance(body.get("pipeline"), list):
                sub = [Stage(*next(iter(s.items()))) for s in body["pipeline"]
                       if isinstance(s, dict) and len(s) == 1]
                _pipeline_fields(sub, prof)
        elif kind is StageKind.COUNT and isinstance(body, str):
            prof.defined_fields.add(body)
        elif kind in (StageKind.LIMIT, StageKind.SKIP):
            continue
        else:
            _expression_refs(body, prof.database_fields)


def extract_field_profile(ast: QueryAst) -> FieldProfile:
    prof = FieldProfile(collections={ast.collection})
    if ast.find_clauses is not None:
        fc = ast.find_clauses
        _filter_fields(fc.filter, prof.database_fields)
        if fc.projection:
            _projection_fields(fc.projection, prof)
        if fc.sort:
            prof.database_fields.update(fc.sort)
    else:
        _pipeline_fields(ast.pipeline, prof)
    return prof


# -- special operations --------------------------------------------------------


def _operator_keys(v: Any) -> Iterable[str]:
    if isinstance(v, dict):
        for k, x in v.items():
            if k.startswith("$"):
                yield k
            yield from _operator_keys(x)
    elif isinstance(v, list):
        for x in v:
            yield from _operator_keys(x)


def detect_special_ops(ast: QueryAst, banned: Iterable[str] = DEFAULT_BANNED_OPS) -> set[str]:
    banned = set(banned)
    return {k for k in _operator_keys(ast.to_json()) if k in banned}


# -- rename standardisation -----------------------------------------------------


def _rewrite_path(path: str, renames: dict[str, str]) -> str:
    head, dot, rest = path.partition(".")
    if head in renames:
        return renames[head] + dot + rest
    return path


def _rewrite_refs(expr: Any, renames: dict[str, str]) -> Any:
    if isinstance(expr, str):
        ref = _field_ref(expr)
        return "$" + _rewrite_path(ref, renames) if ref is not None else expr
    if isinstance(expr, dict):
        return {k: (v if k == "$literal" else _rewrite_refs(v, renames)) for k, v in expr.items()}
    if isinstance(expr, list):
        return [_rewrite_refs(v, renames) for v in expr]
    return expr


def _rewrite_filter(flt: Any, renames: dict[str, str]) -> Any:
    if not isinstance(flt, dict):
        return flt
    out = {}
    for key, val in flt.items():
        if key in _LOGICAL and isinstance(val, list):
            out[key] = [_rewrite_filter(v, renames) for v in val]
        elif key == "$expr":
            out[key] = _rewrite_refs(val, renames)
        elif key.startswith("$"):
            out[key] = val
        else:
            out[_rewrite_path(key, renames)] = val
    return out


def _rewrite_projection(proj: dict[str, Any], renames: dict[str, str]) -> dict[str, Any]:
    out = {}
    for key, val in proj.items():
        if isinstance(val, (bool, int, float)):
            out[_rewrite_path(key, renames)] = val
        else:
            out[key] = _rewrite_refs(val, renames)
    return out


def _rewrite_keys(d: dict[str, Any], renames: dict[str, str]) -> dict[str, Any]:
    return {_rewrite_path(k, renames): v for k, v in d.items()}


def _standard_accumulator_name(op: str, arg: Any) -> str | None:
    if op == "$sum" and not isinstance(arg, bool) and arg == 1:
        return "count"
    ref = _field_ref(arg)
    if ref is None:
        # first reference in document order keeps the choice deterministic
        found: list[str] = []
        _ordered_refs(arg, found)
        if not found:
            return None
        ref = found[0]
    obj = ref.rsplit(".", 1)[-1]
    return f"{op.lstrip('$')}_{obj}".lower()


def _ordered_refs(expr: Any, out: list[str]) -> None:
    ref = _field_ref(expr)
    if ref is not None:
        out.append(ref)
    elif isinstance(expr, dict):
        for k, v in expr.items():
            if k != "$literal":
                _ordered_refs(v, out)
    elif isinstance(expr, list):
        for v in expr:
            _ordered_refs(v, out)


def _rename_stage_inputs(stage: Stage, renames: dict[str, str]) -> Stage:
    """Rewrite the references a stage makes to fields of its input documents."""
    if not renames:
        return stage
    body = stage.body
    kind = stage.kind
    if kind is StageKind.MATCH:
        body = _rewrite_filter(body, renames)
    elif kind is StageKind.PROJECT and isinstance(body, dict):
        body = _rewrite_projection(body, renames)
    elif kind is StageKind.SORT and isinstance(body, dict):
        body = _rewrite_keys(body, renames)
    elif kind is StageKind.LOOKUP and isinstance(body, dict):
        body = dict(body)
        if isinstance(body.get("localField"), str):
            body["localField"] = _rewrite_path(body["localField"], renames)
        if isinstance(body.get("let"), dict):
            body["let"] = _rewrite_refs(body["let"], renames)
    elif kind in (StageKind.LIMIT, StageKind.SKIP, StageKind.COUNT):
        pass
    else:
        body = _rewrite_refs(body, renames)
    return Stage(stage.operator, body)


def normalize_renames(ast: QueryAst) -> QueryAst:
    """Standardise accumulator outputs to ``<op>_<field>`` and lookup targets
    to ``Docs1``, ``Docs2``... rewriting downstream references to match."""
    if ast.find_clauses is not None:
        return ast
    renames: dict[str, str] = {}
    lookup_no = 0
    stages: list[Stage] = []
    for stage in ast.pipeline:
        stage = _rename_stage_inputs(stage, renames)
        body = stage.body
        if stage.kind is StageKind.GROUP and isinstance(body, dict):
            new_body: dict[str, Any] = {}
            group_renames: dict[str, str] = {}
            for key, val in body.items():
                new_key = key
                if key != "_id" and isinstance(val, dict) and len(val) == 1:
                    (op, arg), = val.items()
                    std = _standard_accumulator_name(op, arg)
                    if std is not None:
                        new_key = std
                if new_key in new_body:
                    raise NormalizationConflict(
                        f"accumulators {key!r} and another output both standardise to {new_key!r}"
                    )
                if new_key != key:
                    group_renames[key] = new_key
                new_body[new_key] = val
            # $group replaces the document, so earlier renames stop applying
            renames = group_renames
            stage = Stage(stage.operator, new_body)
        elif stage.kind is StageKind.LOOKUP and isinstance(body, dict) and isinstance(body.get("as"), str):
            lookup_no += 1
            std = f"Docs{lookup_no}"
            if body["as"] != std:
                renames = {**renames, body["as"]: std}
                stage = Stage(stage.operator, {k: (std if k == "as" else v) for k, v in body.items()})
        stages.append(stage)
    return replace(ast, pipeline=tuple(stages))


__all__ = [
    "DEFAULT_BANNED_OPS",
    "detect_special_ops",
    "extract_field_profile",
    "extract_stage_keywords",
    "normalize_renames",
]
