"""Interpreter for the find/aggregate dialect.

Semantics follow MongoDB for the supported subset, with these fixed choices:

* Query-side paths (``$match``, find filters, lookup foreign fields) traverse
  arrays of sub-documents; a comparison matches when any reached value, or
  any element of a reached array, satisfies it.
* Ordering comparisons (``$gt`` etc.) only hold between values of the same
  type class.
* ``$sort``/``$min``/``$max`` use the total order in :func:`values.compare`.
  Sorting is stable, so ties keep input order.
* ``$group`` emits groups in order of first appearance.
* ``$count`` always emits exactly one document, even for empty input.
* Expression-level missing values sort below ``null`` and equal only each other.
"""

from __future__ import annotations

import re
from functools import cmp_to_key
from typing import Any, Callable, Iterable

from ..errors import InvalidQuery, TypeMismatch, UnknownCollection, UnsupportedOperator
from ..query.ast import QueryAst, Stage
from ..values import MISSING, canon, compare, is_number, type_rank, values_equal
from .database import DocumentDatabase, ResultSet

Doc = dict[str, Any]
Vars = dict[str, Any]


# -- paths -------------------------------------------------------------------


def resolve_path(value: Any, parts: list[str]) -> Any:
    """Aggregation-style lookup: arrays map over their elements."""
    for i, part in enumerate(parts):
        if isinstance(value, dict):
            if part not in value:
                return MISSING
            value = value[part]
        elif isinstance(value, list):
            out = []
            for elem in value:
                if isinstance(elem, (dict, list)):
                    r = resolve_path(elem, parts[i:])
                    if r is not MISSING:
                        out.append(r)
            return out
        else:
            return MISSING
    return value


def query_values(value: Any, parts: list[str]) -> list[Any]:
    """Query-style lookup: every value reached, descending through arrays of documents."""
    if not parts:
        return [value]
    if isinstance(value, dict):
        if parts[0] not in value:
            return []
        return query_values(value[parts[0]], parts[1:])
    if isinstance(value, list):
        out: list[Any] = []
        for elem in value:
            if isinstance(elem, dict):
                out.extend(query_values(elem, parts))
        return out
    return []


def _expand(reached: list[Any]) -> list[Any]:
    out = []
    for v in reached:
        out.append(v)
        if isinstance(v, list):
            out.extend(v)
    return out


def _strict_get(doc: Any, parts: list[str]) -> Any:
    for part in parts:
        if not isinstance(doc, dict) or part not in doc:
            return MISSING
        doc = doc[part]
    return doc


def _set_path(doc: Doc, parts: list[str], value: Any) -> Doc:
    """Copy-on-write assignment; ``value is MISSING`` removes the field."""
    out = dict(doc)
    head = parts[0]
    if len(parts) == 1:
        if value is MISSING:
            out.pop(head, None)
        else:
            out[head] = value
        return out
    child = out.get(head)
    out[head] = _set_path(child if isinstance(child, dict) else {}, parts[1:], value)
    return out


def _split(path: str) -> list[str]:
    if not path:
        raise InvalidQuery("empty field path")
    return path.split(".")


# -- expressions ----------------------------------------------------------------


def _truthy(v: Any) -> bool:
    if v is MISSING or v is None or v is False:
        return False
    if is_number(v):
        return v != 0
    return True


def _expr_cmp(a: Any, b: Any) -> int:
    if a is MISSING or b is MISSING:
        return (a is not MISSING) - (b is not MISSING)
    return compare(a, b)


def _expr_eq(a: Any, b: Any) -> bool:
    if a is MISSING or b is MISSING:
        return a is b
    return values_equal(a, b)


def _args(op: str, arg: Any, n: int | None = None) -> list[Any]:
    args = arg if isinstance(arg, list) else [arg]
    if n is not None and len(args) != n:
        raise InvalidQuery(f"{op} takes {n} arguments, got {len(args)}")
    return args


def _numeric_args(op: str, values: list[Any]) -> list[Any] | None:
    if any(v is None or v is MISSING for v in values):
        return None
    for v in values:
        if not is_number(v):
            raise TypeMismatch(f"{op} only supports numeric operands, got {type(v).__name__}")
    return values


def evaluate(expr: Any, doc: Doc, variables: Vars | None = None) -> Any:
    """Evaluate an aggregation expression against ``doc``."""
    variables = variables or {}
    if isinstance(expr, str):
        if expr.startswith("$$"):
            name, _, rest = expr[2:].partition(".")
            if name in ("ROOT", "CURRENT"):
                base = doc
            elif name in variables:
                base = variables[name]
            else:
                raise InvalidQuery(f"undefined variable $${name}")
            return resolve_path(base, rest.split(".")) if rest else base
        if expr.startswith("$"):
            return resolve_path(doc, _split(expr[1:]))
        return expr
    if isinstance(expr, list):
        return [None if (v := evaluate(e, doc, variables)) is MISSING else v for e in expr]
    if isinstance(expr, dict):
        if len(expr) == 1:
            (op, arg), = expr.items()
            if op.startswith("$"):
                return _operator(op, arg, doc, variables)
        if any(k.startswith("$") for k in expr):
            raise InvalidQuery(f"expression object mixes operators and fields: {list(expr)}")
        out = {}
        for k, v in expr.items():
            r = evaluate(v, doc, variables)
            if r is not MISSING:
                out[k] = r
        return out
    return expr


_COMPARATORS: dict[str, Callable[[int], bool]] = {
    "$gt": lambda c: c > 0,
    "$gte": lambda c: c >= 0,
    "$lt": lambda c: c < 0,
    "$lte": lambda c: c <= 0,
}


def _operator(op: str, arg: Any, doc: Doc, variables: Vars) -> Any:
    ev = lambda e: evaluate(e, doc, variables)  # noqa: E731
    if op == "$literal":
        return arg
    if op in ("$eq", "$ne"):
        a, b = (ev(x) for x in _args(op, arg, 2))
        return _expr_eq(a, b) == (op == "$eq")
    if op in _COMPARATORS:
        a, b = (ev(x) for x in _args(op, arg, 2))
        return _COMPARATORS[op](_expr_cmp(a, b))
    if op == "$cmp":
        a, b = (ev(x) for x in _args(op, arg, 2))
        return _expr_cmp(a, b)
    if op == "$and":
        return all(_truthy(ev(x)) for x in _args(op, arg))
    if op == "$or":
        return any(_truthy(ev(x)) for x in _args(op, arg))
    if op == "$not":
        return not _truthy(ev(_args(op, arg, 1)[0]))
    if op in ("$add", "$multiply"):
        vals = _numeric_args(op, [ev(x) for x in _args(op, arg)])
        if vals is None:
            return None
        acc: int | float = 0 if op == "$add" else 1
        for v in vals:
            acc = acc + v if op == "$add" else acc * v
        return acc
    if op in ("$subtract", "$divide"):
        vals = _numeric_args(op, [ev(x) for x in _args(op, arg, 2)])
        if vals is None:
            return None
        a, b = vals
        if op == "$subtract":
            return a - b
        if b == 0:
            raise TypeMismatch("$divide by zero")
        return a / b
    if op == "$size":
        v = ev(_args(op, arg, 1)[0])
        if not isinstance(v, list):
            raise TypeMismatch(f"$size requires an array, got {type(v).__name__ if v is not MISSING else 'missing'}")
        return len(v)
    if op == "$concat":
        vals = [ev(x) for x in _args(op, arg)]
        if any(v is None or v is MISSING for v in vals):
            return None
        if not all(isinstance(v, str) for v in vals):
            raise TypeMismatch("$concat only supports strings")
        return "".join(vals)
    if op in ("$toLower", "$toUpper"):
        v = ev(_args(op, arg, 1)[0])
        if v is None or v is MISSING:
            return ""
        if not isinstance(v, str):
            raise TypeMismatch(f"{op} only supports strings")
        return v.lower() if op == "$toLower" else v.upper()
    if op == "$ifNull":
        a, b = _args(op, arg, 2)
        v = ev(a)
        return ev(b) if v is None or v is MISSING else v
    if op == "$cond":
        if isinstance(arg, dict):
            try:
                cond, then, other = arg["if"], arg["then"], arg["else"]
            except KeyError as exc:
                raise InvalidQuery(f"$cond missing {exc}") from None
        else:
            cond, then, other = _args(op, arg, 3)
        return ev(then) if _truthy(ev(cond)) else ev(other)
    if op == "$in":
        needle, haystack = (ev(x) for x in _args(op, arg, 2))
        if not isinstance(haystack, list):
            raise TypeMismatch("$in requires an array as second argument")
        return any(_expr_eq(needle, h) for h in haystack)
    raise UnsupportedOperator(op, "expression operator")


# -- query filters -------------------------------------------------------------------


def _same_class(a: Any, b: Any) -> bool:
    return type_rank(a) == type_rank(b)


def _regex(spec: Any, options: Any) -> re.Pattern:
    if not isinstance(spec, str):
        raise InvalidQuery("$regex requires a string pattern")
    flags = 0
    if options not in (MISSING, None):
        if not isinstance(options, str) or set(options) - {"i"}:
            raise UnsupportedOperator("$options", f"only the 'i' flag is supported, got {options!r}")
        if "i" in options:
            flags |= re.IGNORECASE
    try:
        return re.compile(spec, flags)
    except re.error as exc:
        raise InvalidQuery(f"bad regular expression {spec!r}: {exc}") from None


def _eq_match(reached: list[Any], target: Any) -> bool:
    if target is None and not reached:
        return True
    return any(values_equal(c, target) for c in _expand(reached))


def _field_condition(reached: list[Any], cond: dict[str, Any], variables: Vars) -> bool:
    for op, operand in cond.items():
        if op == "$options":
            if "$regex" not in cond:
                raise InvalidQuery("$options without $regex")
            continue
        if op == "$eq":
            ok = _eq_match(reached, operand)
        elif op == "$ne":
            ok = not _eq_match(reached, operand)
        elif op in _COMPARATORS:
            test = _COMPARATORS[op]
            ok = any(_same_class(c, operand) and test(compare(c, operand)) for c in _expand(reached))
        elif op in ("$in", "$nin"):
            if not isinstance(operand, list):
                raise InvalidQuery(f"{op} requires an array")
            hit = any(_eq_match(reached, t) for t in operand)
            ok = hit if op == "$in" else not hit
        elif op == "$exists":
            ok = bool(reached) == _truthy(operand)
        elif op == "$size":
            if not is_number(operand):
                raise InvalidQuery("$size requires a number")
            ok = any(isinstance(c, list) and len(c) == operand for c in reached)
        elif op == "$regex":
            pattern = _regex(operand, cond.get("$options", MISSING))
            ok = any(isinstance(c, str) and pattern.search(c) for c in _expand(reached))
        elif op == "$not":
            if not isinstance(operand, dict) or not operand:
                raise InvalidQuery("$not requires an operator object")
            ok = not _field_condition(reached, operand, variables)
        else:
            raise UnsupportedOperator(op, "query operator")
        if not ok:
            return False
    return True


def _is_operator_dict(v: Any) -> bool:
    return isinstance(v, dict) and bool(v) and any(k.startswith("$") for k in v)


def matches(doc: Doc, flt: Any, variables: Vars | None = None) -> bool:
    if not isinstance(flt, dict):
        raise InvalidQuery("filter must be an object")
    variables = variables or {}
    for key, cond in flt.items():
        if key in ("$and", "$or", "$nor"):
            if not isinstance(cond, list) or not cond:
                raise InvalidQuery(f"{key} requires a nonempty array")
            results = (matches(doc, c, variables) for c in cond)
            ok = all(results) if key == "$and" else any(results)
            if key == "$nor":
                ok = not ok
        elif key == "$expr":
            ok = _truthy(evaluate(cond, doc, variables))
        elif key.startswith("$"):
            raise UnsupportedOperator(key, "top-level query operator")
        else:
            reached = query_values(doc, _split(key))
            if _is_operator_dict(cond):
                if not all(k.startswith("$") for k in cond):
                    raise InvalidQuery(f"condition on {key!r} mixes operators and fields")
                ok = _field_condition(reached, cond, variables)
            else:
                ok = _eq_match(reached, cond)
        if not ok:
            return False
    return True


# -- projection -----------------------------------------------------------------------


class _Include:
    pass


INCLUDE = _Include()


class _Computed:
    __slots__ = ("expr",)

    def __init__(self, expr: Any):
        self.expr = expr


def _flatten_spec(spec: dict[str, Any], prefix: str = "") -> list[tuple[str, Any]]:
    out = []
    for k, v in spec.items():
        path = prefix + k
        if isinstance(v, dict) and v and not any(x.startswith("$") for x in v):
            out.extend(_flatten_spec(v, path + "."))
        else:
            out.append((path, v))
    return out


def _flag(v: Any) -> bool | None:
    """True for inclusion, False for exclusion, None for a computed value."""
    if isinstance(v, bool):
        return v
    if is_number(v):
        return v != 0
    return None


def _build(src: Any, tree: dict[str, Any], root: Doc, variables: Vars) -> Doc:
    out: Doc = {}
    for key, node in tree.items():
        if isinstance(node, _Computed):
            val = evaluate(node.expr, root, variables)
            if val is not MISSING:
                out[key] = val
        elif node is INCLUDE:
            if isinstance(src, dict) and key in src:
                out[key] = src[key]
        else:
            val = src.get(key, MISSING) if isinstance(src, dict) else MISSING
            if isinstance(val, list):
                out[key] = [_build(e, node, root, variables) for e in val if isinstance(e, dict)]
            elif isinstance(val, dict):
                out[key] = _build(val, node, root, variables)
            elif _has_computed(node):
                out[key] = _build({}, node, root, variables)
    return out


def _has_computed(tree: dict[str, Any]) -> bool:
    return any(isinstance(n, _Computed) or (isinstance(n, dict) and _has_computed(n)) for n in tree.values())


def _exclude(value: Any, parts: list[str]) -> Any:
    if isinstance(value, list):
        return [_exclude(e, parts) if isinstance(e, dict) else e for e in value]
    if not isinstance(value, dict) or parts[0] not in value:
        return value
    out = dict(value)
    if len(parts) == 1:
        del out[parts[0]]
    else:
        out[parts[0]] = _exclude(out[parts[0]], parts[1:])
    return out


class Projection:
    def __init__(self, spec: Any):
        if not isinstance(spec, dict) or not spec:
            raise InvalidQuery("projection must be a nonempty object")
        items = _flatten_spec(spec)
        self.id_mode: Any = INCLUDE
        self.exclusions: list[list[str]] = []
        self.tree: dict[str, Any] = {}
        has_inclusion = False
        id_explicit = False
        for path, v in items:
            flag = _flag(v)
            if path == "_id":
                if flag is False:
                    self.id_mode = None
                else:
                    id_explicit = True
                    if flag is None:
                        self.id_mode = _Computed(v)
                continue
            if flag is False:
                self.exclusions.append(_split(path))
                continue
            has_inclusion = True
            parts = _split(path)
            cursor = self.tree
            for part in parts[:-1]:
                nxt = cursor.setdefault(part, {})
                if not isinstance(nxt, dict):
                    raise InvalidQuery(f"projection path collision at {path!r}")
                cursor = nxt
            if parts[-1] in cursor:
                raise InvalidQuery(f"projection path collision at {path!r}")
            cursor[parts[-1]] = INCLUDE if flag else _Computed(v)
        if self.exclusions and has_inclusion:
            raise InvalidQuery("projection cannot mix inclusion and exclusion")
        self.exclusion_mode = bool(self.exclusions) or not (has_inclusion or id_explicit)
        if self.exclusion_mode and self.id_mode is None:
            self.exclusions.insert(0, ["_id"])
        if self.exclusion_mode and isinstance(self.id_mode, _Computed):
            raise InvalidQuery("computed _id requires an inclusion projection")

    def apply(self, doc: Doc, variables: Vars | None = None) -> Doc:
        variables = variables or {}
        if self.exclusion_mode:
            out: Any = doc
            for parts in self.exclusions:
                out = _exclude(out, parts)
            return out
        out = {}
        if self.id_mode is INCLUDE:
            if "_id" in doc:
                out["_id"] = doc["_id"]
        elif isinstance(self.id_mode, _Computed):
            val = evaluate(self.id_mode.expr, doc, variables)
            if val is not MISSING:
                out["_id"] = val
        out.update(_build(doc, self.tree, doc, variables))
        return out


# -- stages --------------------------------------------------------------------------------


def _unwind(docs: list[Doc], body: Any) -> list[Doc]:
    preserve = False
    index_field = None
    if isinstance(body, dict):
        extra = set(body) - {"path", "preserveNullAndEmptyArrays", "includeArrayIndex"}
        if extra:
            raise UnsupportedOperator("$unwind", f"options {sorted(extra)}")
        path = body.get("path")
        preserve = bool(body.get("preserveNullAndEmptyArrays", False))
        index_field = body.get("includeArrayIndex")
    else:
        path = body
    if not isinstance(path, str) or not path.startswith("$") or path.startswith("$$"):
        raise InvalidQuery("$unwind path must be a '$field' string")
    parts = _split(path[1:])
    idx_parts = _split(index_field) if index_field else None
    out = []
    for doc in docs:
        val = _strict_get(doc, parts)
        if isinstance(val, list) and val:
            for i, elem in enumerate(val):
                new = _set_path(doc, parts, elem)
                if idx_parts:
                    new = _set_path(new, idx_parts, i)
                out.append(new)
        elif isinstance(val, list) or val is None or val is MISSING:
            if preserve:
                new = _set_path(doc, parts, MISSING) if isinstance(val, list) else doc
                if idx_parts:
                    new = _set_path(new, idx_parts, None)
                out.append(new)
        else:
            out.append(_set_path(doc, idx_parts, None) if idx_parts else doc)
    return out


_ACCUMULATORS = ("$sum", "$avg", "$min", "$max", "$push", "$addToSet", "$first", "$last")


class _Acc:
    def __init__(self, op: str):
        self.op = op
        self.total: int | float = 0
        self.count = 0
        self.best: Any = MISSING
        self.items: list[Any] = []
        self.seen: set = set()
        self.first: Any = MISSING
        self.last: Any = MISSING
        self.started = False

    def add(self, v: Any) -> None:
        op = self.op
        if op in ("$sum", "$avg"):
            if is_number(v):
                self.total += v
                self.count += 1
        elif op in ("$min", "$max"):
            if v is not MISSING and v is not None:
                if self.best is MISSING:
                    self.best = v
                else:
                    c = compare(v, self.best)
                    if (c < 0 and op == "$min") or (c > 0 and op == "$max"):
                        self.best = v
        elif op == "$push":
            if v is not MISSING:
                self.items.append(v)
        elif op == "$addToSet":
            if v is not MISSING:
                key = canon(v)
                if key not in self.seen:
                    self.seen.add(key)
                    self.items.append(v)
        elif op == "$first":
            if not self.started:
                self.first = v
                self.started = True
        elif op == "$last":
            self.last = v

    def result(self) -> Any:
        op = self.op
        if op == "$sum":
            return self.total
        if op == "$avg":
            return self.total / self.count if self.count else None
        if op in ("$min", "$max"):
            return None if self.best is MISSING else self.best
        if op in ("$push", "$addToSet"):
            return self.items
        v = self.first if op == "$first" else self.last
        return None if v is MISSING else v


def _group(docs: list[Doc], body: Any, variables: Vars) -> list[Doc]:
    if not isinstance(body, dict) or "_id" not in body:
        raise InvalidQuery("$group requires an _id")
    specs: list[tuple[str, str, Any]] = []
    for name, spec in body.items():
        if name == "_id":
            continue
        if not isinstance(spec, dict) or len(spec) != 1:
            raise InvalidQuery(f"accumulator {name!r} must be a single-operator object")
        (op, arg), = spec.items()
        if op not in _ACCUMULATORS:
            raise UnsupportedOperator(op, "group accumulator")
        specs.append((name, op, arg))
    groups: dict[Any, tuple[Any, list[_Acc]]] = {}
    for doc in docs:
        key = evaluate(body["_id"], doc, variables)
        if key is MISSING:
            key = None
        ck = canon(key)
        if ck not in groups:
            groups[ck] = (key, [_Acc(op) for _, op, _ in specs])
        accs = groups[ck][1]
        for acc, (_, _, arg) in zip(accs, specs):
            acc.add(evaluate(arg, doc, variables))
    out = []
    for key, accs in groups.values():
        row = {"_id": key}
        for acc, (name, _, _) in zip(accs, specs):
            row[name] = acc.result()
        out.append(row)
    return out


def _sort_spec(body: Any) -> list[tuple[list[str], int]]:
    if not isinstance(body, dict) or not body:
        raise InvalidQuery("sort specification must be a nonempty object")
    spec = []
    for path, direction in body.items():
        if isinstance(direction, bool) or direction not in (1, -1):
            raise InvalidQuery(f"sort direction for {path!r} must be 1 or -1")
        spec.append((_split(path), int(direction)))
    return spec


def sort_docs(docs: list[Doc], body: Any) -> list[Doc]:
    spec = _sort_spec(body)

    def cmp(a: Doc, b: Doc) -> int:
        for parts, direction in spec:
            c = compare(resolve_path(a, parts), resolve_path(b, parts))
            if c:
                return c * direction
        return 0

    return sorted(docs, key=cmp_to_key(cmp))


def _positive_int(op: str, v: Any, allow_zero: bool) -> int:
    if isinstance(v, bool) or not is_number(v) or int(v) != v or v < (0 if allow_zero else 1):
        raise InvalidQuery(f"{op} requires a {'non-negative' if allow_zero else 'positive'} integer")
    return int(v)


def _count(docs: list[Doc], body: Any) -> list[Doc]:
    if not isinstance(body, str) or not body or body.startswith("$") or "." in body:
        raise InvalidQuery("$count requires a plain field name")
    return [{body: len(docs)}]


def _lookup(docs: list[Doc], body: Any, db: DocumentDatabase, variables: Vars) -> list[Doc]:
    if not isinstance(body, dict):
        raise InvalidQuery("$lookup requires an object")
    unknown = set(body) - {"from", "localField", "foreignField", "as", "let", "pipeline"}
    if unknown:
        raise UnsupportedOperator("$lookup", f"options {sorted(unknown)}")
    source, target = body.get("from"), body.get("as")
    if not isinstance(source, str) or not isinstance(target, str) or not target:
        raise InvalidQuery("$lookup requires string 'from' and 'as'")
    local, foreign = body.get("localField"), body.get("foreignField")
    has_eq = local is not None or foreign is not None
    if has_eq and not (isinstance(local, str) and isinstance(foreign, str)):
        raise InvalidQuery("$lookup localField and foreignField go together")
    sub_pipeline = body.get("pipeline")
    if not has_eq and sub_pipeline is None:
        raise InvalidQuery("$lookup needs localField/foreignField or a pipeline")
    if sub_pipeline is not None and not isinstance(sub_pipeline, list):
        raise InvalidQuery("$lookup pipeline must be an array")
    let = body.get("let", {})
    if not isinstance(let, dict):
        raise InvalidQuery("$lookup let must be an object")
    stages = [_as_stage(s) for s in sub_pipeline] if sub_pipeline else []
    foreign_docs = db.collections.get(source, [])
    out = []
    for doc in docs:
        candidates = foreign_docs
        if has_eq:
            local_val = resolve_path(doc, _split(local))
            keys = local_val if isinstance(local_val, list) else [local_val]
            keys = [None if k is MISSING else k for k in keys] or [None]
            fparts = _split(foreign)
            candidates = [f for f in foreign_docs if any(_eq_match(query_values(f, fparts), k) for k in keys)]
        if stages:
            scope = dict(variables)
            for name, expr in let.items():
                scope[name] = evaluate(expr, doc, variables)
            candidates = run_pipeline(db, candidates, stages, scope)
        out.append(_set_path(doc, _split(target), list(candidates)))
    return out


def _as_stage(raw: Any) -> Stage:
    if not isinstance(raw, dict) or len(raw) != 1:
        raise InvalidQuery("each stage must have exactly one operator")
    (op, body), = raw.items()
    return Stage(op, body)


def run_pipeline(db: DocumentDatabase, docs: list[Doc], stages: Iterable[Stage], variables: Vars | None = None) -> list[Doc]:
    variables = variables or {}
    for stage in stages:
        op, body = stage.operator, stage.body
        if op == "$match":
            docs = [d for d in docs if matches(d, body, variables)]
        elif op == "$project":
            proj = Projection(body)
            docs = [proj.apply(d, variables) for d in docs]
        elif op == "$unwind":
            docs = _unwind(docs, body)
        elif op == "$group":
            docs = _group(docs, body, variables)
        elif op == "$sort":
            docs = sort_docs(docs, body)
        elif op == "$limit":
            docs = docs[:_positive_int(op, body, allow_zero=False)]
        elif op == "$skip":
            docs = docs[_positive_int(op, body, allow_zero=True):]
        elif op == "$count":
            docs = _count(docs, body)
        elif op == "$lookup":
            docs = _lookup(docs, body, db, variables)
        else:
            raise UnsupportedOperator(op, "pipeline stage")
    return docs


def execute_query(db: DocumentDatabase, ast: QueryAst, strict: bool = True) -> ResultSet:
    """Run ``ast`` against ``db``.

    With ``strict=False`` a missing target collection behaves as an empty one,
    which is what a live server does; ``strict=True`` raises ``UnknownCollection``.
    """
    if ast.collection not in db.collections:
        if strict:
            raise UnknownCollection(ast.collection)
        docs: list[Doc] = []
    else:
        docs = db.collections[ast.collection]
    if ast.find_clauses is not None:
        fc = ast.find_clauses
        docs = [d for d in docs if matches(d, fc.filter)]
        if fc.sort is not None:
            docs = sort_docs(docs, fc.sort)
        if fc.limit:
            docs = docs[:abs(fc.limit)]
        if fc.projection is not None:
            proj = Projection(fc.projection)
            docs = [proj.apply(d) for d in docs]
        return ResultSet(list(docs), ordered=fc.sort is not None)
    docs = run_pipeline(db, docs, ast.pipeline)
    ordered = any(s.operator == "$sort" for s in ast.pipeline)
    return ResultSet(list(docs), ordered=ordered)
