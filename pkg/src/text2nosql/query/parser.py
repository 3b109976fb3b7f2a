"""Shell-syntax query parsing and canonical serialisation."""

from __future__ import annotations

import json
from typing import Any

from ..errors import MalformedFragment, ParseError, UnknownMethod
from ..loose_json import LooseDecoder
from .ast import FindClauses, Method, QueryAst, Stage

_IDENT_CHARS = set("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_")


class _Cursor(LooseDecoder):
    def ident(self, what: str) -> str:
        self.skip_ws()
        start = self.pos
        while self.pos < len(self.text) and self.text[self.pos] in _IDENT_CHARS:
            self.pos += 1
        if self.pos == start:
            raise ParseError(start, f"expected {what}")
        return self.text[start:self.pos]

    def punct(self, ch: str) -> None:
        self.skip_ws()
        if self.peek() != ch:
            raise ParseError(self.pos, f"expected {ch!r}, found {self.peek() or 'end of input'!r}")
        self.pos += 1

    def arguments(self) -> list[Any]:
        self.punct("(")
        args: list[Any] = []
        while True:
            self.skip_ws()
            if self.peek() == ")":
                self.pos += 1
                return args
            try:
                args.append(self.value())
            except MalformedFragment as exc:
                raise ParseError(exc.position, exc.message) from exc
            self.skip_ws()
            if self.peek() == ",":
                self.pos += 1
            elif self.peek() != ")":
                raise ParseError(self.pos, "expected ',' or ')' in argument list")


def _stage_from(raw: Any, pos: int) -> Stage:
    if not isinstance(raw, dict) or len(raw) != 1:
        raise ParseError(pos, "each pipeline stage must be an object with exactly one operator")
    (op, body), = raw.items()
    if not op.startswith("$"):
        raise ParseError(pos, f"stage key {op!r} is not an operator")
    return Stage(op, body)


def parse_query(text: str) -> QueryAst:
    """Parse ``db.<coll>.find(...)`` / ``db.<coll>.aggregate([...])`` text."""
    cur = _Cursor(text)
    head = cur.ident("'db'")
    if head != "db":
        raise ParseError(0, "query must start with 'db.'")
    cur.punct(".")
    collection = cur.ident("collection name")
    cur.punct(".")
    method_pos = cur.pos
    method = cur.ident("method name")
    args_pos = cur.pos
    if method not in ("find", "aggregate"):
        raise UnknownMethod(method_pos, method)
    args = cur.arguments()

    if method == "aggregate":
        if len(args) != 1 or not isinstance(args[0], list):
            raise ParseError(args_pos, "aggregate expects a single pipeline array")
        stages = tuple(_stage_from(s, args_pos) for s in args[0])
        ast = QueryAst(collection, Method.AGGREGATE, pipeline=stages)
    else:
        if len(args) > 2:
            raise ParseError(args_pos, "find accepts at most filter and projection")
        flt = args[0] if args else {}
        proj = args[1] if len(args) > 1 else None
        if not isinstance(flt, dict):
            raise ParseError(args_pos, "find filter must be an object")
        if proj is not None and not isinstance(proj, dict):
            raise ParseError(args_pos, "find projection must be an object")
        sort = limit = None
        while True:
            cur.skip_ws()
            if cur.peek() != ".":
                break
            cur.pos += 1
            name_pos = cur.pos
            name = cur.ident("cursor method")
            call_args = cur.arguments()
            if name == "sort" and sort is None:
                if len(call_args) != 1 or not isinstance(call_args[0], dict):
                    raise ParseError(name_pos, "sort expects one object")
                sort = call_args[0]
            elif name == "limit" and limit is None:
                if len(call_args) != 1 or type(call_args[0]) is not int:
                    raise ParseError(name_pos, "limit expects one integer")
                limit = call_args[0]
            else:
                raise ParseError(name_pos, f"unsupported or repeated cursor call {name!r}")
        ast = QueryAst(collection, Method.FIND, find_clauses=FindClauses(flt, proj, sort, limit))

    cur.skip_ws()
    if cur.peek() == ";":
        cur.pos += 1
    cur.skip_ws()
    if cur.pos != len(text):
        raise ParseError(cur.pos, "unexpected trailing text")
    return ast


def _dump(v: Any) -> str:
    return json.dumps(v, ensure_ascii=False, separators=(",", ":"))


def serialize_canonical(ast: QueryAst) -> str:
    """Deterministic single-line rendering with double-quoted keys."""
    if ast.find_clauses is not None:
        fc = ast.find_clauses
        args = _dump(fc.filter)
        if fc.projection is not None:
            args += "," + _dump(fc.projection)
        out = f"db.{ast.collection}.find({args})"
        if fc.sort is not None:
            out += f".sort({_dump(fc.sort)})"
        if fc.limit is not None:
            out += f".limit({fc.limit})"
        return out + ";"
    stages = ",".join(_dump(s.to_json()) for s in ast.pipeline)
    return f"db.{ast.collection}.aggregate([{stages}]);"
