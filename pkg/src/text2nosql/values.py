"""Document value model helpers.

Documents are plain Python data: ``None``, ``bool``, ``int``, ``float``,
``str``, ``list`` and insertion-ordered ``dict``. This module supplies the
pieces plain ``==`` gets wrong for that model: ``True == 1`` must be false,
``1 == 1.0`` must be true, and object key order is ignored or respected
depending on the caller.
"""

from __future__ import annotations

import math
from functools import cmp_to_key
from typing import Any, Hashable


class _Missing:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "MISSING"

    def __bool__(self) -> bool:
        return False


MISSING: Any = _Missing()
"""Sentinel for an absent field; distinct from an explicit ``None``."""


def is_number(v: Any) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


# Null < numbers < strings < objects < arrays < bool
_RANK_NULL, _RANK_NUM, _RANK_STR, _RANK_OBJ, _RANK_ARR, _RANK_BOOL = range(6)


def type_rank(v: Any) -> int:
    if v is None or v is MISSING:
        return _RANK_NULL
    if isinstance(v, bool):
        return _RANK_BOOL
    if isinstance(v, (int, float)):
        return _RANK_NUM
    if isinstance(v, str):
        return _RANK_STR
    if isinstance(v, dict):
        return _RANK_OBJ
    if isinstance(v, list):
        return _RANK_ARR
    raise TypeError(f"not a document value: {type(v).__name__}")


def _cmp_num(a: float, b: float) -> int:
    # NaN sorts below every other number and equals itself
    a_nan, b_nan = a != a, b != b
    if a_nan or b_nan:
        return (b_nan - a_nan) if not (a_nan and b_nan) else 0
    return (a > b) - (a < b)


def compare(a: Any, b: Any) -> int:
    """Total order over document values; returns -1, 0 or 1."""
    ra, rb = type_rank(a), type_rank(b)
    if ra != rb:
        return -1 if ra < rb else 1
    if ra == _RANK_NULL:
        return 0
    if ra in (_RANK_NUM, _RANK_BOOL):
        return _cmp_num(a, b)
    if ra == _RANK_STR:
        return (a > b) - (a < b)
    if ra == _RANK_OBJ:
        for (ka, va), (kb, vb) in zip(a.items(), b.items()):
            if ka != kb:
                return -1 if ka < kb else 1
            c = compare(va, vb)
            if c:
                return c
        return (len(a) > len(b)) - (len(a) < len(b))
    for x, y in zip(a, b):
        c = compare(x, y)
        if c:
            return c
    return (len(a) > len(b)) - (len(a) < len(b))


sort_key = cmp_to_key(compare)


def _num_key(v: int | float) -> Hashable:
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isfinite(v) and v.is_integer():
            return int(v)
    return v


def canon(v: Any) -> Hashable:
    """Hashable canonical form: numeric types unified, object keys unordered."""
    if v is None or v is MISSING:
        return ("null",) if v is None else ("missing",)
    if isinstance(v, bool):
        return ("bool", v)
    if isinstance(v, (int, float)):
        return ("num", _num_key(v))
    if isinstance(v, str):
        return ("str", v)
    if isinstance(v, list):
        return ("arr", tuple(canon(x) for x in v))
    if isinstance(v, dict):
        return ("obj", tuple(sorted((k, canon(x)) for k, x in v.items())))
    raise TypeError(f"not a document value: {type(v).__name__}")


def canon_ordered(v: Any) -> Hashable:
    """Like :func:`canon` but object key order is significant."""
    if isinstance(v, list):
        return ("arr", tuple(canon_ordered(x) for x in v))
    if isinstance(v, dict):
        return ("obj", tuple((k, canon_ordered(x)) for k, x in v.items()))
    return canon(v)


def values_equal(a: Any, b: Any) -> bool:
    return canon(a) == canon(b)


def check_document_value(v: Any, path: str = "$") -> None:
    """Raise ``TypeError`` if ``v`` is not built purely from the value model."""
    if v is None or isinstance(v, (bool, int, float, str)):
        return
    if isinstance(v, list):
        for i, x in enumerate(v):
            check_document_value(x, f"{path}[{i}]")
        return
    if isinstance(v, dict):
        for k, x in v.items():
            if not isinstance(k, str):
                raise TypeError(f"non-string key at {path}")
            check_document_value(x, f"{path}.{k}")
        return
    raise TypeError(f"unsupported value of type {type(v).__name__} at {path}")
