"""Result-set comparison shared by evaluation and dataset verification."""

from __future__ import annotations

import enum
from collections import Counter
from typing import Any, Iterator

from ..values import canon
from .database import ResultSet


class Comparison(str, enum.Enum):
    EQUAL = "Equal"
    FIELDS_DIFFER = "FieldsDiffer"
    VALUES_DIFFER = "ValuesDiffer"
    BOTH_DIFFER = "BothDiffer"


def leaves(value: Any, prefix: str = "") -> Iterator[tuple[str, Any]]:
    """Yield ``(dotted path, leaf)`` pairs. Array elements share the array's path."""
    if isinstance(value, dict):
        if not value and prefix:
            yield prefix, value
        for k, v in value.items():
            yield from leaves(v, f"{prefix}.{k}" if prefix else k)
    elif isinstance(value, list):
        if not value:
            yield prefix, value
        for v in value:
            yield from leaves(v, prefix)
    else:
        yield prefix, value


def field_signature(doc: dict[str, Any]) -> frozenset[str]:
    return frozenset(path for path, _ in leaves(doc))


def field_multiset(docs: list[dict[str, Any]]) -> Counter:
    return Counter(field_signature(d) for d in docs)


def value_multiset(docs: list[dict[str, Any]], paths: set[str] | None = None) -> Counter:
    out: Counter = Counter()
    for d in docs:
        for path, leaf in leaves(d):
            if paths is None or path in paths:
                out[canon(leaf)] += 1
    return out


def results_equal(a: ResultSet, b: ResultSet) -> bool:
    if a.ordered and b.ordered:
        return len(a.docs) == len(b.docs) and all(canon(x) == canon(y) for x, y in zip(a.docs, b.docs))
    return Counter(canon(d) for d in a.docs) == Counter(canon(d) for d in b.docs)


def fields_match(a: ResultSet, b: ResultSet) -> bool:
    return field_multiset(a.docs) == field_multiset(b.docs)


def values_match(a: ResultSet, b: ResultSet) -> bool:
    return value_multiset(a.docs) == value_multiset(b.docs)


def compare_results(a: ResultSet, b: ResultSet) -> Comparison:
    """Classify how two results relate.

    When the field layouts differ, values are only compared on the paths both
    sides share, so a pure renaming is reported as ``FieldsDiffer`` rather than
    also blaming the (incomparable) values.
    """
    if results_equal(a, b):
        return Comparison.EQUAL
    if fields_match(a, b):
        return Comparison.VALUES_DIFFER
    shared = {p for d in a.docs for p in field_signature(d)} & {p for d in b.docs for p in field_signature(d)}
    if shared and value_multiset(a.docs, shared) != value_multiset(b.docs, shared):
        return Comparison.BOTH_DIFFER
    return Comparison.FIELDS_DIFFER
