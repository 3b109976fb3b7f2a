from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import Any

from ..values import canon, canon_ordered

IDENT_RE = re.compile(r"^[A-Za-z0-9_]+$")


class Method(str, enum.Enum):
    FIND = "find"
    AGGREGATE = "aggregate"


class StageKind(str, enum.Enum):
    MATCH = "$match"
    GROUP = "$group"
    PROJECT = "$project"
    UNWIND = "$unwind"
    SORT = "$sort"
    LIMIT = "$limit"
    SKIP = "$skip"
    LOOKUP = "$lookup"
    COUNT = "$count"
    OTHER = "other"


_KNOWN = {k.value: k for k in StageKind if k is not StageKind.OTHER}


@dataclass(frozen=True)
class Stage:
    """One pipeline step. ``operator`` keeps the verbatim ``$``-prefixed key."""

    operator: str
    body: Any

    @property
    def kind(self) -> StageKind:
        return _KNOWN.get(self.operator, StageKind.OTHER)

    def to_json(self) -> dict[str, Any]:
        return {self.operator: self.body}


@dataclass(frozen=True)
class FindClauses:
    filter: dict[str, Any] = field(default_factory=dict)
    projection: dict[str, Any] | None = None
    sort: dict[str, Any] | None = None
    limit: int | None = None


@dataclass(frozen=True, eq=False)
class QueryAst:
    collection: str
    method: Method
    find_clauses: FindClauses | None = None
    pipeline: tuple[Stage, ...] = ()

    def __post_init__(self):
        if not IDENT_RE.match(self.collection):
            raise ValueError(f"bad collection identifier {self.collection!r}")
        if self.method is Method.FIND and self.find_clauses is None:
            raise ValueError("find query without clauses")
        if self.method is Method.AGGREGATE and self.find_clauses is not None:
            raise ValueError("aggregate query with find clauses")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, QueryAst):
            return NotImplemented
        return self.structure() == other.structure()

    def __hash__(self) -> int:
        return hash(self.structure())

    @property
    def is_find(self) -> bool:
        return self.method is Method.FIND

    def to_json(self) -> dict[str, Any]:
        """Strict-JSON export; operator keys are kept verbatim."""
        out: dict[str, Any] = {"collection": self.collection, "method": self.method.value}
        if self.find_clauses is not None:
            fc = self.find_clauses
            out["find"] = {
                "filter": fc.filter,
                "projection": fc.projection,
                "sort": fc.sort,
                "limit": fc.limit,
            }
        else:
            out["pipeline"] = [s.to_json() for s in self.pipeline]
        return out

    def structure(self, ordered_keys: bool = True):
        """Hashable structural form, used for equality checks."""
        c = canon_ordered if ordered_keys else canon
        return c(self.to_json())


def structurally_equal(a: QueryAst, b: QueryAst, ordered_keys: bool = True) -> bool:
    return a.structure(ordered_keys) == b.structure(ordered_keys)


@dataclass
class FieldProfile:
    database_fields: set[str] = field(default_factory=set)
    defined_fields: set[str] = field(default_factory=set)
    collections: set[str] = field(default_factory=set)
