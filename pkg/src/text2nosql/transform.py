"""Relational dump to nested document database.

Tables linked by foreign keys are grouped into clusters. Within a cluster
every table with no outgoing foreign key becomes a collection, and rows of
referencing tables are nested under the row they point to, recursively.
"""

from __future__ import annotations

import json
import logging
import os
import re
import sqlite3
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .engine.database import DocumentDatabase
from .errors import CycleError, DatabaseIoError, NoMainTable, SchemaError
from .values import canon

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Column:
    name: str
    type: str = ""


@dataclass(frozen=True)
class ForeignKey:
    column: str
    ref_table: str
    ref_column: str


@dataclass
class Table:
    name: str
    columns: list[Column]
    rows: list[list[Any]] = field(default_factory=list)
    primary_key: str | None = None
    foreign_keys: list[ForeignKey] = field(default_factory=list)

    def column_index(self, name: str) -> int:
        for i, c in enumerate(self.columns):
            if c.name == name:
                return i
        raise SchemaError(f"table {self.name!r} has no column {name!r}")


@dataclass
class RelationalDump:
    name: str
    tables: list[Table]

    def __post_init__(self):
        names = [t.name for t in self.tables]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate table names in dump")
        by_name = {t.name: t for t in self.tables}
        for t in self.tables:
            for row in t.rows:
                if len(row) != len(t.columns):
                    raise SchemaError(f"row arity {len(row)} != {len(t.columns)} columns in {t.name!r}")
            if t.primary_key is not None:
                t.column_index(t.primary_key)
            for fk in t.foreign_keys:
                t.column_index(fk.column)
                if fk.ref_table not in by_name:
                    raise SchemaError(f"foreign key {t.name}.{fk.column} references unknown table {fk.ref_table!r}")
                by_name[fk.ref_table].column_index(fk.ref_column)

    def table(self, name: str) -> Table:
        for t in self.tables:
            if t.name == name:
                return t
        raise KeyError(name)

    @classmethod
    def from_json(cls, blob: dict[str, Any]) -> RelationalDump:
        try:
            tables = []
            for t in blob["tables"]:
                cols = [Column(c) if isinstance(c, str) else Column(c["name"], c.get("type") or "")
                        for c in t["columns"]]
                fks = [ForeignKey(f["column"], f["ref_table"], f["ref_column"]) for f in t.get("foreign_keys", [])]
                tables.append(Table(t["name"], cols, [list(r) for r in t.get("rows", [])],
                                    t.get("primary_key"), fks))
            return cls(blob.get("name", "db"), tables)
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed relational dump: {exc!r}") from None

    def to_json(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "tables": [
                {
                    "name": t.name,
                    "columns": [{"name": c.name, "type": c.type} for c in t.columns],
                    "primary_key": t.primary_key,
                    "foreign_keys": [fk.__dict__ for fk in t.foreign_keys],
                    "rows": t.rows,
                }
                for t in self.tables
            ],
        }


@dataclass(frozen=True)
class TableCluster:
    tables: tuple[str, ...]
    main_tables: tuple[str, ...] = ()


@dataclass(frozen=True)
class DanglingForeignKey:
    """A child row that could not be attached to any parent row."""

    table: str
    column: str
    row: int
    value: Any

    def __str__(self) -> str:
        return f"{self.table}.{self.column} = {self.value!r} (row {self.row}) matches no parent row"


class UnionFind:
    def __init__(self, items):
        self.parent = {x: x for x in items}

    def find(self, x):
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra


# -- grouping and cycles -------------------------------------------------------------


def _edges(dump: RelationalDump) -> dict[str, list[str]]:
    """Table-level FK digraph, child -> referenced tables, deduplicated, in dump order."""
    out: dict[str, list[str]] = {t.name: [] for t in dump.tables}
    for t in dump.tables:
        for fk in t.foreign_keys:
            if fk.ref_table not in out[t.name]:
                out[t.name].append(fk.ref_table)
    return out


def group_tables(dump: RelationalDump) -> list[TableCluster]:
    names = [t.name for t in dump.tables]
    uf = UnionFind(names)
    for src, targets in _edges(dump).items():
        for dst in targets:
            uf.union(src, dst)
    groups: dict[str, list[str]] = {}
    for name in names:
        groups.setdefault(uf.find(name), []).append(name)
    return [TableCluster(tuple(members)) for members in groups.values()]


def detect_fk_cycles(dump: RelationalDump) -> list[list[str]]:
    """Every elementary directed cycle, each rotated to start at its earliest table."""
    order = {t.name: i for i, t in enumerate(dump.tables)}
    edges = _edges(dump)
    cycles: list[list[str]] = []
    for start in order:
        floor = order[start]
        path = [start]
        on_path = {start}

        def walk(node: str) -> None:
            for nxt in edges[node]:
                if nxt == start:
                    cycles.append(list(path))
                elif order[nxt] > floor and nxt not in on_path:
                    path.append(nxt)
                    on_path.add(nxt)
                    walk(nxt)
                    path.pop()
                    on_path.discard(nxt)

        walk(start)
    return cycles


def find_main_tables(cluster: TableCluster, dump: RelationalDump) -> list[str]:
    members = set(cluster.tables)
    edges = _edges(dump)
    mains = [t for t in cluster.tables if not any(r in members and r != t for r in edges[t])]
    if not mains:
        raise NoMainTable(f"cluster {sorted(members)} has no table free of outgoing foreign keys")
    return mains


# -- value coercion ------------------------------------------------------------------------

_REAL_TAGS = ("real", "floa", "doub", "numeric", "decimal", "number")


def column_kind(type_tag: str) -> str:
    """``int``, ``real``, ``text`` or ``any`` using SQLite-style affinity on the declared type.

    An undeclared type has no affinity, so values are kept as given.
    """
    tag = (type_tag or "").lower()
    if not tag:
        return "any"
    if "int" in tag:
        return "int"
    if any(k in tag for k in _REAL_TAGS):
        return "real"
    return "text"


def coerce(value: Any, type_tag: str) -> Any:
    if value is None:
        return None
    kind = column_kind(type_tag)
    if kind == "any":
        return value
    if kind == "text":
        if isinstance(value, str):
            return value
        if isinstance(value, float) and value.is_integer():
            return str(int(value))
        return json.dumps(value) if isinstance(value, (bool, list, dict)) else str(value)
    if isinstance(value, bool):
        return int(value)
    if isinstance(value, (int, float)):
        num = value
    else:
        text = str(value).strip()
        try:
            num = int(text)
        except ValueError:
            try:
                num = float(text)
            except ValueError:
                return str(value)  # not numeric after all; keep the text rather than lose it
    if isinstance(num, float) and num.is_integer() and abs(num) < 2**53 and (kind == "int" or isinstance(value, str)):
        return int(num)
    return num


# -- transformation ------------------------------------------------------------------------


def assign_parents(dump: RelationalDump) -> dict[str, ForeignKey]:
    """For each referencing table, the FK used to nest it: first referenced parent in dump order."""
    order = {t.name: i for i, t in enumerate(dump.tables)}
    out = {}
    for t in dump.tables:
        fks = [fk for fk in t.foreign_keys if fk.ref_table != t.name]
        if not fks:
            continue
        parent = min((fk.ref_table for fk in fks), key=order.__getitem__)
        out[t.name] = next(fk for fk in fks if fk.ref_table == parent)
    return out


def transform_database(dump: RelationalDump, warnings: list[DanglingForeignKey] | None = None) -> DocumentDatabase:
    cycles = detect_fk_cycles(dump)
    if cycles:
        raise CycleError(cycles)
    tables = {t.name: t for t in dump.tables}
    links = assign_parents(dump)
    children: dict[str, list[str]] = {t.name: [] for t in dump.tables}
    for child, fk in links.items():
        children[fk.ref_table].append(child)

    # child rows grouped by the parent key they point at
    buckets: dict[str, dict[Any, list[int]]] = {}
    for child, fk in links.items():
        t = tables[child]
        parent = tables[fk.ref_table]
        ci = t.column_index(fk.column)
        ptype = parent.columns[parent.column_index(fk.ref_column)].type
        known = {canon(coerce(r[parent.column_index(fk.ref_column)], ptype)) for r in parent.rows}
        index: dict[Any, list[int]] = {}
        for ri, row in enumerate(t.rows):
            key = canon(coerce(row[ci], ptype))
            if row[ci] is None or key not in known:
                record = DanglingForeignKey(child, fk.column, ri, row[ci])
                log.warning("dangling foreign key: %s", record)
                if warnings is not None:
                    warnings.append(record)
                continue
            index.setdefault(key, []).append(ri)
        buckets[child] = index

    def build(table: Table, row: list[Any]) -> dict[str, Any]:
        doc = {c.name: coerce(v, c.type) for c, v in zip(table.columns, row)}
        for child in children[table.name]:
            if child in doc:
                raise SchemaError(f"table {child!r} collides with a column of {table.name!r}")
            fk = links[child]
            key = canon(doc[fk.ref_column])
            ct = tables[child]
            doc[child] = [build(ct, ct.rows[i]) for i in buckets[child].get(key, [])]
        return doc

    collections: dict[str, list[dict[str, Any]]] = {}
    for cluster in group_tables(dump):
        for main in find_main_tables(cluster, dump):
            t = tables[main]
            collections[main] = [build(t, row) for row in t.rows]
    return DocumentDatabase(dump.name, collections)


# -- ingestion --------------------------------------------------------------------------------


def load_dump(path: str | os.PathLike) -> RelationalDump:
    path = Path(path)
    if path.suffix in (".sqlite", ".sqlite3", ".db"):
        return dump_from_sqlite(path)
    try:
        with open(path, encoding="utf-8") as fh:
            blob = json.load(fh)
    except OSError as exc:
        raise DatabaseIoError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path} is not valid JSON: {exc}") from exc
    return RelationalDump.from_json(blob)


def _quote(name: str) -> str:
    return '"' + name.replace('"', '""') + '"'


def dump_from_sqlite(path: str | os.PathLike, name: str | None = None) -> RelationalDump:
    """Read every user table of a SQLite file. Composite keys are skipped with a warning."""
    path = Path(path)
    if not path.is_file():
        raise DatabaseIoError(f"no SQLite file at {path}")
    con = sqlite3.connect(f"file:{path}?mode=ro", uri=True)
    try:
        names = [r[0] for r in con.execute(
            "SELECT name FROM sqlite_master WHERE type='table' AND name NOT LIKE 'sqlite_%' ORDER BY rowid")]
        info = {n: con.execute(f"PRAGMA table_info({_quote(n)})").fetchall() for n in names}
        lower = {n.lower(): n for n in names}
        tables = []
        for n in names:
            cols = [Column(r[1], r[2] or "") for r in info[n]]
            pks = [r[1] for r in sorted(info[n], key=lambda r: r[5]) if r[5]]
            fks = []
            fk_rows = con.execute(f"PRAGMA foreign_key_list({_quote(n)})").fetchall()
            sizes: dict[int, int] = {}
            for r in fk_rows:
                sizes[r[0]] = sizes.get(r[0], 0) + 1
            for r in fk_rows:
                if sizes[r[0]] > 1:
                    log.warning("skipping composite foreign key on %s", n)
                    continue
                ref = lower.get(r[2].lower())
                if ref is None:
                    log.warning("foreign key %s.%s references missing table %s", n, r[3], r[2])
                    continue
                ref_col = r[4]
                if ref_col is None:
                    ref_pk = [c[1] for c in info[ref] if c[5]]
                    if len(ref_pk) != 1:
                        continue
                    ref_col = ref_pk[0]
                ref_names = {c[1].lower(): c[1] for c in info[ref]}
                own_names = {c.name.lower(): c.name for c in cols}
                if ref_col.lower() not in ref_names or r[3].lower() not in own_names:
                    log.warning("foreign key %s.%s names an unknown column", n, r[3])
                    continue
                fks.append(ForeignKey(own_names[r[3].lower()], ref, ref_names[ref_col.lower()]))
            rows = [list(r) for r in con.execute(f"SELECT * FROM {_quote(n)}")]
            rows = [[v.decode("utf-8", "replace") if isinstance(v, bytes) else v for v in r] for r in rows]
            tables.append(Table(n, cols, rows, pks[0] if len(pks) == 1 else None, fks))
    except sqlite3.Error as exc:
        raise DatabaseIoError(f"cannot read {path}: {exc}") from exc
    finally:
        con.close()
    return RelationalDump(name or re.sub(r"\W+", "_", path.stem), tables)
