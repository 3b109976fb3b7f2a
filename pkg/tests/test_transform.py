import json
import sqlite3

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tests.data.school_dump import CHAIN, ENROLMENT, MUTUAL, SCHOOL
from text2nosql.errors import CycleError, NoMainTable, SchemaError
from text2nosql.transform import (
    RelationalDump,
    TableCluster,
    coerce,
    detect_fk_cycles,
    dump_from_sqlite,
    find_main_tables,
    group_tables,
    load_dump,
    transform_database,
)


def dump(blob):
    return RelationalDump.from_json(blob)


def tiny(name, tables, fks):
    """Schema-only dump: ``fks`` is a list of (child, parent) pairs."""
    return dump({"name": name, "tables": [
        {"name": t, "columns": ["id"] + [f"{p}_id" for c, p in fks if c == t],
         "foreign_keys": [{"column": f"{p}_id", "ref_table": p, "ref_column": "id"} for c, p in fks if c == t]}
        for t in tables
    ]})


# -- independent oracles -----------------------------------------------------------


def components(blob):
    names = [t["name"] for t in blob["tables"]]
    adj = {n: set() for n in names}
    for t in blob["tables"]:
        for fk in t.get("foreign_keys", []):
            adj[t["name"]].add(fk["ref_table"])
            adj[fk["ref_table"]].add(t["name"])
    seen, out = set(), []
    for n in names:
        if n in seen:
            continue
        comp, todo = set(), [n]
        while todo:
            x = todo.pop()
            if x not in comp:
                comp.add(x)
                todo.extend(adj[x])
        seen |= comp
        out.append(comp)
    return out


def nested_join(blob, table, row):
    """Rebuild one document by scanning every table for rows that point at ``row``."""
    tables = {t["name"]: t for t in blob["tables"]}
    order = [t["name"] for t in blob["tables"]]
    t = tables[table]
    cols = [c if isinstance(c, str) else c["name"] for c in t["columns"]]
    doc = dict(zip(cols, row))
    for child_name in order:
        child = tables[child_name]
        parents = [fk["ref_table"] for fk in child.get("foreign_keys", []) if fk["ref_table"] != child_name]
        if not parents or min(parents, key=order.index) != table:
            continue
        fk = next(f for f in child["foreign_keys"] if f["ref_table"] == table)
        ccols = [c if isinstance(c, str) else c["name"] for c in child["columns"]]
        fi = ccols.index(fk["column"])
        doc[child_name] = [nested_join(blob, child_name, r) for r in child["rows"]
                           if r[fi] is not None and r[fi] == doc[fk["ref_column"]]]
    return doc


def reachable_child_rows(blob):
    """Child rows connected to some top-level row through valid key chains."""
    order = [t["name"] for t in blob["tables"]]
    tables = {t["name"]: t for t in blob["tables"]}
    live = {n: set() for n in order}
    for n in order:
        if not tables[n].get("foreign_keys"):
            live[n] = set(range(len(tables[n]["rows"])))
    changed = True
    while changed:
        changed = False
        for n in order:
            fks = [f for f in tables[n].get("foreign_keys", []) if f["ref_table"] != n]
            if not fks:
                continue
            parent = min((f["ref_table"] for f in fks), key=order.index)
            fk = next(f for f in fks if f["ref_table"] == parent)
            pcols = tables[parent]["columns"]
            ccols = tables[n]["columns"]
            keys = {tables[parent]["rows"][i][pcols.index(fk["ref_column"])] for i in live[parent]}
            for i, row in enumerate(tables[n]["rows"]):
                v = row[ccols.index(fk["column"])]
                if i not in live[n] and v is not None and v in keys:
                    live[n].add(i)
                    changed = True
    return sum(len(live[n]) for n in order if tables[n].get("foreign_keys"))


# -- fixtures from the worked example ------------------------------------------------------


def test_school_clusters():
    clusters = group_tables(dump(SCHOOL))
    assert [set(c.tables) for c in clusters] == [{"student", "tutor"}, {"staff"}]


def test_school_main_tables():
    d = dump(SCHOOL)
    mains = [find_main_tables(c, d) for c in group_tables(d)]
    assert mains == [["tutor"], ["staff"]]


def test_school_transform_matches_join():
    db = transform_database(dump(SCHOOL))
    assert sorted(db.collections) == ["staff", "tutor"]
    tutor_rows = SCHOOL["tables"][1]["rows"]
    assert len(db.collection("tutor")) == len(tutor_rows)
    for doc, row in zip(db.collection("tutor"), tutor_rows):
        assert doc == nested_join(SCHOOL, "tutor", row)
        assert list(doc)[:2] == ["tutor_id", "gender"]
    assert db.collection("tutor")[0]["student"] == [
        {"student_id": 1, "name": "Ann", "tutor_id": 10}, {"student_id": 3, "name": "Cat", "tutor_id": 10}]
    assert db.collection("tutor")[3]["student"] == []
    assert db.collection("staff") == [{"staff_id": 100, "name": "Eve"}, {"staff_id": 101, "name": "Fay"}]


def test_mutual_reference_rejected():
    d = dump(MUTUAL)
    assert detect_fk_cycles(d) == [["A", "B"]]
    with pytest.raises(CycleError) as info:
        transform_database(d)
    assert "A -> B -> A" in str(info.value)


def test_self_reference_is_a_cycle():
    assert detect_fk_cycles(tiny("s", ["A"], [("A", "A")])) == [["A"]]


def test_acyclic_chain_has_no_cycles():
    assert detect_fk_cycles(dump(CHAIN)) == []


def test_all_cycles_enumerated():
    d = tiny("c", ["A", "B", "C"], [("A", "B"), ("B", "C"), ("C", "A"), ("B", "A")])
    assert detect_fk_cycles(d) == [["A", "B", "C"], ["A", "B"]]


def test_three_level_chain():
    warnings = []
    db = transform_database(dump(CHAIN), warnings)
    assert list(db.collections) == ["tutor"]
    first = db.collection("tutor")[0]
    assert first["student"][0]["grade"] == [{"gid": 1, "sid": 1, "score": 90.5}, {"gid": 2, "sid": 1, "score": 70.0}]
    for doc, row in zip(db.collection("tutor"), CHAIN["tables"][2]["rows"]):
        assert doc == nested_join(CHAIN, "tutor", row)
    assert [(w.table, w.value) for w in warnings] == [("grade", 9)]


def test_two_parents_embed_once():
    db = transform_database(dump(ENROLMENT))
    assert list(db.collections) == ["student", "course"]
    assert [len(d["enrollment"]) for d in db.collection("student")] == [1, 1]
    assert "enrollment" not in db.collection("course")[0]


def test_enrolment_main_tables():
    d = dump(ENROLMENT)
    assert find_main_tables(group_tables(d)[0], d) == ["student", "course"]


def test_no_main_table():
    d = dump(MUTUAL)
    with pytest.raises(NoMainTable):
        find_main_tables(TableCluster(("A", "B")), d)


def test_empty_table_gives_empty_collection():
    blob = json.loads(json.dumps(SCHOOL))
    blob["tables"][2]["rows"] = []
    assert transform_database(dump(blob)).collection("staff") == []


def test_singletons_without_fks():
    d = tiny("s", ["A", "B", "C"], [])
    assert [c.tables for c in group_tables(d)] == [("A",), ("B",), ("C",)]


@pytest.mark.parametrize("blob", [
    {"tables": [{"name": "A", "columns": ["x"], "rows": [[1, 2]]}]},
    {"tables": [{"name": "A", "columns": ["x"], "foreign_keys": [{"column": "x", "ref_table": "Z", "ref_column": "y"}]}]},
    {"tables": [{"name": "A", "columns": ["x"], "foreign_keys": [{"column": "q", "ref_table": "A", "ref_column": "x"}]}]},
    {"tables": [{"name": "A"}]},
    {"tables": [{"name": "A", "columns": []}, {"name": "A", "columns": []}]},
])
def test_invalid_dumps(blob):
    with pytest.raises(SchemaError):
        dump(blob)


@pytest.mark.parametrize("value,tag,expected", [
    ("3", "INTEGER", 3),
    (3.0, "int", 3),
    ("2.5", "REAL", 2.5),
    (7, "decimal(10,2)", 7),
    (7, "varchar(5)", "7"),
    (None, "int", None),
    ("n/a", "int", "n/a"),
    (True, "text", "true"),
])
def test_coercion(value, tag, expected):
    out = coerce(value, tag)
    assert out == expected and type(out) is type(expected)


def test_load_dump_json(tmp_path):
    f = tmp_path / "school.json"
    f.write_text(json.dumps(SCHOOL))
    assert load_dump(f).to_json()["tables"][0]["name"] == "student"
    assert dump(load_dump(f).to_json()).to_json() == load_dump(f).to_json()


def test_sqlite_ingestion(tmp_path):
    path = tmp_path / "school.sqlite"
    con = sqlite3.connect(path)
    con.executescript("""
        CREATE TABLE tutor (tutor_id INTEGER PRIMARY KEY, gender TEXT);
        CREATE TABLE student (student_id INTEGER PRIMARY KEY, name TEXT,
                              tutor_id INTEGER REFERENCES tutor(tutor_id));
        INSERT INTO tutor VALUES (10, 'F'), (11, 'M');
        INSERT INTO student VALUES (1, 'Ann', 10), (2, 'Ben', 11), (3, 'Cat', 10);
    """)
    con.commit()
    con.close()
    d = dump_from_sqlite(path)
    assert [t.name for t in d.tables] == ["tutor", "student"]
    db = transform_database(d)
    assert [len(doc["student"]) for doc in db.collection("tutor")] == [2, 1]


# -- properties over random acyclic dumps -------------------------------------------------------


@st.composite
def acyclic_dumps(draw):
    n = draw(st.integers(1, 6))
    names = [f"t{i}" for i in range(n)]
    # edges only point from higher to lower index in a random permutation, so no cycles
    perm = draw(st.permutations(names))
    rank = {t: i for i, t in enumerate(perm)}
    tables = []
    for t in names:
        parents = [p for p in names if rank[p] < rank[t] and draw(st.booleans())]
        cols = ["id"] + [f"{p}_ref" for p in parents]
        rows = []
        for i in range(draw(st.integers(0, 5))):
            rows.append([i] + [draw(st.one_of(st.none(), st.integers(0, 5))) for _ in parents])
        tables.append({"name": t, "columns": cols, "rows": rows,
                       "foreign_keys": [{"column": f"{p}_ref", "ref_table": p, "ref_column": "id"} for p in parents]})
    return {"name": "rand", "tables": tables}


@settings(max_examples=150, deadline=None)
@given(acyclic_dumps())
def test_transform_invariants(blob):
    d = dump(blob)
    assert detect_fk_cycles(d) == []
    clusters = group_tables(d)
    assert sorted(map(sorted, (set(c.tables) for c in clusters))) == sorted(map(sorted, components(blob)))
    warnings = []
    db = transform_database(d, warnings)
    tables = {t["name"]: t for t in blob["tables"]}
    for name, docs in db.collections.items():
        assert len(docs) == len(tables[name]["rows"])
        for doc, row in zip(docs, tables[name]["rows"]):
            assert set(tables[name]["columns"]) <= set(doc)
            assert doc == nested_join(blob, name, row)

    def embedded(doc, table):
        count = 0
        for key, val in doc.items():
            if key in tables and isinstance(val, list):
                count += len(val) + sum(embedded(v, key) for v in val)
        return count

    nested = sum(embedded(doc, name) for name, docs in db.collections.items() for doc in docs)
    assert nested == reachable_child_rows(blob)
    # every dangling row is a child row that is not embedded anywhere
    child_rows = sum(len(t["rows"]) for t in blob["tables"] if t["foreign_keys"])
    assert nested <= child_rows - len(warnings)
    assert transform_database(dump(blob)).to_json() == db.to_json()
