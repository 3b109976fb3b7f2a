import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tests import fuzzgen
from tests.data.case_study import CASE_DB, failing_completion_dates
from tests.data.reference_queries import CASE_GOLD, CASE_LLAMA, CASE_RAG, CORPUS, PEOPLE, REF_COLORS
from text2nosql.engine import (
    Comparison,
    ResultSet,
    compare_results,
    database_from_mapping,
    execute_query,
    load_database,
    load_databases,
    write_database,
)
from text2nosql.engine.oracle import oracle_execute
from text2nosql.errors import (
    DatabaseIoError,
    InvalidQuery,
    SchemaError,
    TypeMismatch,
    UnknownCollection,
    UnsupportedOperator,
)
from text2nosql.query import FindClauses, Method, QueryAst, Stage, parse_query


def run(db, text, **kw):
    if isinstance(db, dict):
        db = database_from_mapping("t", db)
    return execute_query(db, parse_query(text), **kw)


PEOPLE_DB = {"people": [
    {"_id": 1, "Name": "Ann", "Country": "UK"},
    {"_id": 2, "Name": "Bo", "Country": "US"},
    {"_id": 3, "Name": "Cy", "Country": "UK"},
]}


# -- loading ---------------------------------------------------------------------


def test_load_directory(tmp_path):
    (tmp_path / "tutor.json").write_text(json.dumps([{"tutor_id": 1}, {"tutor_id": 2}]))
    db = load_database(tmp_path)
    assert list(db.collections) == ["tutor"]
    assert len(db.collection("tutor")) == 2


def test_load_empty_directory(tmp_path):
    assert load_database(tmp_path).collections == {}


def test_load_single_file_and_round_trip(tmp_path):
    f = tmp_path / "school.json"
    f.write_text(json.dumps({"a": [{"x": 1}], "b": []}))
    db = load_database(f)
    assert db.name == "school" and db.collection("b") == []
    out = write_database(db, tmp_path / "copy")
    assert load_database(out).to_json() == db.to_json()


def test_load_databases(tmp_path):
    (tmp_path / "one.json").write_text("{}")
    (tmp_path / "two").mkdir()
    (tmp_path / "notes.txt").write_text("ignored")
    assert sorted(load_databases(tmp_path)) == ["one", "two"]


@pytest.mark.parametrize("content", ['{"a": 1}', '{"a": [1]}', "[]", "{bad"])
def test_load_rejects_bad_bundles(tmp_path, content):
    f = tmp_path / "x.json"
    f.write_text(content)
    with pytest.raises(SchemaError):
        load_database(f)


def test_load_missing(tmp_path):
    with pytest.raises(DatabaseIoError):
        load_database(tmp_path / "nope")


# -- quoted-query fixtures -------------------------------------------------------------


def test_case_study_gold_returns_seven():
    res = run(CASE_DB, CASE_GOLD)
    assert len(res) == 7
    assert res.docs[0] == {"date_of_completion": "2018-03-04 01:24:56"}
    assert [d["date_of_completion"] for d in res.docs] == failing_completion_dates()


def test_case_study_wrong_field():
    res = run(CASE_DB, CASE_RAG)
    assert res.docs[0] == {"date_test_taken": "2018-03-22 13:10:06"}
    gold = run(CASE_DB, CASE_GOLD)
    assert compare_results(res, gold) is Comparison.FIELDS_DIFFER


def test_case_study_wrong_collection():
    with pytest.raises(UnknownCollection):
        run(CASE_DB, CASE_LLAMA)
    assert run(CASE_DB, CASE_LLAMA, strict=False).docs == []


def test_people_group_counts():
    res = run(PEOPLE_DB, PEOPLE)
    assert res.docs == [{"Country": "UK", "count": 2}, {"Country": "US", "count": 1}]


def test_ref_colors_count():
    docs = [{"_id": i, "Products": list(range(i))} for i in range(6)]
    expected = sum(len(d["Products"]) for d in docs)
    assert run({"Ref_Colors": docs}, REF_COLORS).docs == [{"count": expected}]


def test_empty_pipeline_is_identity():
    res = run(PEOPLE_DB, "db.people.aggregate([]);")
    assert res.docs == PEOPLE_DB["people"] and res.ordered is False


def test_company_lookup_anti_join():
    db = {
        "company": [{"_id": 1, "Company_ID": 1, "Company": "A", "Main_Industry": "Oil"},
                    {"_id": 2, "Company_ID": 2, "Company": "B", "Main_Industry": "Gas"}],
        "gas_station": [{"_id": 9, "station_company": [{"Company_ID": 1}]}],
    }
    assert run(db, CORPUS["company"]).docs == [{"Company": "B", "Main_Industry": "Gas"}]


def test_departments_lookup_with_let():
    db = {
        "departments": [{"_id": 1, "LOCATION_ID": 7, "employees": [
            {"FIRST_NAME": "Ada", "LAST_NAME": "L", "EMPLOYEE_ID": 100}]}],
        "regions": [{"_id": 1, "countries": [
            {"COUNTRY_NAME": "UK", "locations": [{"LOCATION_ID": 7}, {"LOCATION_ID": 8}]},
            {"COUNTRY_NAME": "FR", "locations": [{"LOCATION_ID": 9}]}]}],
    }
    assert run(db, CORPUS["departments"]).docs == [
        {"FIRST_NAME": "Ada", "LAST_NAME": "L", "EMPLOYEE_ID": 100, "COUNTRY_NAME": "UK"}]


def test_staff_regex_case_insensitive():
    db = {"Staff": [{"_id": 1, "email_address": "WRAU@x.org", "last_name": "Z"},
                    {"_id": 2, "email_address": "other@x.org", "last_name": "Q"}]}
    assert run(db, CORPUS["staff"]).docs == [{"last_name": "Z"}]


def test_pilot_top_nationality():
    db = {"pilot": [{"Nationality": n} for n in ["US", "UK", "US", "FR"]]}
    res = run(db, CORPUS["pilot"])
    assert res.docs == [{"Nationality": "US"}] and res.ordered


def test_faculty_dotted_filter_through_array():
    db = {"Faculty": [
        {"_id": 1, "Fname": "A", "Lname": "B", "Course": [{"CName": "COMPUTER LITERACY"}, {"CName": "X"}]},
        {"_id": 2, "Fname": "C", "Lname": "D", "Course": [{"CName": "X"}]},
    ]}
    assert run(db, CORPUS["faculty"]).docs == [{"Fname": "A", "Lname": "B"}]


# -- stage semantics -------------------------------------------------------------------


def test_find_order_of_clauses():
    db = {"c": [{"_id": i, "v": v} for i, v in enumerate([3, 1, 2])]}
    res = run(db, "db.c.find({}, {v: 1, _id: 0}).sort({v: -1}).limit(2)")
    assert res.docs == [{"v": 3}, {"v": 2}] and res.ordered


def test_find_limit_zero_means_all():
    assert len(run(PEOPLE_DB, "db.people.find({}).limit(0)")) == 3


@pytest.mark.parametrize("flt,ids", [
    ({"v": None}, [2, 3]),
    ({"v": {"$exists": False}}, [3]),
    ({"v": {"$gt": 1}}, [1, 4]),
    ({"v": {"$gte": "a"}}, [5]),
    ({"v": {"$in": [1, "a"]}}, [0, 5]),
    ({"v": {"$nin": [1, None]}}, [1, 4, 5]),
    ({"v": {"$size": 2}}, [4]),
    ({"v": 7}, [4]),
    ({"v": [2, 7]}, [4]),
    ({"v": {"$not": {"$gt": 1}}}, [0, 2, 3, 5]),
    ({"$or": [{"v": 1}, {"v": "a"}]}, [0, 5]),
    ({"$nor": [{"v": 1}, {"v": "a"}]}, [1, 2, 3, 4]),
    ({"$expr": {"$gt": ["$v", 1]}}, [1, 4, 5]),
])
def test_filters(flt, ids):
    db = {"c": [{"_id": 0, "v": 1}, {"_id": 1, "v": 2.5}, {"_id": 2, "v": None},
                {"_id": 3}, {"_id": 4, "v": [2, 7]}, {"_id": 5, "v": "a"}]}
    res = execute_query(database_from_mapping("t", db), QueryAst("c", Method.FIND, find_clauses=FindClauses(flt)))
    assert [d["_id"] for d in res.docs] == ids


def test_bool_is_not_number():
    db = {"c": [{"_id": 0, "v": True}, {"_id": 1, "v": 1}]}
    assert [d["_id"] for d in run(db, "db.c.find({v: 1})").docs] == [1]


def test_int_and_float_unify():
    db = {"c": [{"_id": 0, "v": 2.0}]}
    assert len(run(db, "db.c.find({v: 2})")) == 1


def test_unwind_forms():
    db = {"c": [{"_id": 1, "xs": [1, 2]}, {"_id": 2, "xs": []}, {"_id": 3}, {"_id": 4, "xs": 5}]}
    assert [d["_id"] for d in run(db, 'db.c.aggregate([{$unwind: "$xs"}])').docs] == [1, 1, 4]
    kept = run(db, 'db.c.aggregate([{$unwind: {path: "$xs", preserveNullAndEmptyArrays: true}}])').docs
    assert kept == [{"_id": 1, "xs": 1}, {"_id": 1, "xs": 2}, {"_id": 2}, {"_id": 3}, {"_id": 4, "xs": 5}]


def test_unwind_does_not_mutate_source():
    db = database_from_mapping("t", {"c": [{"_id": 1, "a": {"xs": [1, 2]}}]})
    execute_query(db, parse_query('db.c.aggregate([{$unwind: "$a.xs"}, {$project: {_id: 0}}])'))
    assert db.collection("c") == [{"_id": 1, "a": {"xs": [1, 2]}}]


def test_group_accumulators():
    db = {"c": [{"g": "a", "v": 1}, {"g": "b", "v": 5}, {"g": "a", "v": 3.5},
                {"g": "a"}, {"g": "a", "v": None}, {"g": "a", "v": "s"}]}
    q = ('db.c.aggregate([{$group: {_id: "$g", s: {$sum: "$v"}, a: {$avg: "$v"}, lo: {$min: "$v"},'
         ' hi: {$max: "$v"}, p: {$push: "$v"}, u: {$addToSet: "$v"}, f: {$first: "$v"}, l: {$last: "$v"}}}])')
    a, b = run(db, q).docs
    assert a == {"_id": "a", "s": 4.5, "a": 2.25, "lo": 1, "hi": "s", "p": [1, 3.5, None, "s"],
                 "u": [1, 3.5, None, "s"], "f": 1, "l": "s"}
    assert b["s"] == 5 and b["a"] == 5


def test_group_null_key_single_output():
    db = {"c": [{"v": 1}, {"v": 2}]}
    assert run(db, 'db.c.aggregate([{$group: {_id: null, n: {$sum: 1}}}])').docs == [{"_id": None, "n": 2}]


def test_avg_of_nothing_is_null():
    db = {"c": [{"v": "x"}]}
    assert run(db, 'db.c.aggregate([{$group: {_id: null, a: {$avg: "$v"}}}])').docs[0]["a"] is None


def test_count_on_empty_input():
    assert run({"c": []}, 'db.c.aggregate([{$count: "n"}])').docs == [{"n": 0}]


def test_sort_mixed_types_and_stability():
    db = {"c": [{"_id": 0, "v": "b"}, {"_id": 1, "v": 2}, {"_id": 2}, {"_id": 3, "v": True},
                {"_id": 4, "v": None}, {"_id": 5, "v": 2.0}]}
    res = run(db, "db.c.aggregate([{$sort: {v: 1}}])")
    assert [d["_id"] for d in res.docs] == [2, 4, 1, 5, 0, 3]


def test_project_rules():
    db = {"c": [{"_id": 1, "a": {"b": 1, "c": 2}, "xs": [{"b": 1, "z": 0}, 3], "k": "v"}]}
    assert run(db, 'db.c.aggregate([{$project: {"a.b": 1, "xs.b": 1}}])').docs == [
        {"_id": 1, "a": {"b": 1}, "xs": [{"b": 1}]}]
    assert run(db, 'db.c.aggregate([{$project: {k: 0, "a.c": 0}}])').docs == [
        {"_id": 1, "a": {"b": 1}, "xs": [{"b": 1, "z": 0}, 3]}]
    assert run(db, 'db.c.aggregate([{$project: {_id: 0, out: {$concat: ["$k", "!"]}}}])').docs == [{"out": "v!"}]
    assert run(db, 'db.c.aggregate([{$project: {_id: 1}}])').docs == [{"_id": 1}]


@pytest.mark.parametrize("stage,error", [
    ('{$project: {a: 1, b: 0}}', InvalidQuery),
    ('{$project: {a: 1, "a.b": 1}}', InvalidQuery),
    ('{$limit: 0}', InvalidQuery),
    ('{$skip: -1}', InvalidQuery),
    ('{$sort: {a: 2}}', InvalidQuery),
    ('{$count: "$n"}', InvalidQuery),
    ('{$facet: {}}', UnsupportedOperator),
    ('{$match: {a: {$regex: "x", $options: "m"}}}', UnsupportedOperator),
    ('{$match: {a: {$elemMatch: {}}}}', UnsupportedOperator),
    ('{$group: {_id: null, x: {$stdDevPop: "$a"}}}', UnsupportedOperator),
    ('{$project: {x: {$arrayElemAt: ["$a", 0]}}}', UnsupportedOperator),
    ('{$project: {x: {$add: ["$a", "s"]}}}', TypeMismatch),
])
def test_stage_errors(stage, error):
    with pytest.raises(error):
        run({"c": [{"a": 1}]}, f"db.c.aggregate([{stage}])")


def test_lookup_unknown_source_gives_empty_arrays():
    res = run({"c": [{"k": 1}]}, 'db.c.aggregate([{$lookup: {from: "zz", localField: "k", foreignField: "k", as: "j"}}])')
    assert res.docs == [{"k": 1, "j": []}]


def test_lookup_null_matches_missing():
    db = {"c": [{"_id": 1}], "d": [{"_id": 2}, {"_id": 3, "k": 1}]}
    res = run(db, 'db.c.aggregate([{$lookup: {from: "d", localField: "k", foreignField: "k", as: "j"}}])')
    assert res.docs[0]["j"] == [{"_id": 2}]


# -- comparison ----------------------------------------------------------------------------


def test_compare_multiset():
    a = ResultSet([{"x": 1}, {"x": 2}])
    b = ResultSet([{"x": 2.0}, {"x": 1}])
    assert compare_results(a, b) is Comparison.EQUAL


def test_compare_ordered_only_when_both_sorted():
    a = ResultSet([{"x": 1}, {"x": 2}], ordered=True)
    b = ResultSet([{"x": 2}, {"x": 1}], ordered=True)
    assert compare_results(a, b) is Comparison.VALUES_DIFFER
    assert compare_results(a, ResultSet(b.docs)) is Comparison.EQUAL


def test_compare_key_order_ignored():
    assert compare_results(ResultSet([{"a": 1, "b": 2}]), ResultSet([{"b": 2, "a": 1}])) is Comparison.EQUAL


@pytest.mark.parametrize("a,b,expected", [
    ([{"x": 1}], [{"x": 2}], Comparison.VALUES_DIFFER),
    ([{"x": 1}], [{"y": 1}], Comparison.FIELDS_DIFFER),
    ([{"x": 1, "z": 0}], [{"y": 1, "z": 5}], Comparison.BOTH_DIFFER),
    ([{"x": 1}], [{"x": 1}, {"x": 1}], Comparison.BOTH_DIFFER),
    ([{"x": True}], [{"x": 1}], Comparison.VALUES_DIFFER),
])
def test_compare_classification(a, b, expected):
    assert compare_results(ResultSet(a), ResultSet(b)) is expected


# -- properties ------------------------------------------------------------------------------


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 8))
def test_limit_bounds_output(seed, n):
    import random
    db = fuzzgen.database(random.Random(seed))
    res = execute_query(db, QueryAst("c", Method.AGGREGATE, pipeline=(Stage("$limit", n),)))
    assert len(res) <= n


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 10**6))
def test_count_is_single_document(seed):
    import random
    rng = random.Random(seed)
    db, q = fuzzgen.database(rng), fuzzgen.query(rng)
    if q.is_find:
        return
    try:
        res = execute_query(db, QueryAst("c", Method.AGGREGATE, pipeline=q.pipeline + (Stage("$count", "n"),)))
    except (InvalidQuery, UnsupportedOperator, TypeMismatch):
        return
    assert len(res) == 1


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10**6))
def test_match_never_grows_and_conjoins(seed):
    import random
    rng = random.Random(seed)
    db = fuzzgen.database(rng)
    f1, f2 = fuzzgen.filter_doc(rng), fuzzgen.filter_doc(rng)
    base = execute_query(db, QueryAst("c", Method.AGGREGATE, pipeline=()))
    chained = execute_query(db, QueryAst("c", Method.AGGREGATE, pipeline=(Stage("$match", f1), Stage("$match", f2))))
    single = execute_query(db, QueryAst("c", Method.AGGREGATE, pipeline=(Stage("$match", {"$and": [f1, f2]}),)))
    once = execute_query(db, QueryAst("c", Method.AGGREGATE, pipeline=(Stage("$match", f1),)))
    assert len(chained) <= len(once) <= len(base)
    assert chained.docs == single.docs


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**6))
def test_group_null_key_over_nonempty(seed):
    import random
    db = fuzzgen.database(random.Random(seed))
    res = execute_query(db, QueryAst("c", Method.AGGREGATE, pipeline=(Stage("$group", {"_id": None}),)))
    assert len(res) == (1 if db.collection("c") else 0)


def test_empty_collection_oracle():
    db = database_from_mapping("t", {"c": [], "d": [{"x": 1}]})
    for seed in range(50):
        import random
        q = fuzzgen.query(random.Random(seed))
        if any(s.operator in ("$lookup", "$count", "$group") for s in q.pipeline):
            continue
        assert oracle_execute(db, q).docs == []


def test_oracle_people_by_hand():
    db = database_from_mapping("t", PEOPLE_DB)
    res = oracle_execute(db, parse_query(PEOPLE))
    assert sorted(d["count"] for d in res.docs) == [1, 2]
