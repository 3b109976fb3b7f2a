"""A deliberately plain second interpreter, used to cross-check the executor.

Nothing here is imported from the executor or the value helpers: equality,
ordering and path lookup are rewritten from scratch as direct loops, and
sorting is an insertion sort. Only the error classes and data containers are
shared, so both interpreters raise the same kinds of failure.
"""

from __future__ import annotations

import re

from ..errors import InvalidQuery, TypeMismatch, UnknownCollection, UnsupportedOperator
from .database import ResultSet

NOTHING = object()  # absent field


# -- value basics ---------------------------------------------------------


def _num(v):
    return type(v) in (int, float)


def _rank(v):
    if v is None or v is NOTHING:
        return 0
    if type(v) is bool:
        return 5
    if _num(v):
        return 1
    if type(v) is str:
        return 2
    if type(v) is dict:
        return 3
    if type(v) is list:
        return 4
    raise TypeError(v)


def same(a, b):
    if a is NOTHING or b is NOTHING:
        return a is b
    ra, rb = _rank(a), _rank(b)
    if ra != rb:
        return False
    if ra == 0:
        return True
    if ra in (1, 5):
        if a != a and b != b:
            return True
        return a == b
    if ra == 2:
        return a == b
    if ra == 4:
        if len(a) != len(b):
            return False
        for i in range(len(a)):
            if not same(a[i], b[i]):
                return False
        return True
    if set(a) != set(b):
        return False
    for k in a:
        if not same(a[k], b[k]):
            return False
    return True


def order(a, b):
    ra, rb = _rank(a), _rank(b)
    if ra < rb:
        return -1
    if ra > rb:
        return 1
    if ra == 0:
        return 0
    if ra in (1, 5):
        an, bn = a != a, b != b
        if an and bn:
            return 0
        if an:
            return -1
        if bn:
            return 1
        return -1 if a < b else (1 if a > b else 0)
    if ra == 2:
        return -1 if a < b else (1 if a > b else 0)
    if ra == 3:
        ka, kb = list(a), list(b)
        for i in range(min(len(ka), len(kb))):
            if ka[i] != kb[i]:
                return -1 if ka[i] < kb[i] else 1
            c = order(a[ka[i]], b[kb[i]])
            if c != 0:
                return c
        return -1 if len(ka) < len(kb) else (1 if len(ka) > len(kb) else 0)
    for i in range(min(len(a), len(b))):
        c = order(a[i], b[i])
        if c != 0:
            return c
    return -1 if len(a) < len(b) else (1 if len(a) > len(b) else 0)


def truthy(v):
    if v is NOTHING or v is None or v is False:
        return False
    if _num(v):
        return v != 0
    return True


# -- lookups ----------------------------------------------------------------


def get_agg(v, path):
    """Aggregation field path: arrays are mapped element by element."""
    segs = path.split(".")
    cur = v
    for i in range(len(segs)):
        if type(cur) is dict:
            if segs[i] not in cur:
                return NOTHING
            cur = cur[segs[i]]
        elif type(cur) is list:
            rest = ".".join(segs[i:])
            res = []
            for e in cur:
                if type(e) in (dict, list):
                    got = get_agg(e, rest)
                    if got is not NOTHING:
                        res.append(got)
            return res
        else:
            return NOTHING
    return cur


def get_query(v, segs):
    """Query field path: every value found, stepping into arrays of documents."""
    if not segs:
        return [v]
    if type(v) is dict:
        if segs[0] in v:
            return get_query(v[segs[0]], segs[1:])
        return []
    if type(v) is list:
        res = []
        for e in v:
            if type(e) is dict:
                res = res + get_query(e, segs)
        return res
    return []


def get_plain(v, segs):
    for s in segs:
        if type(v) is not dict or s not in v:
            return NOTHING
        v = v[s]
    return v


def put_plain(doc, segs, value):
    new = {}
    for k in doc:
        new[k] = doc[k]
    if len(segs) == 1:
        if value is NOTHING:
            if segs[0] in new:
                del new[segs[0]]
        else:
            new[segs[0]] = value
        return new
    inner = new.get(segs[0])
    if type(inner) is not dict:
        inner = {}
    new[segs[0]] = put_plain(inner, segs[1:], value)
    return new


def segments(path):
    if not path:
        raise InvalidQuery("empty path")
    return path.split(".")


# -- expressions -------------------------------------------------------------


def _two(op, arg):
    if type(arg) is not list or len(arg) != 2:
        raise InvalidQuery(op + " takes 2 arguments")
    return arg


def ex_compare(a, b):
    if a is NOTHING and b is NOTHING:
        return 0
    if a is NOTHING:
        return -1
    if b is NOTHING:
        return 1
    return order(a, b)


def expr(e, doc, env):
    if type(e) is str:
        if e[:2] == "$$":
            name = e[2:].split(".")[0]
            tail = e[2 + len(name) + 1:]
            if name == "ROOT" or name == "CURRENT":
                base = doc
            elif name in env:
                base = env[name]
            else:
                raise InvalidQuery("undefined variable " + name)
            if tail:
                return get_agg(base, tail)
            return base
        if e[:1] == "$":
            return get_agg(doc, e[1:])
        return e
    if type(e) is list:
        out = []
        for x in e:
            r = expr(x, doc, env)
            out.append(None if r is NOTHING else r)
        return out
    if type(e) is dict:
        keys = list(e)
        if len(keys) == 1 and keys[0][:1] == "$":
            return operator(keys[0], e[keys[0]], doc, env)
        for k in keys:
            if k[:1] == "$":
                raise InvalidQuery("mixed expression object")
        out = {}
        for k in keys:
            r = expr(e[k], doc, env)
            if r is not NOTHING:
                out[k] = r
        return out
    return e


def operator(op, arg, doc, env):
    if op == "$literal":
        return arg
    if op in ("$eq", "$ne", "$gt", "$gte", "$lt", "$lte", "$cmp"):
        a, b = _two(op, arg)
        a, b = expr(a, doc, env), expr(b, doc, env)
        if op == "$eq":
            return same(a, b)
        if op == "$ne":
            return not same(a, b)
        c = ex_compare(a, b)
        if op == "$cmp":
            return c
        return {"$gt": c > 0, "$gte": c >= 0, "$lt": c < 0, "$lte": c <= 0}[op]
    args = arg if type(arg) is list else [arg]
    if op == "$and":
        for a in args:
            if not truthy(expr(a, doc, env)):
                return False
        return True
    if op == "$or":
        for a in args:
            if truthy(expr(a, doc, env)):
                return True
        return False
    if op == "$not":
        if len(args) != 1:
            raise InvalidQuery("$not takes 1 argument")
        return not truthy(expr(args[0], doc, env))
    if op in ("$add", "$multiply", "$subtract", "$divide"):
        if op in ("$subtract", "$divide") and len(args) != 2:
            raise InvalidQuery(op + " takes 2 arguments")
        vals = [expr(a, doc, env) for a in args]
        for v in vals:
            if v is None or v is NOTHING:
                return None
        for v in vals:
            if not _num(v):
                raise TypeMismatch(op + " needs numbers")
        if op == "$add":
            total = 0
            for v in vals:
                total = total + v
            return total
        if op == "$multiply":
            total = 1
            for v in vals:
                total = total * v
            return total
        if op == "$subtract":
            return vals[0] - vals[1]
        if vals[1] == 0:
            raise TypeMismatch("division by zero")
        return vals[0] / vals[1]
    if op == "$size":
        if len(args) != 1:
            raise InvalidQuery("$size takes 1 argument")
        v = expr(args[0], doc, env)
        if type(v) is not list:
            raise TypeMismatch("$size needs an array")
        return len(v)
    if op == "$concat":
        vals = [expr(a, doc, env) for a in args]
        for v in vals:
            if v is None or v is NOTHING:
                return None
        for v in vals:
            if type(v) is not str:
                raise TypeMismatch("$concat needs strings")
        return "".join(vals)
    if op in ("$toLower", "$toUpper"):
        if len(args) != 1:
            raise InvalidQuery(op + " takes 1 argument")
        v = expr(args[0], doc, env)
        if v is None or v is NOTHING:
            return ""
        if type(v) is not str:
            raise TypeMismatch(op + " needs a string")
        return v.lower() if op == "$toLower" else v.upper()
    if op == "$ifNull":
        a, b = _two(op, arg)
        v = expr(a, doc, env)
        if v is None or v is NOTHING:
            return expr(b, doc, env)
        return v
    if op == "$cond":
        if type(arg) is dict:
            if "if" not in arg or "then" not in arg or "else" not in arg:
                raise InvalidQuery("$cond incomplete")
            c, t, f = arg["if"], arg["then"], arg["else"]
        else:
            if len(args) != 3:
                raise InvalidQuery("$cond takes 3 arguments")
            c, t, f = args
        return expr(t, doc, env) if truthy(expr(c, doc, env)) else expr(f, doc, env)
    if op == "$in":
        a, b = _two(op, arg)
        needle, hay = expr(a, doc, env), expr(b, doc, env)
        if type(hay) is not list:
            raise TypeMismatch("$in needs an array")
        for h in hay:
            if same(needle, h):
                return True
        return False
    raise UnsupportedOperator(op, "expression operator")


# -- filters --------------------------------------------------------------------


def _flat(found):
    res = []
    for v in found:
        res.append(v)
        if type(v) is list:
            for x in v:
                res.append(x)
    return res


def _equals_any(found, target):
    if target is None and len(found) == 0:
        return True
    for v in _flat(found):
        if same(v, target):
            return True
    return False


def _cond(found, cond, env):
    for op in cond:
        arg = cond[op]
        if op == "$options":
            if "$regex" not in cond:
                raise InvalidQuery("$options without $regex")
            continue
        if op == "$eq":
            ok = _equals_any(found, arg)
        elif op == "$ne":
            ok = not _equals_any(found, arg)
        elif op in ("$gt", "$gte", "$lt", "$lte"):
            ok = False
            for v in _flat(found):
                if _rank(v) != _rank(arg):
                    continue
                c = order(v, arg)
                if (op == "$gt" and c > 0) or (op == "$gte" and c >= 0) or (op == "$lt" and c < 0) or (op == "$lte" and c <= 0):
                    ok = True
                    break
        elif op in ("$in", "$nin"):
            if type(arg) is not list:
                raise InvalidQuery(op + " needs an array")
            hit = False
            for t in arg:
                if _equals_any(found, t):
                    hit = True
                    break
            ok = hit if op == "$in" else not hit
        elif op == "$exists":
            ok = (len(found) > 0) == truthy(arg)
        elif op == "$size":
            if not _num(arg):
                raise InvalidQuery("$size needs a number")
            ok = False
            for v in found:
                if type(v) is list and len(v) == arg:
                    ok = True
        elif op == "$regex":
            if type(arg) is not str:
                raise InvalidQuery("$regex needs a string")
            opts = cond.get("$options")
            flags = 0
            if opts is not None:
                if type(opts) is not str or any(ch != "i" for ch in opts):
                    raise UnsupportedOperator("$options", "only i")
                if "i" in opts:
                    flags = re.IGNORECASE
            try:
                rx = re.compile(arg, flags)
            except re.error:
                raise InvalidQuery("bad pattern") from None
            ok = False
            for v in _flat(found):
                if type(v) is str and rx.search(v):
                    ok = True
                    break
        elif op == "$not":
            if type(arg) is not dict or not arg:
                raise InvalidQuery("$not needs an operator object")
            ok = not _cond(found, arg, env)
        else:
            raise UnsupportedOperator(op, "query operator")
        if not ok:
            return False
    return True


def passes(doc, flt, env):
    if type(flt) is not dict:
        raise InvalidQuery("filter must be an object")
    for key in flt:
        val = flt[key]
        if key in ("$and", "$or", "$nor"):
            if type(val) is not list or not val:
                raise InvalidQuery(key + " needs a nonempty array")
            hits = [passes(doc, sub, env) for sub in val]
            if key == "$and":
                ok = all(hits)
            elif key == "$or":
                ok = any(hits)
            else:
                ok = not any(hits)
        elif key == "$expr":
            ok = truthy(expr(val, doc, env))
        elif key[:1] == "$":
            raise UnsupportedOperator(key, "top-level query operator")
        else:
            found = get_query(doc, segments(key))
            if type(val) is dict and val and any(k[:1] == "$" for k in val):
                for k in val:
                    if k[:1] != "$":
                        raise InvalidQuery("mixed condition")
                ok = _cond(found, val, env)
            else:
                ok = _equals_any(found, val)
        if not ok:
            return False
    return True


# -- projection -------------------------------------------------------------------


def _flag(v):
    if type(v) is bool:
        return v
    if _num(v):
        return v != 0
    return None


def _spec_items(spec, prefix=""):
    res = []
    for k in spec:
        v = spec[k]
        if type(v) is dict and v and not any(x[:1] == "$" for x in v):
            res = res + _spec_items(v, prefix + k + ".")
        else:
            res.append((prefix + k, v))
    return res


def _pick(src, segs):
    """The part of ``src`` reached by an inclusion path, or NOTHING."""
    if type(src) is dict:
        if segs[0] not in src:
            return NOTHING
        if len(segs) == 1:
            return {segs[0]: src[segs[0]]}
        inner = src[segs[0]]
        if type(inner) is dict:
            got = _pick(inner, segs[1:])
            return {segs[0]: {} if got is NOTHING else got}
        if type(inner) is list:
            res = []
            for e in inner:
                if type(e) is dict:
                    got = _pick(e, segs[1:])
                    res.append({} if got is NOTHING else got)
            return {segs[0]: res}
        return NOTHING
    return NOTHING


def _merge(a, b):
    """Deep merge of two picked fragments with identical shape."""
    if type(a) is dict and type(b) is dict:
        out = {}
        for k in a:
            out[k] = a[k]
        for k in b:
            out[k] = _merge(out[k], b[k]) if k in out else b[k]
        return out
    if type(a) is list and type(b) is list:
        return [_merge(a[i], b[i]) for i in range(len(a))]
    return b


def _place(src, segs, value):
    """Write a computed value at a dotted path, mapping over arrays in ``src``."""
    if len(segs) == 1:
        return {segs[0]: value} if value is not NOTHING else {}
    inner = src.get(segs[0], NOTHING) if type(src) is dict else NOTHING
    if type(inner) is list:
        return {segs[0]: [_place(e, segs[1:], value) for e in inner if type(e) is dict]}
    if type(inner) is dict:
        return {segs[0]: _place(inner, segs[1:], value)}
    return {segs[0]: _place({}, segs[1:], value)}


def _drop(v, segs):
    if type(v) is list:
        return [_drop(e, segs) if type(e) is dict else e for e in v]
    if type(v) is not dict or segs[0] not in v:
        return v
    out = {}
    for k in v:
        if k == segs[0]:
            if len(segs) > 1:
                out[k] = _drop(v[k], segs[1:])
        else:
            out[k] = v[k]
    return out


def project(doc, spec, env):
    if type(spec) is not dict or not spec:
        raise InvalidQuery("projection must be a nonempty object")
    items = _spec_items(spec)
    incl, excl = [], []
    id_rule = "keep"
    id_expr = None
    id_named = False
    for path, v in items:
        f = _flag(v)
        if path == "_id":
            if f is False:
                id_rule = "drop"
            else:
                id_named = True
                if f is None:
                    id_rule, id_expr = "compute", v
        elif f is False:
            excl.append(path)
        else:
            incl.append((path, f))
    for i in range(len(incl)):
        for j in range(len(incl)):
            a, b = incl[i][0], incl[j][0]
            if i != j and (a == b or b.startswith(a + ".")):
                raise InvalidQuery("projection path collision")
    if incl and excl:
        raise InvalidQuery("projection cannot mix inclusion and exclusion")
    if excl or not (incl or id_named):
        if id_rule == "compute":
            raise InvalidQuery("computed _id requires inclusion")
        out = doc
        if id_rule == "drop":
            out = _drop(out, ["_id"])
        for p in excl:
            out = _drop(out, segments(p))
        return out
    out = {}
    if id_rule == "keep" and "_id" in doc:
        out["_id"] = doc["_id"]
    elif id_rule == "compute":
        r = expr(id_expr, doc, env)
        if r is not NOTHING:
            out["_id"] = r
    for path, f in incl:
        segs = segments(path)
        if f:
            frag = _pick(doc, segs)
        else:
            frag = _place(doc, segs, expr(spec_value(spec, path), doc, env))
        if frag is not NOTHING:
            out = _merge(out, frag)
    return out


def spec_value(spec, path):
    for p, v in _spec_items(spec):
        if p == path:
            return v
    raise KeyError(path)


# -- stages -------------------------------------------------------------------------


def unwind(docs, body):
    keep_empty = False
    if type(body) is dict:
        for k in body:
            if k not in ("path", "preserveNullAndEmptyArrays"):
                raise UnsupportedOperator("$unwind", "option " + k)
        path = body.get("path")
        keep_empty = bool(body.get("preserveNullAndEmptyArrays", False))
    else:
        path = body
    if type(path) is not str or path[:1] != "$" or path[:2] == "$$":
        raise InvalidQuery("bad $unwind path")
    segs = segments(path[1:])
    res = []
    for d in docs:
        v = get_plain(d, segs)
        if type(v) is list:
            if v:
                for e in v:
                    res.append(put_plain(d, segs, e))
            elif keep_empty:
                res.append(put_plain(d, segs, NOTHING))
        elif v is None or v is NOTHING:
            if keep_empty:
                res.append(d)
        else:
            res.append(d)
    return res


def group(docs, body, env):
    if type(body) is not dict or "_id" not in body:
        raise InvalidQuery("$group needs _id")
    accs = []
    for name in body:
        if name == "_id":
            continue
        spec = body[name]
        if type(spec) is not dict or len(spec) != 1:
            raise InvalidQuery("bad accumulator")
        op = list(spec)[0]
        if op not in ("$sum", "$avg", "$min", "$max", "$push", "$addToSet", "$first", "$last"):
            raise UnsupportedOperator(op, "group accumulator")
        accs.append((name, op, spec[op]))
    keys, members = [], []
    for d in docs:
        k = expr(body["_id"], d, env)
        if k is NOTHING:
            k = None
        slot = -1
        for i in range(len(keys)):
            if same(keys[i], k):
                slot = i
                break
        if slot < 0:
            keys.append(k)
            members.append([])
            slot = len(keys) - 1
        members[slot].append(d)
    res = []
    for i in range(len(keys)):
        row = {"_id": keys[i]}
        for name, op, arg in accs:
            vals = [expr(arg, d, env) for d in members[i]]
            row[name] = accumulate(op, vals)
        res.append(row)
    return res


def accumulate(op, vals):
    if op in ("$sum", "$avg"):
        total, n = 0, 0
        for v in vals:
            if _num(v):
                total = total + v
                n += 1
        if op == "$sum":
            return total
        return total / n if n else None
    if op in ("$min", "$max"):
        best = NOTHING
        for v in vals:
            if v is None or v is NOTHING:
                continue
            if best is NOTHING:
                best = v
            elif op == "$min" and order(v, best) < 0:
                best = v
            elif op == "$max" and order(v, best) > 0:
                best = v
        return None if best is NOTHING else best
    if op == "$push":
        return [v for v in vals if v is not NOTHING]
    if op == "$addToSet":
        res = []
        for v in vals:
            if v is NOTHING:
                continue
            if not any(same(v, r) for r in res):
                res.append(v)
        return res
    if not vals:
        return None
    v = vals[0] if op == "$first" else vals[-1]
    return None if v is NOTHING else v


def sort(docs, body):
    if type(body) is not dict or not body:
        raise InvalidQuery("bad sort")
    keys = []
    for p in body:
        if body[p] not in (1, -1) or type(body[p]) is bool:
            raise InvalidQuery("bad sort direction")
        keys.append((p, int(body[p])))
    segs_keys = [(segments(p), d) for p, d in keys]

    def before(a, b):
        for segs, d in segs_keys:
            c = order(_none(get_agg(a, ".".join(segs))), _none(get_agg(b, ".".join(segs))))
            if c != 0:
                return c * d < 0
        return False

    res = []
    for d in docs:
        i = len(res)
        while i > 0 and before(d, res[i - 1]):
            i -= 1
        res.insert(i, d)
    return res


def _none(v):
    return None if v is NOTHING else v


def _count_arg(op, v, zero_ok):
    if type(v) is bool or not _num(v) or int(v) != v or v < (0 if zero_ok else 1):
        raise InvalidQuery(op + " needs an integer")
    return int(v)


def lookup(docs, body, db, env):
    if type(body) is not dict:
        raise InvalidQuery("$lookup needs an object")
    for k in body:
        if k not in ("from", "localField", "foreignField", "as", "let", "pipeline"):
            raise UnsupportedOperator("$lookup", "option " + k)
    src, dest = body.get("from"), body.get("as")
    if type(src) is not str or type(dest) is not str or not dest:
        raise InvalidQuery("$lookup needs from and as")
    lf, ff = body.get("localField"), body.get("foreignField")
    by_key = lf is not None or ff is not None
    if by_key and (type(lf) is not str or type(ff) is not str):
        raise InvalidQuery("localField and foreignField go together")
    sub = body.get("pipeline")
    if not by_key and sub is None:
        raise InvalidQuery("$lookup needs a join condition")
    if sub is not None and type(sub) is not list:
        raise InvalidQuery("$lookup pipeline must be an array")
    let = body.get("let", {})
    if type(let) is not dict:
        raise InvalidQuery("$lookup let must be an object")
    for s in sub or []:
        if type(s) is not dict or len(s) != 1:
            raise InvalidQuery("bad stage")
    others = db.collections.get(src, [])
    res = []
    for d in docs:
        joined = []
        if by_key:
            lv = get_agg(d, lf)
            wanted = lv if type(lv) is list else [lv]
            wanted = [None if w is NOTHING else w for w in wanted]
            if not wanted:
                wanted = [None]
            fsegs = segments(ff)
            for o in others:
                found = get_query(o, fsegs)
                for w in wanted:
                    if _equals_any(found, w):
                        joined.append(o)
                        break
        else:
            joined = list(others)
        if sub:
            scope = dict(env)
            for name in let:
                scope[name] = expr(let[name], d, env)
            joined = stages(db, joined, [(list(s)[0], s[list(s)[0]]) for s in sub], scope)
        res.append(put_plain(d, segments(dest), joined))
    return res


def stages(db, docs, pipeline, env):
    for op, body in pipeline:
        if op == "$match":
            docs = [d for d in docs if passes(d, body, env)]
        elif op == "$project":
            docs = [project(d, body, env) for d in docs]
        elif op == "$unwind":
            docs = unwind(docs, body)
        elif op == "$group":
            docs = group(docs, body, env)
        elif op == "$sort":
            docs = sort(docs, body)
        elif op == "$limit":
            docs = docs[:_count_arg(op, body, False)]
        elif op == "$skip":
            docs = docs[_count_arg(op, body, True):]
        elif op == "$count":
            if type(body) is not str or not body or body[:1] == "$" or "." in body:
                raise InvalidQuery("bad $count name")
            docs = [{body: len(docs)}]
        elif op == "$lookup":
            docs = lookup(docs, body, db, env)
        else:
            raise UnsupportedOperator(op, "pipeline stage")
    return docs


def oracle_execute(db, ast, strict=True) -> ResultSet:
    if ast.collection in db.collections:
        docs = list(db.collections[ast.collection])
    elif strict:
        raise UnknownCollection(ast.collection)
    else:
        docs = []
    fc = ast.find_clauses
    if fc is not None:
        docs = [d for d in docs if passes(d, fc.filter, {})]
        if fc.sort is not None:
            docs = sort(docs, fc.sort)
        if fc.limit:
            docs = docs[:abs(fc.limit)]
        if fc.projection is not None:
            docs = [project(d, fc.projection, {}) for d in docs]
        return ResultSet(docs, ordered=fc.sort is not None)
    pipeline = [(s.operator, s.body) for s in ast.pipeline]
    docs = stages(db, docs, pipeline, {})
    return ResultSet(docs, ordered=any(op == "$sort" for op, _ in pipeline))
