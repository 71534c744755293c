"""Best-effort conversion of DBMS ``EXPLAIN (ANALYZE, FORMAT JSON)`` output to canonical plans."""

from __future__ import annotations

import json
import re

from .plan import PlanTree, Source, parse_plan

_OPS = {"=": "EQ", "<": "LT", ">": "GT", "<=": "LE", ">=": "GE"}
_ATOM = re.compile(r"^\s*([A-Za-z_][\w.]*)\s*(<=|>=|=|<|>)\s*(.+?)\s*$")
_IDENT = re.compile(r"^[A-Za-z_]\w*(\.[A-Za-z_]\w*)?$")
_NUM = re.compile(r"^'?(-?\d+(\.\d+)?)'?(::\w+( \w+)*)?$")
_STR = re.compile(r"^'(.*)'(::[\w ]+)?$")
_JOIN_TYPES = ("Hash Join", "Merge Join", "Nested Loop")


class AdapterError(ValueError):
    pass


def _strip_parens(s: str) -> str:
    s = s.strip()
    while s.startswith("(") and s.endswith(")"):
        depth = 0
        for i, ch in enumerate(s):
            depth += ch == "("
            depth -= ch == ")"
            if depth == 0 and i < len(s) - 1:
                return s
        s = s[1:-1].strip()
    return s


def split_conjuncts(cond: str) -> list[str]:
    s = _strip_parens(cond)
    parts, depth, start, i = [], 0, 0, 0
    while i < len(s):
        ch = s[i]
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        elif depth == 0 and s.startswith(" AND ", i):
            parts.append(s[start:i])
            start = i + 5
            i += 4
        i += 1
    parts.append(s[start:])
    return [_strip_parens(p) for p in parts if p.strip()]


def _qualify(col: str, alias: str | None) -> str:
    return col if "." in col or not alias else f"{alias}.{col}"


def parse_condition(cond: str, alias: str | None):
    """Split a condition into (predicates, join_key_pairs). Unparseable atoms become opaque."""
    preds, joins = [], []
    for atom in split_conjuncts(cond):
        m = _ATOM.match(atom)
        if m:
            lhs, op, rhs = m.groups()
            rhs = _strip_parens(rhs)
            num = _NUM.match(rhs)
            if num:
                v = float(num.group(1))
                preds.append({"column": _qualify(lhs, alias), "op": _OPS[op],
                              "value": int(v) if v.is_integer() else v})
                continue
            sm = _STR.match(rhs)
            if sm:
                preds.append({"column": _qualify(lhs, alias), "op": _OPS[op], "value": sm.group(1)})
                continue
            if op == "=" and _IDENT.match(rhs):
                joins.append((_qualify(lhs, alias), _qualify(rhs, alias)))
                continue
        preds.append({"column": "", "op": "EQ", "value": None, "raw": atom})
    return preds, joins


def _convert(node: dict, ids) -> dict:
    if not isinstance(node, dict) or "Node Type" not in node:
        raise AdapterError("plan node without 'Node Type'")
    alias = node.get("Alias") or node.get("Relation Name")
    loops = node.get("Actual Loops", 1) or 1
    filters, join_keys = [], None
    for key in ("Filter", "Index Cond", "Join Filter"):
        if key in node:
            p, j = parse_condition(node[key], alias)
            filters += p
            if j and join_keys is None:
                join_keys = list(j[0])
    for key in ("Hash Cond", "Merge Cond"):
        if key in node:
            _, j = parse_condition(node[key], alias)
            if j:
                join_keys = list(j[0])
    out = {
        "node_id": next(ids),
        "node_type": node["Node Type"],
        "filters": filters,
        "is_subquery_of_sibling": False,
        "est_rows": max(1.0, float(node.get("Plan Rows", 1))),
        "children": [],
        "_alias": alias,
    }
    if node.get("Relation Name"):
        out["relation"] = node["Relation Name"]
    if join_keys:
        out["join_keys"] = join_keys
    if "Total Cost" in node:
        out["est_cost"] = float(node["Total Cost"])
    if "Actual Total Time" in node:
        out["actual_time_ms"] = float(node["Actual Total Time"]) * loops
    if "Actual Rows" in node:
        out["actual_rows"] = int(round(float(node["Actual Rows"]) * loops))
    out["children"] = [_convert(c, ids) for c in node.get("Plans", [])]
    return out


def _chain_bottom(doc: dict) -> dict:
    while len(doc["children"]) == 1:
        doc = doc["children"][0]
    return doc


def _mark_subqueries(doc: dict):
    """Inner child of a join is a subquery when its scan is parameterized by the outer side."""
    kids = doc["children"]
    if doc["node_type"] in _JOIN_TYPES and len(kids) == 2:
        inner = _chain_bottom(kids[1])
        outer_aliases = {n["_alias"] for n in _walk(kids[0]) if n["_alias"]}
        jk = inner.get("join_keys")
        if not inner["children"] and jk and any(k.split(".", 1)[0] in outer_aliases for k in jk):
            kids[1]["is_subquery_of_sibling"] = True
    for c in kids:
        _mark_subqueries(c)


def _walk(doc):
    yield doc
    for c in doc["children"]:
        yield from _walk(c)


def adapt_explain(doc) -> dict:
    """Map an EXPLAIN JSON document (text, list or dict) to a canonical plan document."""
    if isinstance(doc, (str, bytes)):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as e:
            raise AdapterError(f"not JSON: {e}") from None
    if isinstance(doc, list):
        if not doc:
            raise AdapterError("empty EXPLAIN document")
        doc = doc[0]
    if not isinstance(doc, dict):
        raise AdapterError("unrecognized top-level shape")
    plan = doc.get("Plan", doc if "Node Type" in doc else None)
    if plan is None:
        raise AdapterError("unrecognized top-level shape: no 'Plan'")
    out = _convert(plan, iter(range(1 << 30)))
    _mark_subqueries(out)
    for n in _walk(out):
        del n["_alias"]
    out["source"] = Source.ADAPTER.value
    return out


def explain_to_tree(doc) -> PlanTree:
    return parse_plan(adapt_explain(doc))
