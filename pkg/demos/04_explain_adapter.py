"""Turn a DBMS EXPLAIN (ANALYZE, FORMAT JSON) document into a canonical plan."""

import json

from fasco.explain import adapt_explain
from fasco.plan import merge_unary, parse_plan, post_order

explain = [{"Plan": {
    "Node Type": "Aggregate", "Plan Rows": 1, "Actual Rows": 1, "Actual Loops": 1,
    "Actual Total Time": 31.0, "Total Cost": 900.0,
    "Plans": [{
        "Node Type": "Nested Loop", "Plan Rows": 40, "Actual Rows": 2200, "Actual Loops": 1,
        "Actual Total Time": 30.2, "Total Cost": 880.0,
        "Plans": [
            {"Node Type": "Seq Scan", "Relation Name": "title", "Alias": "t", "Plan Rows": 20,
             "Actual Rows": 110, "Actual Loops": 1, "Actual Total Time": 9.5, "Total Cost": 400.0,
             "Filter": "((kind_id = 1) AND (title ~~ '%Star%'::text))"},
            {"Node Type": "Index Scan", "Relation Name": "cast_info", "Alias": "ci",
             "Plan Rows": 2, "Actual Rows": 20, "Actual Loops": 110, "Actual Total Time": 0.18,
             "Total Cost": 24.0, "Index Cond": "(movie_id = t.id)"}]}]}}]

doc = adapt_explain(explain)
print(json.dumps(doc, indent=2)[:1200], "...\n")

tree = merge_unary(parse_plan(doc))
for n in post_order(tree):
    print(f"{n.node_id}: {n.operator:<12} rel={n.relation or '-':<10} est={n.est_rows:<6g} "
          f"actual={n.actual_rows:<6} ms={n.actual_time_ms:<7.2f} filters={len(n.filters)} "
          f"subquery={n.is_subquery_of_sibling}")
