"""Walk through cardinality calibration on one hand-built plan.

A filtered scan of ``title`` joins ``cast_info``; the optimizer guesses 200
rows for the join, and 500 for the join above it. A lookup list sampled at
1/100 holds 239 qualifying rows, so the join is really ~24k rows.
"""

import numpy as np

from fasco.calibration import LookupList, LookupStore, apply_calibration, pair_key
from fasco.plan import parse_plan

plan = parse_plan({
    "node_type": "Hash Join", "est_rows": 500, "join_keys": ["t.id", "mc.movie_id"],
    "children": [
        {"node_type": "Hash Join", "est_rows": 200, "join_keys": ["t.id", "ci.movie_id"],
         "children": [
             {"node_type": "Seq Scan", "relation": "t", "est_rows": 1000,
              "filters": [{"column": "t.kind_id", "op": "EQ", "value": 1}]},
             {"node_type": "Seq Scan", "relation": "ci", "est_rows": 3000}]},
        {"node_type": "Seq Scan", "relation": "mc", "est_rows": 2000},
    ],
})

# 300 sampled join rows, 239 with kind_id = 1, sampling rate 1/100
kind = np.zeros((300, 1), dtype=np.int64)
kind[:239] = 1
store = LookupStore([LookupList(pair_key(("t", "t.id"), ("ci", "ci.movie_id")),
                                ("t.kind_id",), kind, p=100.0)])

calibrated, report = apply_calibration(plan, store)
for e in report.entries:
    print(f"merge node {e.node_id}: sampled count {e.c}, rate 1/{e.p:g}, "
          f"estimate {e.c_tilde:g} -> factor {e.factor:g}")
    print(f"  scaled nodes: {sorted(e.related)}")

print("\nnode                  estimate   calibrated")
for before, after in zip(plan.nodes(), calibrated.nodes()):
    name = f"{after.operator} {after.relation or ''}".strip()
    print(f"{after.node_id:>2} {name:<18} {before.est_rows:>9g} {after.calibrated_rows:>12g}")
