"""Delete a fifth of every table, then refresh only the lookup lists.

The model is trained once. After the update, estimates use either the stale
lists or lists resampled from the new data; no retraining happens.
"""

from fasco.calibration import LookupStore, build_lookup_list
from fasco.estimator import TrainConfig, estimate, train
from fasco.metrics import q_error, summarize
from fasco.synth import SynthSpec, build_catalog, delete_rows, gen_catalog, gen_plans, relabel

N = 2000

catalog, tables = gen_catalog(SynthSpec(seed=0))
raw = gen_plans(catalog, tables, 2 * N, seed=0)
plans = relabel(raw, catalog, tables, seed=1)
lists = LookupStore(build_lookup_list(tables, pair, seed=i)
                    for i, pair in enumerate(catalog.join_pairs))
params, _ = train(plans[:N], catalog, lists, TrainConfig())


def mean_q(test, cat, store):
    return summarize([q_error(estimate(params, p, cat, store)[0], p.root.actual_time_ms)
                      for p in test]).mean


print(f"before update:             {mean_q(plans[N:], catalog, lists):.3f}")

tables2 = delete_rows(tables, 0.2, seed=7)
catalog2 = build_catalog(tables2)
test2 = relabel(raw[N:], catalog2, tables2, seed=2)
fresh = LookupStore(build_lookup_list(tables2, pair, seed=100 + i, version=1)
                    for i, pair in enumerate(catalog2.join_pairs))
print(f"after update, stale lists: {mean_q(test2, catalog2, lists):.3f}")
print(f"after update, new lists:   {mean_q(test2, catalog2, fresh):.3f}")
