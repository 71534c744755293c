"""Train on a synthetic workload and compare against the optimizer's own cost.

Usage: python3 demos/02_train_and_evaluate.py [n_plans] [epochs]
Defaults (2000 plans, 10 epochs) take a couple of minutes on one core.
"""

import sys
import time

from fasco.calibration import LookupStore, build_lookup_list
from fasco.estimator import TrainConfig, estimate, train
from fasco.metrics import fit_cost_scale, q_error, summarize
from fasco.synth import SynthSpec, gen_catalog, gen_workload

n_plans = int(sys.argv[1]) if len(sys.argv) > 1 else 2000
epochs = int(sys.argv[2]) if len(sys.argv) > 2 else 10

catalog, tables = gen_catalog(SynthSpec(rho=0.8, seed=0))
print("tables:", catalog.tables)
plans = gen_workload(catalog, tables, n_plans, seed=0)
half = len(plans) // 2
train_set, test_set = plans[:half], plans[half:]

lists = LookupStore(build_lookup_list(tables, pair, seed=i)
                    for i, pair in enumerate(catalog.join_pairs))
print(f"{len(lists)} lookup lists, {sum(ll.nbytes for ll in lists) / 1e6:.1f} MB total")

t0 = time.perf_counter()
params, trace = train(train_set, catalog, lists, TrainConfig(epochs=epochs))
print(f"trained {params.n_params()} parameters in {time.perf_counter() - t0:.0f}s")
print("mean loss per epoch:", " ".join(f"{x:.2f}" for x in trace))

ours = summarize([q_error(estimate(params, p, catalog, lists)[0], p.root.actual_time_ms)
                  for p in test_set])
scale = fit_cost_scale([p.root.est_cost for p in train_set],
                       [p.root.actual_time_ms for p in train_set])
base = summarize([q_error(scale * p.root.est_cost, p.root.actual_time_ms) for p in test_set])
print("\n         ", "  ".join(f"{k:>7}" for k in ("mean", "p50", "p90", "p99", "max")))
for name, s in (("model", ours), ("baseline", base)):
    print(f"{name:<9}", "  ".join(f"{v:7.2f}" for v in (s.mean, s.p50, s.p90, s.p99, s.max)))
