"""Command-line entry point: ``fasco <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import persistence as io
from .calibration import DEFAULT_BUDGET, LookupStore, build_lookup_list, pair_key
from .estimator import NodeWeights, TrainConfig, estimate, train
from .explain import AdapterError, adapt_explain
from .metrics import fit_cost_scale, q_error, summarize
from .plan import PlanParseError, merge_unary, parse_plan, to_document
from .synth import SynthSpec, gen_catalog, gen_workload

log = logging.getLogger("fasco")


class CliError(Exception):
    pass


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("FASCO_THREADS", os.cpu_count() or 1)))
    except ValueError:
        raise CliError("FASCO_THREADS must be an integer") from None


def read_plans(path) -> list:
    """Plans from a JSONL file (one document per line) or a single JSON document."""
    text = Path(path).read_text(encoding="utf-8")
    lines = [l for l in text.splitlines() if l.strip()]
    try:
        if len(lines) > 1:
            return [parse_plan(l) for l in lines]
        return [parse_plan(text)]
    except PlanParseError as e:
        raise CliError(f"{path}: {e}") from None


def write_plans(plans, path):
    with open(path, "w", encoding="utf-8") as f:
        for p in plans:
            f.write(json.dumps(to_document(p), sort_keys=True) + "\n")


# ---------------------------------------------------------------------------


def cmd_gen_synth(a):
    if not 0.0 < a.split_ratio < 1.0:
        raise CliError("--split-ratio must be in (0, 1)")
    try:
        spec = SynthSpec(n_tables=a.n_tables, rho=a.rho, seed=a.seed)
    except ValueError as e:
        raise CliError(str(e)) from None
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    catalog, tables = gen_catalog(spec)
    plans = gen_workload(catalog, tables, a.n_plans, seed=a.seed)
    n_train = int(round(a.split_ratio * len(plans)))
    io.save_catalog(catalog, out / "catalog.json")
    io.save_tables(tables, out / "tables.npz")
    write_plans(plans[:n_train], out / "train.jsonl")
    write_plans(plans[n_train:], out / "test.jsonl")
    print(f"wrote {n_train} train / {len(plans) - n_train} test plans to {out}")


def cmd_build_lookups(a):
    catalog = io.load_catalog(a.catalog)
    tables = io.load_tables(a.tables)
    out = Path(a.out)
    old = io.load_lookup_store(out) if out.is_dir() else LookupStore()

    def build(i_pair):
        i, (ta, tb, keys) = i_pair
        pid = pair_key((ta, keys[0]), (tb, keys[1]))
        return build_lookup_list(tables, (ta, tb, keys), a.budget_bytes, seed=a.seed + i,
                                 version=old.version(pid) + 1)

    with ThreadPoolExecutor(_threads()) as ex:
        lists = list(ex.map(build, enumerate(catalog.join_pairs)))
    io.save_lookup_store(LookupStore(lists), out)
    for ll in lists:
        print(f"{ll.pair_id[0][1]} ~ {ll.pair_id[1][1]}: {len(ll)} rows, p={ll.p:.3g}, "
              f"{ll.nbytes} bytes, version {ll.version}")


def _load_lists(path):
    return io.load_lookup_store(path) if path else None


def cmd_train(a):
    plans = read_plans(a.train)
    catalog = io.load_catalog(a.catalog)
    lists = _load_lists(a.lookups)
    if not a.no_calibration and lists is None:
        log.warning("no --lookups given; training without calibration")
    cfg = TrainConfig(lr=a.lr, epochs=a.epochs, seed=a.seed,
                      weights=NodeWeights(a.lambda_nonindex, a.lambda_last),
                      calibration_enabled=not a.no_calibration and lists is not None)
    params, trace = train(plans, catalog, lists, cfg)
    io.save_model(params, a.out)
    trace_path = Path(a.out).with_suffix(".trace.json")
    trace_path.write_text(json.dumps({"epoch_mean_loss": trace}))
    print(f"saved model ({params.n_params()} parameters) to {a.out}; "
          f"final epoch loss {trace[-1]:.4f}")


def cmd_estimate(a):
    params = io.load_model(a.model)
    catalog = io.load_catalog(a.catalog)
    lists = _load_lists(a.lookups)
    for i, plan in enumerate(read_plans(a.plan)):
        t0 = time.perf_counter()
        root, per_node = estimate(params, plan, catalog, lists)
        dt = (time.perf_counter() - t0) * 1e3
        print(f"{root:.6g}")
        if a.verbose:
            for nid, c in per_node.items():
                print(f"  node {nid}: {c:.6g} ms")
        if a.time:
            print(f"latency {dt:.3f} ms", file=sys.stderr)


def cmd_evaluate(a):
    params = io.load_model(a.model)
    catalog = io.load_catalog(a.catalog)
    lists = _load_lists(a.lookups)
    plans = read_plans(a.test)
    rows, errs = [], []
    for i, plan in enumerate(plans):
        est, _ = estimate(params, plan, catalog, lists)
        act = plan.root.actual_time_ms
        if act is None:
            raise CliError(f"test plan {i} has no actual_time_ms")
        q = q_error(est, max(act, 1e-3))
        rows.append((i, est, act, q))
        errs.append(q)
    s = summarize(errs)
    print("fasco " + io.summary_record(s))
    if a.report:
        io.write_report(rows, a.report)
    if a.compare_vanilla:
        if not a.train:
            raise CliError("--compare-vanilla needs --train to fit the linear transform")
        tr = [merge_unary(p) for p in read_plans(a.train)]
        scale = fit_cost_scale([p.root.est_cost for p in tr], [p.root.actual_time_ms for p in tr])
        base = [q_error(scale * merge_unary(p).root.est_cost, max(p.root.actual_time_ms, 1e-3))
                for p in plans]
        print("vanilla " + io.summary_record(summarize(base)))


def cmd_adapt_explain(a):
    text = Path(a.file).read_text(encoding="utf-8") if a.file != "-" else sys.stdin.read()
    try:
        print(json.dumps(adapt_explain(text), sort_keys=True))
    except AdapterError as e:
        raise CliError(str(e)) from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fasco", description=__doc__)
    p.add_argument("--log-level", default="WARNING")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synth", help="generate a synthetic database and plan workload")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--rho", type=float, default=0.8)
    g.add_argument("--n-tables", type=int, default=6)
    g.add_argument("--n-plans", type=int, default=4000)
    g.add_argument("--split-ratio", type=float, default=0.5)
    g.set_defaults(func=cmd_gen_synth)

    b = sub.add_parser("build-lookups", help="sample one lookup list per join pair")
    b.add_argument("--catalog", required=True)
    b.add_argument("--tables", required=True)
    b.add_argument("--out", required=True)
    b.add_argument("--budget-bytes", type=int, default=DEFAULT_BUDGET)
    b.add_argument("--seed", type=int, default=0)
    b.set_defaults(func=cmd_build_lookups)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--train", required=True)
    t.add_argument("--catalog", required=True)
    t.add_argument("--lookups")
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--epochs", type=int, default=10)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--lambda-nonindex", type=float, default=2.0)
    t.add_argument("--lambda-last", type=float, default=4.0)
    t.add_argument("--no-calibration", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("estimate", help="estimate plan cost(s) in ms")
    e.add_argument("--model", required=True)
    e.add_argument("--plan", required=True)
    e.add_argument("--catalog", required=True)
    e.add_argument("--lookups")
    e.add_argument("--verbose", action="store_true")
    e.add_argument("--time", action="store_true")
    e.set_defaults(func=cmd_estimate)

    v = sub.add_parser("evaluate", help="Q-error summary over a labeled test set")
    v.add_argument("--model", required=True)
    v.add_argument("--test", required=True)
    v.add_argument("--catalog", required=True)
    v.add_argument("--lookups")
    v.add_argument("--report")
    v.add_argument("--compare-vanilla", action="store_true")
    v.add_argument("--train")
    v.set_defaults(func=cmd_evaluate)

    x = sub.add_parser("adapt-explain", help="convert EXPLAIN JSON to a canonical plan")
    x.add_argument("file", help="EXPLAIN JSON file, or - for stdin")
    x.set_defaults(func=cmd_adapt_explain)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (CliError, io.ArtifactError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
