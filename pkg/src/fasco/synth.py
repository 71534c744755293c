"""Desk-scale synthetic database and labeled plan workload.

Schema: table ``t0`` holds a dense primary key ``id``; every other table
holds a foreign key ``fk`` into it. All joins equate these key columns, so a
sub-plan's exact cardinality is ``sum_v prod_T count_T(v)`` over the filtered
key counts of its tables. Correlation knob ``rho`` mixes a Zipf-skewed key
distribution into the foreign keys and ties attribute values to the key, the
two effects an independence-assuming histogram estimator misses.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .features import Catalog, Histogram
from .plan import PlanNode, PlanTree, Predicate, Source, merge_unary

INDEX_LEAF_OPS = ("Index Scan", "Bitmap Index Scan")


@dataclass
class SynthSpec:
    n_tables: int = 6
    rows: tuple[int, int] = (1_000, 50_000)
    columns: tuple[int, int] = (2, 5)
    rho: float = 0.8
    seed: int = 0
    n_buckets: int = 20
    zipf_s: float = 0.6

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must be in [0, 1], got {self.rho}")
        if self.n_tables < 2:
            raise ValueError("need at least two tables")
        for lo, hi in (self.rows, self.columns):
            if lo > hi or lo < 1:
                raise ValueError("empty range in SynthSpec")
        if self.columns[0] < 2:
            raise ValueError("tables need a key column plus at least one attribute")


@dataclass
class CostOracleParams:
    """Per-operator coefficients (ms) of the analytic runtime model."""

    seq_row: float = 2e-4
    filter_row: float = 4e-5
    index_probe: float = 1e-2
    index_row: float = 3e-3
    bitmap_row: float = 1.2e-3
    heap_row: float = 8e-4
    hash_build: float = 3e-4
    probe_row: float = 1.5e-4
    merge_row: float = 2.5e-4
    sort_row: float = 1e-4
    nl_pair: float = 5e-6
    output_row: float = 1e-4
    materialize_row: float = 5e-5
    gather_row: float = 1.5e-4
    overhead: float = 2e-2
    sigma: float = 0.1
    index_sigma: float = 0.6

    def __post_init__(self):
        for k, v in vars(self).items():
            if k.endswith("sigma"):
                if v < 0:
                    raise ValueError(f"{k} must be >= 0")
            elif not v > 0:
                raise ValueError(f"{k} must be > 0")


# what the "DBMS planner" believes; drives est_cost, the input of the linear baseline
PLANNER_COEFFS = CostOracleParams(
    seq_row=1.0, filter_row=0.25, index_probe=4.0, index_row=4.0, bitmap_row=1.5,
    heap_row=1.0, hash_build=0.5, probe_row=0.25, merge_row=0.3, sort_row=0.2,
    nl_pair=0.01, output_row=0.25, materialize_row=0.1, gather_row=0.5, overhead=0.1,
    sigma=0.0, index_sigma=0.0)


class SynthTables(dict):
    """table -> {column -> int64 array}, plus the key column of each table."""

    def __init__(self, data=(), key=None):
        super().__init__(data)
        self.key = dict(key or {})

    def key_values(self, table: str) -> np.ndarray:
        return self[table][self.key[table]]

    def key_column(self, table: str) -> str:
        return f"{table}.{self.key[table]}"

    def rows(self, table: str) -> int:
        return len(self.key_values(table))


# ---------------------------------------------------------------------------
# database


def build_catalog(tables: SynthTables, n_buckets: int = 20) -> Catalog:
    names = sorted(tables)
    cols = {f"{t}.{c}": Histogram.from_values(v, n_buckets)
            for t in names for c, v in tables[t].items()}
    pairs = [(a, b, (tables.key_column(a), tables.key_column(b)))
             for a, b in itertools.combinations(names, 2)]
    return Catalog({t: max(1, tables.rows(t)) for t in names}, cols, pairs)


def _zipf_keys(rng, n, n_keys, s):
    w = 1.0 / np.arange(1, n_keys + 1) ** s
    return rng.choice(n_keys, size=n, p=w / w.sum()) + 1


def gen_catalog(spec: SynthSpec) -> tuple[Catalog, SynthTables]:
    rng = np.random.default_rng(spec.seed)
    lo, hi = spec.rows
    sizes = np.round(np.exp(rng.uniform(math.log(lo), math.log(hi), spec.n_tables))).astype(int)
    n_keys = int(sizes[0])
    tables = SynthTables()
    for i, n in enumerate(sizes):
        name = f"t{i}"
        if i == 0:
            keys = np.arange(1, n_keys + 1)
            kname = "id"
        else:
            keys = np.where(rng.random(n) < spec.rho,
                            _zipf_keys(rng, n, n_keys, spec.zipf_s),
                            rng.integers(1, n_keys + 1, n))
            kname = "fk"
        data = {kname: keys.astype(np.int64)}
        u = (keys - 1) / n_keys  # key position; small keys are the heavy hitters
        for j in range(rng.integers(spec.columns[0], spec.columns[1] + 1) - 1):
            dom = int(rng.choice([10, 100, 100, 1000]))
            gamma = rng.uniform(0.3, 1.0)
            f = u ** gamma if rng.random() < 0.5 else 1.0 - u ** gamma
            tied = np.floor(f * dom).astype(np.int64) + rng.integers(-1, 2, n) * (dom // 50)
            vals = np.where(rng.random(n) < spec.rho, np.clip(tied, 0, dom - 1),
                            rng.integers(0, dom, n))
            data[f"a{j}"] = vals.astype(np.int64)
        tables[name] = data
        tables.key[name] = kname
    return build_catalog(tables, spec.n_buckets), tables


def delete_rows(tables: SynthTables, fraction: float, seed: int = 0) -> SynthTables:
    """Copy of ``tables`` with a uniform random ``fraction`` of each table's rows removed."""
    rng = np.random.default_rng(seed)
    out = SynthTables(key=tables.key)
    for t in sorted(tables):
        n = tables.rows(t)
        keep = np.sort(rng.permutation(n)[: n - int(round(fraction * n))])
        out[t] = {c: v[keep] for c, v in tables[t].items()}
    return out


# ---------------------------------------------------------------------------
# cardinalities


def _table_of(column: str) -> str:
    return column.split(".", 1)[0]


def _eval(col, op, value):
    return {"EQ": col == value, "LT": col < value, "GT": col > value,
            "LE": col <= value, "GE": col >= value}[op]


class CardinalityOracle:
    """Exact sub-plan cardinalities over in-memory tables (cached per filtered table)."""

    def __init__(self, tables: SynthTables):
        self.tables = tables
        self.n_keys = max(int(tables.key_values(t).max(initial=0)) for t in tables) + 1
        self._cache = {}

    def key_counts(self, table: str, filters) -> np.ndarray:
        k = (table, tuple(filters))
        if k not in self._cache:
            data = self.tables[table]
            mask = np.ones(len(self.tables.key_values(table)), dtype=bool)
            for f in filters:
                mask &= _eval(data[f.column.split(".", 1)[1]], f.op, f.value)
            self._cache[k] = np.bincount(self.tables.key_values(table)[mask],
                                         minlength=self.n_keys).astype(np.float64)
        return self._cache[k]

    def rows(self, groups) -> float:
        """Cardinality of joining ``groups = [(table, filters), ...]`` on the shared key."""
        if len(groups) == 1:
            return float(self.key_counts(*groups[0]).sum())
        acc = None
        for g in groups:
            v = self.key_counts(*g)
            acc = v.copy() if acc is None else acc * v
        return float(acc.sum())


def _groups(nodes) -> list:
    """(relation, filters) per distinct relation; filters routed by column prefix."""
    rels, fs = [], {}
    for n in nodes:
        if n.is_leaf and n.relation not in fs:
            rels.append(n.relation)
            fs[n.relation] = []
    for n in nodes:
        for f in n.filters:
            fs.setdefault(_table_of(f.column), []).append(f)
    return [(r, tuple(fs[r])) for r in rels]


def _subtree(n: PlanNode) -> list:
    return list(n.walk())


def exact_cardinality(tables: SynthTables, node: PlanNode,
                      oracle: CardinalityOracle | None = None) -> int:
    """Exact output rows of the sub-plan rooted at ``node``."""
    oracle = oracle or CardinalityOracle(tables)
    nodes = _subtree(node)
    for n in nodes:
        for k in n.join_keys or ():
            if k != tables.key_column(_table_of(k)):
                raise NotImplementedError(f"join on non-key column {k}")
    return int(round(oracle.rows(_groups(nodes))))


def scan_estimate(catalog: Catalog, node: PlanNode) -> float:
    est = float(catalog.rows(node.relation))
    for f in node.filters:
        est *= catalog.histogram(f.column).selectivity(f.op, f.value)
    return est


def _join_divisor(catalog: Catalog, keys) -> float:
    return max(1, max(catalog.histogram(k).ndv for k in keys))


def _est(catalog: Catalog, node: PlanNode, sibling_est: float | None = None) -> float:
    if node.is_leaf:
        est = scan_estimate(catalog, node)
        if node.is_subquery_of_sibling and sibling_est is not None:
            if node.join_keys:
                est = sibling_est * est / _join_divisor(catalog, node.join_keys)
            else:
                est = sibling_est
        return max(1.0, est)
    if len(node.children) == 1:
        return _est(catalog, node.children[0], sibling_est)
    left, right = node.children
    el = _est(catalog, left)
    er = _est(catalog, right, el)
    if right.is_subquery_of_sibling:
        return er
    if node.join_keys:
        return max(1.0, el * er / _join_divisor(catalog, node.join_keys))
    return max(1.0, el * er)


def vanilla_estimate(catalog: Catalog, node: PlanNode) -> float:
    """Histogram + independence estimate of the sub-plan rooted at ``node``."""
    return _est(catalog, node)


# ---------------------------------------------------------------------------
# runtime oracle and labeling


def _work(op, k: CostOracleParams, rows, left, right, table_rows, n_filters, outer, inner_sub):
    if op == "Seq Scan":
        w = k.seq_row * table_rows + k.filter_row * table_rows * n_filters
    elif op == "Index Scan":
        w = k.index_probe * (outer if outer is not None else 1.0) + k.index_row * rows
    elif op == "Bitmap Index Scan":
        w = k.index_probe + k.bitmap_row * rows
    elif op == "Bitmap Heap Scan":
        w = k.heap_row * rows
    elif op == "Hash":
        w = k.hash_build * rows
    elif op == "Sort":
        w = k.sort_row * rows * math.log2(rows + 2)
    elif op == "Materialize":
        w = k.materialize_row * rows
    elif op == "Gather":
        w = k.gather_row * rows
    elif op == "Hash Join":
        w = k.probe_row * left + k.output_row * rows
    elif op == "Merge Join":
        w = k.merge_row * (left + right) + k.output_row * rows
    elif op == "Nested Loop":
        w = k.output_row * rows if inner_sub else k.nl_pair * left * right + k.output_row * rows
    else:
        raise ValueError(f"no runtime model for operator {op!r}")
    return w + k.overhead


def label_plan(tree: PlanTree, catalog: Catalog, tables: SynthTables,
               oracle: CostOracleParams | None = None, seed: int = 0,
               planner: CostOracleParams = PLANNER_COEFFS,
               card: CardinalityOracle | None = None) -> PlanTree:
    """Copy of a raw plan with est_rows, actual_rows, actual_time_ms and est_cost filled in.

    Times are inclusive: a node's own (noisy) work plus its children's times.
    ``est_cost`` applies the planner coefficients to the histogram estimates.
    """
    k = oracle or CostOracleParams()
    rng = np.random.default_rng(seed)
    card = card or CardinalityOracle(tables)
    out = tree.copy()

    def rec(node, sib=None, sib_nodes=()):
        kids = node.children
        if not kids:
            nodes = [node]
            outer = sib if (node.is_subquery_of_sibling and sib is not None) else None
            ctx = list(sib_nodes) + [node] if (outer and node.join_keys) else [node]
            act = card.rows(_groups(ctx))
            est = _est(catalog, node, outer.est_rows if outer else None)
            nf = len(node.filters)
            args_t = (act, 0, 0, tables.rows(node.relation), nf,
                      outer.actual_rows if outer else None, False)
            args_c = (est, 0, 0, catalog.rows(node.relation), nf,
                      outer.est_rows if outer else None, False)
        elif len(kids) == 1:
            kid = kids[0]
            nodes = rec(kid, sib, sib_nodes) + [node]
            act, est = kid.actual_rows, kid.est_rows
            args_t = (act, act, 0, 0, 0, None, False)
            args_c = (est, est, 0, 0, 0, None, False)
        else:
            left, right = kids
            ln = rec(left)
            rn = rec(right, left, ln)
            nodes = ln + rn + [node]
            sub = right.is_subquery_of_sibling
            if sub:
                act, est = right.actual_rows, right.est_rows
            elif node.join_keys:
                act, est = card.rows(_groups(nodes)), _est(catalog, node)
            else:
                act, est = float(left.actual_rows) * right.actual_rows, _est(catalog, node)
            args_t = (act, left.actual_rows, right.actual_rows, 0, 0, None, sub)
            args_c = (est, left.est_rows, right.est_rows, 0, 0, None, sub)
        est = max(1.0, est)
        args_c = (est,) + args_c[1:]
        node.actual_rows = int(round(act))
        node.est_rows = node.calibrated_rows = est
        node.actual_time_ms = _noisy(_work(node.operator, k, *args_t), node.operator, k, rng) \
            + sum(c.actual_time_ms for c in kids)
        node.est_cost = _work(node.operator, planner, *args_c) + sum(c.est_cost for c in kids)
        return nodes

    rec(out.root)
    return out


def _noisy(t, op, k: CostOracleParams, rng):
    s = k.index_sigma if op in INDEX_LEAF_OPS else k.sigma
    return t * math.exp(rng.normal(0.0, s)) if s > 0 else t


# ---------------------------------------------------------------------------
# plan generation


class _PlanBuilder:
    """Random plans whose operator choices react to histogram estimates, like a planner."""

    def __init__(self, catalog: Catalog, tables: SynthTables, rng: np.random.Generator):
        self.catalog, self.tables, self.rng = catalog, tables, rng
        self._ids = itertools.count()
        self.attrs = {t: [f"{t}.{c}" for c in tables[t] if c != tables.key[t]] for t in tables}

    def node(self, op, **kw) -> PlanNode:
        return PlanNode(next(self._ids), op, **kw)

    def filters(self, table) -> list[Predicate]:
        rng = self.rng
        n = int(rng.choice(4, p=[0.3, 0.35, 0.25, 0.1]))
        cols = rng.permutation(self.attrs[table])[:n]
        out = []
        for c in cols:
            h = self.catalog.histogram(str(c))
            lo, hi = int(h.edges[0]), int(h.edges[-1]) - 1
            op = str(rng.choice(["EQ", "LT", "LE", "GT", "GE"], p=[0.2, 0.2, 0.2, 0.2, 0.2]))
            out.append(Predicate(str(c), op, int(rng.integers(lo, hi + 1))))
        return out

    def scan(self, table, subquery_keys=None) -> PlanNode:
        fs = self.filters(table)
        if subquery_keys is not None:
            return self.node("Index Scan", relation=table, filters=fs,
                             join_keys=subquery_keys, is_subquery_of_sibling=True)
        sel = scan_estimate(self.catalog, PlanNode(-1, "Seq Scan", relation=table, filters=fs)) \
            / self.catalog.rows(table)
        u = self.rng.random()
        if fs and sel < 0.05:
            op = "Index Scan" if u < 0.5 else ("Bitmap Index Scan" if u < 0.8 else "Seq Scan")
        elif fs and sel < 0.25:
            op = "Bitmap Index Scan" if u < 0.4 else "Seq Scan"
        else:
            op = "Seq Scan"
        leaf = self.node(op, relation=table, filters=fs)
        if op == "Bitmap Index Scan":
            return self.node("Bitmap Heap Scan", relation=table, children=[leaf])
        return leaf

    def keys(self, left_tables, right_table):
        lt = str(self.rng.choice(sorted(left_tables)))
        return (self.tables.key_column(lt), self.tables.key_column(right_table))

    def join(self, left, right, keys) -> PlanNode:
        u = self.rng.random()
        er = vanilla_estimate(self.catalog, right)
        if er < 500 and u < 0.25:
            return self.node("Nested Loop", join_keys=keys,
                             children=[left, self.node("Materialize", children=[right])])
        if u < 0.75:
            return self.node("Hash Join", join_keys=keys,
                             children=[left, self.node("Hash", children=[right])])
        return self.node("Merge Join", join_keys=keys,
                         children=[self.node("Sort", children=[left]),
                                   self.node("Sort", children=[right])])

    def left_deep(self, order) -> PlanNode:
        cur = self.scan(order[0])
        seen = {order[0]}
        for t in order[1:]:
            keys = self.keys(seen, t)
            if self.rng.random() < 0.3:
                cur = self.node("Nested Loop", children=[cur, self.scan(t, subquery_keys=keys)])
            else:
                cur = self.join(cur, self.scan(t), keys)
            seen.add(t)
        return cur

    def plan(self, n_tables: int) -> PlanTree:
        order = [str(t) for t in self.rng.permutation(sorted(self.tables))[:n_tables]]
        if n_tables >= 4 and self.rng.random() < 0.25:
            cut = int(self.rng.integers(2, n_tables - 1))
            a, b = order[:cut], order[cut:]
            left, right = self.left_deep(a), self.left_deep(b)
            keys = (self.tables.key_column(str(self.rng.choice(a))),
                    self.tables.key_column(str(self.rng.choice(b))))
            if self.rng.random() < 0.7:
                root = self.node("Hash Join", join_keys=keys,
                                 children=[left, self.node("Hash", children=[right])])
            else:
                root = self.node("Merge Join", join_keys=keys,
                                 children=[self.node("Sort", children=[left]),
                                           self.node("Sort", children=[right])])
        else:
            root = self.left_deep(order)
        u = self.rng.random()
        if u < 0.15:
            root = self.node("Gather", children=[root])
        elif u < 0.3:
            root = self.node("Sort", children=[root])
        return PlanTree(root, Source.SYNTHETIC)


def gen_plans(catalog: Catalog, tables: SynthTables, n_plans: int, seed: int = 0) -> list[PlanTree]:
    """Unlabeled raw plans (unary nodes included) over 1-5 tables."""
    rng = np.random.default_rng(seed)
    b = _PlanBuilder(catalog, tables, rng)
    max_t = min(5, len(tables))
    sizes = rng.choice(np.arange(1, 6), size=n_plans, p=[0.1, 0.25, 0.25, 0.2, 0.2])
    out = []
    for k in sizes:
        b._ids = itertools.count()
        out.append(b.plan(int(min(k, max_t))))
    return out


def relabel(plans: list[PlanTree], catalog: Catalog, tables: SynthTables,
            oracle: CostOracleParams | None = None, seed: int = 0,
            canonical: bool = True) -> list[PlanTree]:
    """Label raw plans against (possibly updated) tables and catalog."""
    card = CardinalityOracle(tables)
    rng = np.random.default_rng(seed)
    seeds = rng.integers(0, 2**63 - 1, size=len(plans))
    out = []
    for p, s in zip(plans, seeds):
        t = label_plan(p, catalog, tables, oracle, int(s), card=card)
        out.append(merge_unary(t) if canonical else t)
    return out


def gen_workload(catalog: Catalog, tables: SynthTables, n_plans: int,
                 oracle: CostOracleParams | None = None, seed: int = 0,
                 canonical: bool = True) -> list[PlanTree]:
    """Random labeled plans. ``canonical=False`` keeps the raw unary operators."""
    raw = gen_plans(catalog, tables, n_plans, seed)
    return relabel(raw, catalog, tables, oracle, seed + 1, canonical)
