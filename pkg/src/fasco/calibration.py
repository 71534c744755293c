"""Sample-based correction of histogram cardinalities at lowest-level merge nodes.

Each lookup list holds a uniform sample of the inner join of one table pair.
Filtering the sample with a merge node's predicates gives a second estimate
``c * p`` which is turned into a smoothed multiplicative bias factor and pushed
to every node whose cardinality derives from that merge node.
"""

from __future__ import annotations

import logging
import math
import operator
import threading
from dataclasses import dataclass, field

import numpy as np

from .plan import PlanNode, PlanTree, post_order

log = logging.getLogger(__name__)

DEFAULT_BUDGET = 5 * 1024 * 1024

_CMP = {"EQ": operator.eq, "LT": operator.lt, "GT": operator.gt,
        "LE": operator.le, "GE": operator.ge}


class CalibrationConfigError(ValueError):
    pass


def pair_key(a: tuple[str, str], b: tuple[str, str]) -> tuple:
    """Canonical identity of a join pair: sorted ((table, key column), (table, key column))."""
    return tuple(sorted([tuple(a), tuple(b)]))


@dataclass(frozen=True)
class LookupList:
    pair_id: tuple
    columns: tuple[str, ...]
    rows: np.ndarray
    p: float = 1.0
    version: int = 0

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("inverse sample rate p must be >= 1")
        if self.rows.ndim != 2 or self.rows.shape[1] != len(self.columns):
            raise ValueError("rows must be a 2-D array with one column per name")

    def __len__(self):
        return self.rows.shape[0]

    @property
    def nbytes(self) -> int:
        return int(self.rows.nbytes)

    def count(self, predicates) -> int:
        """Number of sampled rows satisfying every predicate."""
        mask = np.ones(len(self), dtype=bool)
        for pr in predicates:
            if pr.opaque or pr.column not in self.columns:
                raise CalibrationConfigError(
                    f"column {pr.column!r} is not retained in lookup list {self.pair_id}")
            col = self.rows[:, self.columns.index(pr.column)]
            if isinstance(pr.value, str):
                return 0
            mask &= _CMP[pr.op](col, pr.value)
        return int(mask.sum())


class LookupStore:
    """Pair-id keyed map of lookup lists; entries are replaced whole."""

    def __init__(self, lists=()):
        self._lists = {}
        self._lock = threading.Lock()
        for ll in lists:
            self._lists[ll.pair_id] = ll

    def __len__(self):
        return len(self._lists)

    def __iter__(self):
        return iter(list(self._lists.values()))

    def __contains__(self, pair_id):
        return pair_id in self._lists

    def get(self, pair_id) -> LookupList | None:
        return self._lists.get(pair_id)

    def put(self, ll: LookupList):
        with self._lock:
            self._lists[ll.pair_id] = ll

    def version(self, pair_id) -> int:
        ll = self._lists.get(pair_id)
        return -1 if ll is None else ll.version


def _join_index(ka: np.ndarray, kb: np.ndarray):
    """Per-common-key blocks of the inner join of two key columns."""
    oa, ob = np.argsort(ka, kind="stable"), np.argsort(kb, kind="stable")
    ua, sa, ca = np.unique(ka[oa], return_index=True, return_counts=True)
    ub, sb, cb = np.unique(kb[ob], return_index=True, return_counts=True)
    common, ia, ib = np.intersect1d(ua, ub, assume_unique=True, return_indices=True)
    return oa, ob, sa[ia], ca[ia], sb[ib], cb[ib]


def join_size(ka, kb) -> int:
    _, _, _, ca, _, cb = _join_index(np.asarray(ka), np.asarray(kb))
    return int(np.sum(ca.astype(object) * cb)) if ca.size else 0


def build_lookup_list(tables: dict, pair, byte_budget: int = DEFAULT_BUDGET,
                      seed: int = 0, columns=None, version: int = 0) -> LookupList:
    """Uniformly sample the inner join of ``pair = (table_a, table_b, (key_a, key_b))``.

    ``tables`` maps table name -> {column name -> array}; key and retained
    columns are "table.column" identifiers. ``columns`` defaults to every
    non-key column of both tables. The inverse rate ``p`` is the smallest
    value >= 1 whose expected sample fits ``byte_budget``; the realised sample
    size is ``J / p`` stochastically rounded, so it may exceed the budget by
    less than one row.
    """
    ta, tb, (key_a, key_b) = pair
    ca_name, cb_name = key_a.split(".", 1)[1], key_b.split(".", 1)[1]
    if columns is None:
        columns = [f"{ta}.{c}" for c in tables[ta] if c != ca_name] + \
                  [f"{tb}.{c}" for c in tables[tb] if c != cb_name]
    columns = tuple(columns)
    for c in columns:
        t, col = c.split(".", 1)
        if t not in (ta, tb) or col not in tables[t]:
            raise CalibrationConfigError(f"column {c!r} does not exist in {ta} or {tb}")

    pid = pair_key((ta, key_a), (tb, key_b))
    ka, kb = np.asarray(tables[ta][ca_name]), np.asarray(tables[tb][cb_name])
    oa, ob, sa, na, sb, nb = _join_index(ka, kb)
    block = na.astype(np.int64) * nb
    total = int(block.sum()) if block.size else 0
    if total == 0:
        return LookupList(pid, columns, np.zeros((0, len(columns)), dtype=np.int64), 1.0, version)

    row_bytes = 8 * max(len(columns), 1)
    p = max(1.0, total * row_bytes / byte_budget)
    rng = np.random.default_rng(seed)
    if p == 1.0:
        pos = np.arange(total, dtype=np.int64)
    else:
        expect = total / p
        m = int(math.floor(expect)) + int(rng.random() < expect - math.floor(expect))
        pos = np.sort(rng.choice(total, size=m, replace=False)).astype(np.int64)

    starts = np.concatenate([[0], np.cumsum(block)[:-1]])
    k = np.searchsorted(starts, pos, side="right") - 1
    r = pos - starts[k]
    ia = oa[sa[k] + r // nb[k]]
    ib = ob[sb[k] + r % nb[k]]

    cols = []
    for c in columns:
        t, col = c.split(".", 1)
        src = tables[t][col]
        cols.append(np.asarray(src)[ia if t == ta else ib])
    rows = np.column_stack(cols).astype(np.int64) if cols else np.zeros((len(pos), 0), np.int64)
    return LookupList(pid, columns, rows, p, version)


def bias_factor(c: float, p: float, c_tilde: float) -> float:
    return (c * p + p) / (c_tilde + p)


def calibration_factor(llist: LookupList, predicates, c_tilde: float) -> float:
    return bias_factor(llist.count(predicates), llist.p, c_tilde)


def find_lowest_merge_nodes(tree: PlanTree) -> list[PlanNode]:
    return [n for n in post_order(tree)
            if len(n.children) == 2 and all(c.is_leaf for c in n.children)]


def related_nodes(tree: PlanTree, n: PlanNode) -> set[int]:
    """Ids of nodes whose cardinality derives from merge node ``n`` (``n`` included).

    Ancestors of ``n`` are related; a sibling of ``n`` or of an ancestor is
    related when it is a subquery of that node; a child of ``n`` is related
    when it is a subquery of the other child.
    """
    parents = tree.parents()
    out = {n.node_id}
    for c in n.children:
        if c.is_subquery_of_sibling:
            out.add(c.node_id)
    cur = n
    while cur.node_id in parents:
        par = parents[cur.node_id]
        for sib in par.children:
            if sib is not cur and sib.is_subquery_of_sibling:
                out.add(sib.node_id)
        out.add(par.node_id)
        cur = par
    return out


def merge_pair(n: PlanNode) -> tuple | None:
    """Lookup-list pair id for a lowest merge node, or None if it cannot be resolved."""
    left, right = n.children
    keys = n.join_keys or right.join_keys or left.join_keys
    if not keys or not left.relation or not right.relation:
        return None
    by_table = {}
    for k in keys:
        t = k.split(".", 1)[0]
        by_table[t] = k
    # adapter plans may qualify keys by alias equal to the relation name or not at all
    if left.relation in by_table and right.relation in by_table and left.relation != right.relation:
        return pair_key((left.relation, by_table[left.relation]),
                        (right.relation, by_table[right.relation]))
    return None


@dataclass
class CalibrationEntry:
    node_id: int
    c: int | None
    c_tilde: float
    p: float | None
    factor: float
    related: set[int] = field(default_factory=set)
    skipped: str | None = None


@dataclass
class CalibrationReport:
    entries: list[CalibrationEntry] = field(default_factory=list)

    def factors(self) -> dict[int, float]:
        return {e.node_id: e.factor for e in self.entries}


def apply_calibration(tree: PlanTree, store: LookupStore | None) -> tuple[PlanTree, CalibrationReport]:
    """Return a copy of ``tree`` with ``calibrated_rows`` corrected, plus a report.

    Every node starts from its vanilla ``est_rows``; related nodes are
    multiplied by the factor of each lowest merge node they derive from.
    """
    out = tree.copy()
    report = CalibrationReport()
    scale = {}
    for n in find_lowest_merge_nodes(out):
        left, right = n.children
        pid = merge_pair(n)
        ll = store.get(pid) if (store is not None and pid is not None) else None
        entry = CalibrationEntry(n.node_id, None, n.est_rows, None, 1.0)
        if ll is None:
            entry.skipped = "no join pair" if pid is None else f"no lookup list for {pid}"
            log.warning("calibration skipped at node %s: %s", n.node_id, entry.skipped)
        else:
            try:
                c = ll.count(list(left.filters) + list(right.filters))
            except CalibrationConfigError as e:
                entry.skipped = str(e)
                log.warning("calibration skipped at node %s: %s", n.node_id, e)
            else:
                entry.c, entry.p = c, ll.p
                entry.factor = bias_factor(c, ll.p, n.est_rows)
                entry.related = related_nodes(out, n)
                for i in entry.related:
                    scale[i] = scale.get(i, 1.0) * entry.factor
        report.entries.append(entry)
    for n in out.root.walk():
        n.calibrated_rows = max(1.0, n.est_rows * scale.get(n.node_id, 1.0))
    return out, report
