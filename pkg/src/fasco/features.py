"""Per-node explicit features: operator, subquery flag, cardinalities, filter count, join keys."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .plan import PlanNode, PlanTree, post_order

UNKNOWN = "<unknown>"
NO_JOIN = "<no-join>"

# upper clamp for normalized cardinalities; values above 1 are join outputs
# larger than the biggest base table
CARD_CLAMP = 3.0


class CatalogError(KeyError):
    pass


@dataclass
class Histogram:
    """Equi-width histogram over an integer-valued column.

    Bucket ``i`` covers the integers in ``[edges[i], edges[i+1])``; values are
    assumed uniform over the integers of a bucket.
    """

    edges: np.ndarray
    counts: np.ndarray
    ndv: int

    @classmethod
    def from_values(cls, values, n_buckets: int = 20) -> Histogram:
        values = np.asarray(values)
        if values.size == 0:
            return cls(np.array([0, 1], dtype=np.int64), np.array([0], dtype=np.int64), 0)
        lo, hi = int(values.min()), int(values.max())
        edges = np.unique(np.round(np.linspace(lo, hi + 1, n_buckets + 1)).astype(np.int64))
        counts, _ = np.histogram(values, bins=edges)
        return cls(edges, counts.astype(np.int64), int(np.unique(values).size))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def qualifying(self, op: str, value) -> float:
        """Estimated number of rows satisfying ``column <op> value``."""
        if isinstance(value, str) or self.total == 0:
            return self.total * (0.005 if op == "EQ" else 1 / 3)
        a, b = self.edges[:-1], self.edges[1:]
        w = b - a
        v = float(value)
        if op == "EQ":
            q = np.where((v == math.floor(v)) & (a <= v) & (v < b), 1, 0)
        elif op == "LT":
            q = np.clip(math.ceil(v) - a, 0, w)
        elif op == "LE":
            q = np.clip(math.floor(v) + 1 - a, 0, w)
        elif op == "GT":
            q = np.clip(b - (math.floor(v) + 1), 0, w)
        elif op == "GE":
            q = np.clip(b - math.ceil(v), 0, w)
        else:
            raise ValueError(op)
        return float(np.sum(self.counts * q / w))

    def selectivity(self, op: str, value) -> float:
        if self.total == 0:
            return 0.0
        return self.qualifying(op, value) / self.total


@dataclass
class Catalog:
    tables: dict[str, int]
    columns: dict[str, Histogram]
    join_pairs: list[tuple[str, str, tuple[str, str]]] = field(default_factory=list)

    def rows(self, table: str) -> int:
        try:
            return self.tables[table]
        except KeyError:
            raise CatalogError(f"unknown relation {table!r}") from None

    def histogram(self, column: str) -> Histogram:
        try:
            return self.columns[column]
        except KeyError:
            raise CatalogError(f"unknown column {column!r}") from None

    @property
    def max_rows(self) -> int:
        return max(self.tables.values())


@dataclass
class Vocabulary:
    entries: list[str]
    unknown_idx: int = 0
    no_join_idx: int | None = None

    def __post_init__(self):
        self._index = {e: i for i, e in enumerate(self.entries)}
        if len(self._index) != len(self.entries):
            raise ValueError("vocabulary entries must be unique")

    @classmethod
    def build(cls, items, join_keys: bool = False) -> Vocabulary:
        head = [UNKNOWN, NO_JOIN] if join_keys else [UNKNOWN]
        seen = sorted(set(items) - set(head))
        return cls(head + seen, 0, 1 if join_keys else None)

    def index(self, item: str | None) -> int:
        return self._index.get(item, self.unknown_idx)

    def __len__(self):
        return len(self.entries)


class Vocabs(NamedTuple):
    operators: Vocabulary
    join_keys: Vocabulary


def join_key_token(join_keys) -> str | None:
    if not join_keys:
        return None
    return "=".join(sorted(join_keys))


def build_vocabs(trees) -> Vocabs:
    ops, keys = set(), set()
    for t in trees:
        for n in t.root.walk():
            ops.add(n.operator)
            tok = join_key_token(n.join_keys)
            if tok:
                keys.add(tok)
    return Vocabs(Vocabulary.build(ops), Vocabulary.build(keys, join_keys=True))


@dataclass(frozen=True)
class FeatureVector:
    operator_idx: int
    subquery_flag: int
    card_left: float
    card_right: float
    filter_count: int
    join_key_idx: int


def encode_operator(op: str, vocab: Vocabulary) -> int:
    return vocab.index(op)


def subquery_flag(node: PlanNode) -> int:
    return int(bool(node.is_subquery_of_sibling))


def init_leaf_cardinalities(node: PlanNode, catalog: Catalog,
                            sibling: PlanNode | None = None) -> tuple[float, float]:
    """Leaf cardinality inputs.

    A raw-table scan sees ``(table rows, 1)``. A subquery of its sibling sees
    the sibling's rows on the left, and the table's rows on the right only
    when it joins against the table (it carries join keys).
    """
    table_rows = catalog.rows(node.relation)
    if not node.is_subquery_of_sibling or sibling is None:
        return float(table_rows), 1.0
    if node.join_keys:
        return float(sibling.calibrated_rows), float(table_rows)
    return float(sibling.calibrated_rows), 1.0


def internal_cardinalities(node: PlanNode) -> tuple[float, float]:
    left, right = node.children
    return float(left.calibrated_rows), float(right.calibrated_rows)


def filter_count(node: PlanNode) -> int:
    return len(node.filters)


def encode_join_keys(node: PlanNode, vocab: Vocabulary) -> int:
    tok = join_key_token(node.join_keys)
    if tok is None:
        return vocab.no_join_idx
    return vocab.index(tok)


def normalize_rows(rows: float, max_rows: float) -> float:
    v = math.log1p(max(rows, 0.0)) / math.log1p(max_rows)
    return min(max(v, 0.0), CARD_CLAMP)


def build_feature_vector(node: PlanNode, catalog: Catalog, vocabs: Vocabs,
                         sibling: PlanNode | None = None,
                         max_rows: float | None = None) -> FeatureVector:
    if max_rows is None:
        max_rows = catalog.max_rows
    if node.is_leaf:
        cl, cr = init_leaf_cardinalities(node, catalog, sibling)
    else:
        cl, cr = internal_cardinalities(node)
    return FeatureVector(
        operator_idx=encode_operator(node.operator, vocabs.operators),
        subquery_flag=subquery_flag(node),
        card_left=normalize_rows(cl, max_rows),
        card_right=normalize_rows(cr, max_rows),
        filter_count=filter_count(node),
        join_key_idx=encode_join_keys(node, vocabs.join_keys),
    )


def featurize_tree(tree: PlanTree, catalog: Catalog, vocabs: Vocabs,
                   max_rows: float | None = None) -> list[FeatureVector]:
    """Feature vectors for every node, in post-order."""
    siblings = {}
    for n in tree.root.walk():
        if len(n.children) == 2:
            a, b = n.children
            siblings[a.node_id], siblings[b.node_id] = b, a
    return [build_feature_vector(n, catalog, vocabs, siblings.get(n.node_id), max_rows)
            for n in post_order(tree)]
