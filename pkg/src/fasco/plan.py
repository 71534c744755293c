"""Plan-tree data model, canonical document parsing and unary-node merging."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any

PREDICATE_OPS = ("EQ", "LT", "GT", "LE", "GE")


class PlanParseError(ValueError):
    """Malformed plan document. ``path`` points at the offending field."""

    def __init__(self, path: str, msg: str):
        super().__init__(f"{path}: {msg}")
        self.path = path


class Source(Enum):
    CANONICAL = "CANONICAL"
    ADAPTER = "ADAPTER"
    SYNTHETIC = "SYNTHETIC"


@dataclass(frozen=True)
class Predicate:
    column: str
    op: str
    value: Any
    # original text of a predicate the grammar cannot express; counted, never evaluated
    raw: str | None = None

    def __post_init__(self):
        if self.op not in PREDICATE_OPS:
            raise ValueError(f"unknown predicate op {self.op!r}")

    @property
    def opaque(self) -> bool:
        return self.raw is not None

    def to_doc(self) -> dict:
        d = {"column": self.column, "op": self.op, "value": self.value}
        if self.raw is not None:
            d["raw"] = self.raw
        return d


@dataclass
class PlanNode:
    node_id: int
    operator: str
    relation: str | None = None
    filters: list[Predicate] = field(default_factory=list)
    join_keys: tuple[str, str] | None = None
    is_subquery_of_sibling: bool = False
    est_rows: float = 1.0
    calibrated_rows: float | None = None
    actual_rows: int | None = None
    actual_time_ms: float | None = None
    est_cost: float | None = None
    children: list[PlanNode] = field(default_factory=list)

    def __post_init__(self):
        if self.calibrated_rows is None:
            self.calibrated_rows = self.est_rows
        if self.join_keys is not None:
            self.join_keys = tuple(self.join_keys)

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def walk(self):
        """Pre-order iterator over the subtree."""
        stack = [self]
        while stack:
            n = stack.pop()
            yield n
            stack.extend(reversed(n.children))

    def leaves(self) -> list[PlanNode]:
        return [n for n in self.walk() if n.is_leaf]


@dataclass
class PlanTree:
    root: PlanNode
    source: Source = Source.CANONICAL

    def __len__(self):
        return sum(1 for _ in self.root.walk())

    def nodes(self) -> list[PlanNode]:
        return post_order(self)

    def node(self, node_id: int) -> PlanNode:
        for n in self.root.walk():
            if n.node_id == node_id:
                return n
        raise KeyError(node_id)

    def parents(self) -> dict[int, PlanNode]:
        out = {}
        for n in self.root.walk():
            for c in n.children:
                out[c.node_id] = n
        return out

    def copy(self) -> PlanTree:
        return copy.deepcopy(self)


# ---------------------------------------------------------------------------
# canonical document <-> tree


def _num(doc, key, path, required=False, default=None):
    if key not in doc or doc[key] is None:
        if required:
            raise PlanParseError(f"{path}.{key}", "missing required field")
        return default
    v = doc[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise PlanParseError(f"{path}.{key}", f"expected number, got {type(v).__name__}")
    return v


def _parse_predicate(doc, path) -> Predicate:
    if not isinstance(doc, dict):
        raise PlanParseError(path, "predicate must be an object")
    for k in ("column", "op", "value"):
        if k not in doc:
            raise PlanParseError(f"{path}.{k}", "missing required field")
    if doc["op"] not in PREDICATE_OPS:
        raise PlanParseError(f"{path}.op", f"unknown op {doc['op']!r}")
    return Predicate(str(doc["column"]), doc["op"], doc["value"], doc.get("raw"))


def _parse_node(doc, path, ids) -> PlanNode:
    if not isinstance(doc, dict):
        raise PlanParseError(path, "plan node must be an object")
    if not isinstance(doc.get("node_type"), str):
        raise PlanParseError(f"{path}.node_type", "missing or non-string node_type")
    filters = doc.get("filters", [])
    if not isinstance(filters, list):
        raise PlanParseError(f"{path}.filters", "expected array")
    jk = doc.get("join_keys")
    if jk is not None and (not isinstance(jk, list) or len(jk) != 2
                           or not all(isinstance(k, str) for k in jk)):
        raise PlanParseError(f"{path}.join_keys", "expected array of exactly 2 strings")
    children = doc.get("children", [])
    if not isinstance(children, list):
        raise PlanParseError(f"{path}.children", "expected array")
    sub = doc.get("is_subquery_of_sibling", False)
    if not isinstance(sub, bool):
        raise PlanParseError(f"{path}.is_subquery_of_sibling", "expected bool")

    node_id = doc.get("node_id")
    if node_id is None:
        node_id = next(ids)
    est = _num(doc, "est_rows", path, required=True)
    actual_rows = _num(doc, "actual_rows", path)
    node = PlanNode(
        node_id=int(node_id),
        operator=doc["node_type"],
        relation=doc.get("relation"),
        filters=[_parse_predicate(f, f"{path}.filters[{i}]") for i, f in enumerate(filters)],
        join_keys=tuple(jk) if jk else None,
        is_subquery_of_sibling=sub,
        est_rows=float(est),
        calibrated_rows=_num(doc, "calibrated_rows", path),
        actual_rows=None if actual_rows is None else int(actual_rows),
        actual_time_ms=_num(doc, "actual_time_ms", path),
        est_cost=_num(doc, "est_cost", path),
    )
    node.children = [_parse_node(c, f"{path}.children[{i}]", ids) for i, c in enumerate(children)]
    return node


def _counter():
    i = 0
    while True:
        yield i
        i += 1


def parse_plan(doc: dict | str | bytes) -> PlanTree:
    """Build a PlanTree from a canonical plan document (dict or JSON text)."""
    if isinstance(doc, (str, bytes)):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as e:
            raise PlanParseError("$", f"invalid JSON: {e}") from None
    root = _parse_node(doc, "$", _counter())
    source = Source(doc.get("source", "CANONICAL")) if isinstance(doc, dict) else Source.CANONICAL
    return PlanTree(root, source)


def _node_doc(n: PlanNode) -> dict:
    d = {
        "node_id": n.node_id,
        "node_type": n.operator,
        "filters": [f.to_doc() for f in n.filters],
        "is_subquery_of_sibling": n.is_subquery_of_sibling,
        "est_rows": n.est_rows,
        "children": [_node_doc(c) for c in n.children],
    }
    if n.relation is not None:
        d["relation"] = n.relation
    if n.join_keys is not None:
        d["join_keys"] = list(n.join_keys)
    if n.calibrated_rows is not None and n.calibrated_rows != n.est_rows:
        d["calibrated_rows"] = n.calibrated_rows
    for k in ("actual_rows", "actual_time_ms", "est_cost"):
        if getattr(n, k) is not None:
            d[k] = getattr(n, k)
    return d


def to_document(tree: PlanTree) -> dict:
    d = _node_doc(tree.root)
    if tree.source is not Source.CANONICAL:
        d["source"] = tree.source.value
    return d


# ---------------------------------------------------------------------------
# preprocessing


def _merge(node: PlanNode) -> PlanNode:
    chain = [node]
    while len(chain[-1].children) == 1:
        chain.append(chain[-1].children[0])
    top, bottom = chain[0], chain[-1]
    if len(chain) == 1:
        return replace(node, children=[_merge(c) for c in node.children],
                       filters=list(node.filters))

    filters = [f for n in reversed(chain) for f in n.filters]
    join_keys = next((n.join_keys for n in reversed(chain) if n.join_keys), None)
    relation = bottom.relation
    if relation is None and not bottom.children:
        relation = next((n.relation for n in reversed(chain) if n.relation), None)
    return replace(
        bottom,
        relation=relation,
        filters=filters,
        join_keys=join_keys,
        is_subquery_of_sibling=top.is_subquery_of_sibling,
        est_rows=top.est_rows,
        calibrated_rows=top.calibrated_rows,
        actual_rows=top.actual_rows,
        actual_time_ms=top.actual_time_ms,
        est_cost=top.est_cost,
        children=[_merge(c) for c in bottom.children],
    )


def merge_unary(tree: PlanTree) -> PlanTree:
    """Collapse every unary chain into its lowest non-unary node.

    Output-side quantities (rows, inclusive time, cost) come from the top of
    the chain; operator and children from the bottom; filters are pooled.
    """
    return PlanTree(_merge(tree.root), tree.source)


def validate(tree: PlanTree) -> list[str]:
    """Return every invariant violation; an empty list means the tree is valid."""
    out = []
    seen = set()
    root_timed = tree.root.actual_time_ms is not None
    for n in tree.root.walk():
        where = f"node {n.node_id} ({n.operator})"
        if n.node_id in seen:
            out.append(f"{where}: duplicate node_id")
        seen.add(n.node_id)
        k = len(n.children)
        if k == 1:
            out.append(f"{where}: unary node (tree not canonicalized)")
        elif k > 2:
            out.append(f"{where}: arity {k} > 2 not supported")
        if k == 0 and not n.relation:
            out.append(f"{where}: leaf missing relation")
        if k > 0 and n.relation:
            out.append(f"{where}: internal node carries relation {n.relation!r}")
        if not n.est_rows >= 1:
            out.append(f"{where}: est_rows {n.est_rows} < 1")
        if n.calibrated_rows is None or not n.calibrated_rows >= 1:
            out.append(f"{where}: calibrated_rows {n.calibrated_rows} < 1")
        if n.actual_rows is not None and n.actual_rows < 0:
            out.append(f"{where}: negative actual_rows")
        if n.actual_time_ms is not None and n.actual_time_ms < 0:
            out.append(f"{where}: negative actual_time_ms")
        if root_timed and n.actual_time_ms is None:
            out.append(f"{where}: missing actual_time_ms while root has one")
        if n.join_keys is not None and len(n.join_keys) != 2:
            out.append(f"{where}: join_keys must be a pair")
    return out


def post_order(tree: PlanTree | PlanNode) -> list[PlanNode]:
    root = tree.root if isinstance(tree, PlanTree) else tree
    out, stack = [], [(root, False)]
    while stack:
        n, done = stack.pop()
        if done:
            out.append(n)
            continue
        stack.append((n, True))
        for c in reversed(n.children):
            stack.append((c, False))
    return out
