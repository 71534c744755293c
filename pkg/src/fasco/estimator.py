"""Tree-structured cost model.

Every node runs the same three networks in post-order: a backbone over
``(x_i, s_j, log1p c_j, s_k, log1p c_k)`` producing ``o_i``, a state head
producing ``s_i`` and a cost head (exp output) producing ``c_i`` in ms.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tinynn
from .calibration import LookupStore, apply_calibration
from .features import Catalog, Vocabs, build_vocabs, featurize_tree
from .plan import PlanTree, merge_unary, post_order

log = logging.getLogger(__name__)

DEFAULT_INDEX_OPS = frozenset({"Index Scan", "Index Only Scan", "Bitmap Scan",
                               "Bitmap Index Scan", "Bitmap Heap Scan"})
N_SCALARS = 4  # subquery flag, card_left, card_right, filter_count
LABEL_FLOOR_MS = 1e-3


class TrainingDataError(ValueError):
    pass


@dataclass
class Dims:
    embed_dim: int = 8
    state_dim: int = 16
    hidden_dim: int = 32
    backbone_layers: int = 1
    state_layers: int = 1
    cost_layers: int = 2


@dataclass
class NodeWeights:
    nonindex: float = 2.0
    last: float = 4.0
    default: float = 1.0

    def __post_init__(self):
        if min(self.nonindex, self.last, self.default) <= 0:
            raise ValueError("node weights must be positive")


@dataclass
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 10
    seed: int = 0
    weights: NodeWeights = field(default_factory=NodeWeights)
    calibration_enabled: bool = True
    dims: Dims = field(default_factory=Dims)
    index_ops: frozenset = DEFAULT_INDEX_OPS

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")

    def snapshot(self) -> dict:
        d = asdict(self)
        d["index_ops"] = sorted(self.index_ops)
        return d


@dataclass
class ModelParams:
    op_embedding: tinynn.EmbeddingTable
    joinkey_embedding: tinynn.EmbeddingTable
    backbone: tinynn.DenseStack
    state_head: tinynn.DenseStack
    cost_head: tinynn.DenseStack
    dims: Dims
    vocabs: Vocabs
    normalizer: float  # max table rows used to scale cardinalities
    config: dict = field(default_factory=dict)

    @property
    def calibration_enabled(self) -> bool:
        return self.config.get("calibration_enabled", True)

    def named_parameters(self) -> list[tuple[str, np.ndarray]]:
        out = [("op_embedding", self.op_embedding.table),
               ("joinkey_embedding", self.joinkey_embedding.table)]
        for name, stack in (("backbone", self.backbone), ("state_head", self.state_head),
                            ("cost_head", self.cost_head)):
            for i, L in enumerate(stack.layers):
                out += [(f"{name}.{i}.W", L.W), (f"{name}.{i}.b", L.b)]
        return out

    def parameters(self) -> list[np.ndarray]:
        return [a for _, a in self.named_parameters()]

    def n_params(self) -> int:
        return sum(a.size for a in self.parameters())


def backbone_in_dim(d: Dims) -> int:
    return 2 * d.embed_dim + N_SCALARS + 2 * d.state_dim + 2


def init_params(vocabs: Vocabs, normalizer: float, dims: Dims | None = None,
                seed: int = 0, config: dict | None = None) -> ModelParams:
    d = dims or Dims()
    rng = np.random.default_rng(seed)
    h = d.hidden_dim

    def stack(n_in, n_layers, n_out, last_act):
        sizes = [n_in] + [h] * (n_layers - 1) + [n_out]
        acts = [tinynn.TANH] * (n_layers - 1) + [last_act]
        return tinynn.DenseStack.init(sizes, acts, rng)

    return ModelParams(
        op_embedding=tinynn.EmbeddingTable.init(len(vocabs.operators), d.embed_dim, rng),
        joinkey_embedding=tinynn.EmbeddingTable.init(len(vocabs.join_keys), d.embed_dim, rng),
        backbone=stack(backbone_in_dim(d), d.backbone_layers, h, tinynn.TANH),
        state_head=stack(h, d.state_layers, d.state_dim, tinynn.TANH),
        cost_head=stack(h, d.cost_layers, 1, tinynn.EXP),
        dims=d, vocabs=vocabs, normalizer=float(normalizer), config=dict(config or {}),
    )


# ---------------------------------------------------------------------------
# per-node forward


@dataclass
class NodeTape:
    backbone: tinynn.Tape
    state: tinynn.Tape
    cost: tinynn.Tape


def node_input(params: ModelParams, fv, left, right) -> np.ndarray:
    sd = params.dims.state_dim
    sl, cl = left if left is not None else (np.zeros(sd), 0.0)
    sr, cr = right if right is not None else (np.zeros(sd), 0.0)
    return np.concatenate([
        params.op_embedding.embed(fv.operator_idx),
        [fv.subquery_flag, fv.card_left, fv.card_right, fv.filter_count],
        params.joinkey_embedding.embed(fv.join_key_idx),
        sl, [math.log1p(cl)], sr, [math.log1p(cr)],
    ])


def node_forward(params: ModelParams, fv, left=None, right=None):
    """One node: returns (state, cost_ms, tape). ``None`` children are the neutral element."""
    x = node_input(params, fv, left, right)
    o, tb = params.backbone.forward(x)
    s, ts = params.state_head.forward(o)
    c, tc = params.cost_head.forward(o)
    return s, float(c[0]), NodeTape(tb, ts, tc)


# ---------------------------------------------------------------------------
# whole plans


@dataclass
class EncodedPlan:
    features: list
    left: np.ndarray
    right: np.ndarray
    node_ids: list[int]
    labels: np.ndarray | None = None
    weights: np.ndarray | None = None

    def __len__(self):
        return len(self.features)


def node_weight(node, is_root: bool, weights: NodeWeights,
                index_ops=DEFAULT_INDEX_OPS) -> float:
    if is_root:
        return weights.last
    if node.operator in index_ops:
        return weights.default
    return weights.nonindex


def prepare_tree(tree: PlanTree, lists: LookupStore | None, calibrate: bool) -> PlanTree:
    """Canonicalize and set ``calibrated_rows`` (vanilla estimates when not calibrating)."""
    t = merge_unary(tree)
    if calibrate and lists is not None:
        t, _ = apply_calibration(t, lists)
    else:
        for n in t.root.walk():
            n.calibrated_rows = n.est_rows
    return t


def encode_plan(params: ModelParams, tree: PlanTree, catalog: Catalog,
                weights: NodeWeights | None = None, index_ops=DEFAULT_INDEX_OPS,
                with_labels: bool = False) -> EncodedPlan:
    nodes = post_order(tree)
    pos = {n.node_id: i for i, n in enumerate(nodes)}
    feats = featurize_tree(tree, catalog, params.vocabs, params.normalizer)
    left = np.array([pos[n.children[0].node_id] if n.children else -1 for n in nodes])
    right = np.array([pos[n.children[1].node_id] if n.children else -1 for n in nodes])
    enc = EncodedPlan(feats, left, right, [n.node_id for n in nodes])
    if with_labels:
        if any(n.actual_time_ms is None for n in nodes):
            raise TrainingDataError("plan has nodes without actual_time_ms labels")
        enc.labels = np.array([max(n.actual_time_ms, LABEL_FLOOR_MS) for n in nodes])
        w = weights or NodeWeights()
        enc.weights = np.array([node_weight(n, i == len(nodes) - 1, w, index_ops)
                                for i, n in enumerate(nodes)])
    return enc


def forward_plan(params: ModelParams, enc: EncodedPlan, keep_tapes: bool = False):
    n = len(enc)
    states = [None] * n
    costs = np.zeros(n)
    tapes = [] if keep_tapes else None
    for i, fv in enumerate(enc.features):
        l, r = enc.left[i], enc.right[i]
        left = (states[l], costs[l]) if l >= 0 else None
        right = (states[r], costs[r]) if r >= 0 else None
        s, c, tape = node_forward(params, fv, left, right)
        states[i], costs[i] = s, c
        if keep_tapes:
            tapes.append(tape)
    return costs, tapes


def plan_loss(costs, labels, lambdas) -> float:
    """Node-weighted mean Q-error of one plan."""
    c, l, w = (np.asarray(a, dtype=float) for a in (costs, labels, lambdas))
    if c.shape != l.shape or c.shape != w.shape:
        raise ValueError("costs, labels and weights must align")
    if np.any(c <= 0) or np.any(l <= 0):
        raise TrainingDataError("costs and labels must be positive")
    return float(np.mean(w * np.maximum(c / l, l / c)))


def plan_gradients(params: ModelParams, enc: EncodedPlan):
    """Loss of one labeled plan and its gradient w.r.t. every parameter (same order)."""
    costs, tapes = forward_plan(params, enc, keep_tapes=True)
    n = len(enc)
    lab, lam = enc.labels, enc.weights
    loss = plan_loss(costs, lab, lam)
    # subgradient of max(c/l, l/c); ties take the c/l branch
    gc = np.where(costs >= lab, 1.0 / lab, -lab / costs ** 2) * lam / n
    sd, ed = params.dims.state_dim, params.dims.embed_dim
    gs = np.zeros((n, sd))

    g_op = np.zeros_like(params.op_embedding.table)
    g_jk = np.zeros_like(params.joinkey_embedding.table)
    g_bb = params.backbone.zero_grads()
    g_st = params.state_head.zero_grads()
    g_co = params.cost_head.zero_grads()

    o_scal = ed
    o_jk = ed + N_SCALARS
    o_sl = o_jk + ed
    o_cl = o_sl + sd
    o_sr = o_cl + 1
    o_cr = o_sr + sd
    for i in range(n - 1, -1, -1):
        t = tapes[i]
        _, go = params.cost_head.backward(t.cost, np.array([gc[i]]), g_co)
        _, go2 = params.state_head.backward(t.state, gs[i], g_st)
        _, gx = params.backbone.backward(t.backbone, go + go2, g_bb)
        fv = enc.features[i]
        g_op[fv.operator_idx] += gx[:o_scal]
        g_jk[fv.join_key_idx] += gx[o_jk:o_sl]
        l, r = enc.left[i], enc.right[i]
        if l >= 0:
            gs[l] += gx[o_sl:o_cl]
            gc[l] += gx[o_cl] / (1.0 + costs[l])
        if r >= 0:
            gs[r] += gx[o_sr:o_cr]
            gc[r] += gx[o_cr] / (1.0 + costs[r])
    return loss, [g_op, g_jk] + g_bb + g_st + g_co


def estimate(params: ModelParams, tree: PlanTree, catalog: Catalog,
             lists: LookupStore | None = None, calibrate: bool | None = None):
    """Estimated root cost (ms) and per-node costs keyed by node id."""
    if calibrate is None:
        calibrate = params.calibration_enabled
    t = prepare_tree(tree, lists, calibrate)
    enc = encode_plan(params, t, catalog)
    costs, _ = forward_plan(params, enc)
    return float(costs[-1]), dict(zip(enc.node_ids, costs.tolist()))


def estimate_prepared(params: ModelParams, tree: PlanTree, catalog: Catalog) -> float:
    """Root cost of a tree whose ``calibrated_rows`` are already set."""
    costs, _ = forward_plan(params, encode_plan(params, tree, catalog))
    return float(costs[-1])


def train(samples: list[PlanTree], catalog: Catalog, lists: LookupStore | None,
          config: TrainConfig | None = None, prepared: bool = False):
    """Fit a model; returns ``(params, per-epoch mean loss)``.

    With ``prepared=True`` the samples are taken as already canonicalized and
    calibrated (or not) according to ``config.calibration_enabled``.
    """
    cfg = config or TrainConfig()
    if not samples:
        raise TrainingDataError("empty training set")
    trees = samples if prepared else [prepare_tree(t, lists, cfg.calibration_enabled)
                                      for t in samples]
    params = init_params(build_vocabs(trees), catalog.max_rows, cfg.dims, cfg.seed,
                         cfg.snapshot())
    encs = [encode_plan(params, t, catalog, cfg.weights, cfg.index_ops, with_labels=True)
            for t in trees]
    # start the exp head at the typical label magnitude
    params.cost_head.layers[-1].b[:] = np.mean(np.concatenate([np.log(e.labels) for e in encs]))

    state = tinynn.AdamState(lr=cfg.lr)
    plist = params.parameters()
    rng = np.random.default_rng(cfg.seed)
    trace = []
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        total = 0.0
        for k in rng.permutation(len(encs)):
            loss, grads = plan_gradients(params, encs[k])
            tinynn.adam_step(plist, grads, state)
            total += loss
        trace.append(total / len(encs))
        log.info("epoch %d mean loss %.4f (%.1fs)", epoch + 1, trace[-1], time.perf_counter() - t0)
    return params, trace
