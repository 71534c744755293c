"""Small dense networks with hand-written reverse mode and Adam."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TANH, IDENTITY, EXP = "tanh", "identity", "exp"
ACTIVATIONS = (TANH, IDENTITY, EXP)

# pre-activation range of the EXP head; outside it the output is held constant
EXP_CLIP = 50.0


class TapeError(RuntimeError):
    pass


@dataclass
class Layer:
    W: np.ndarray  # [out, in]
    b: np.ndarray  # [out]
    act: str = TANH

    def __post_init__(self):
        if self.act not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.act!r}")
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise ValueError("layer weight/bias shapes do not match")


@dataclass
class Tape:
    stack: DenseStack
    xs: list      # input of each layer
    ys: list      # output of each layer


class DenseStack:
    def __init__(self, layers: list[Layer]):
        for a, b in zip(layers, layers[1:]):
            if b.W.shape[1] != a.W.shape[0]:
                raise ValueError("adjacent layer dimensions do not chain")
        self.layers = layers

    @classmethod
    def init(cls, sizes, acts, rng: np.random.Generator) -> DenseStack:
        """Uniform(-sqrt(1/fan_in), sqrt(1/fan_in)) weights and biases."""
        layers = []
        for (fan_in, fan_out), act in zip(zip(sizes, sizes[1:]), acts):
            bound = np.sqrt(1.0 / fan_in)
            layers.append(Layer(rng.uniform(-bound, bound, (fan_out, fan_in)),
                                rng.uniform(-bound, bound, fan_out), act))
        return cls(layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0].W.shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].W.shape[0]

    def params(self) -> list[np.ndarray]:
        return [a for L in self.layers for a in (L.W, L.b)]

    def zero_grads(self) -> list[np.ndarray]:
        return [np.zeros_like(a) for a in self.params()]

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, Tape]:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.in_dim,):
            raise ValueError(f"input dim {x.shape} != ({self.in_dim},)")
        xs, ys = [], []
        for L in self.layers:
            xs.append(x)
            z = L.W @ x + L.b
            if L.act == TANH:
                x = np.tanh(z)
            elif L.act == EXP:
                x = np.exp(np.clip(z, -EXP_CLIP, EXP_CLIP))
                # keep z to know where the clip is active
                xs[-1] = (xs[-1], z)
            else:
                x = z
            ys.append(x)
        return x, Tape(self, xs, ys)

    def backward(self, tape: Tape, gy: np.ndarray, grads: list | None = None):
        """Accumulate parameter gradients into ``grads`` and return (grads, input grad)."""
        if tape.stack is not self or len(tape.xs) != len(self.layers):
            raise TapeError("tape was not recorded by this stack")
        gy = np.asarray(gy, dtype=np.float64)
        if gy.shape != (self.out_dim,):
            raise ValueError(f"output grad dim {gy.shape} != ({self.out_dim},)")
        if grads is None:
            grads = self.zero_grads()
        for i in range(len(self.layers) - 1, -1, -1):
            L = self.layers[i]
            x, y = tape.xs[i], tape.ys[i]
            if L.act == TANH:
                gz = gy * (1.0 - y * y)
            elif L.act == EXP:
                x, z = x
                gz = gy * y * (np.abs(z) < EXP_CLIP)
            else:
                gz = gy
            grads[2 * i] += np.outer(gz, x)
            grads[2 * i + 1] += gz
            gy = L.W.T @ gz
        return grads, gy


class EmbeddingTable:
    def __init__(self, table: np.ndarray):
        self.table = np.asarray(table, dtype=np.float64)

    @classmethod
    def init(cls, vocab_size: int, dim: int, rng: np.random.Generator) -> EmbeddingTable:
        return cls(rng.normal(0.0, 1.0 / np.sqrt(dim), (vocab_size, dim)))

    def __len__(self):
        return self.table.shape[0]

    def embed(self, idx: int) -> np.ndarray:
        if not 0 <= idx < len(self):
            raise IndexError(f"embedding index {idx} out of range [0, {len(self)})")
        return self.table[idx].copy()

    def backward(self, idx: int, g: np.ndarray, grad_table: np.ndarray):
        grad_table[idx] += g
        return grad_table


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState):
    """In-place Adam update with bias correction."""
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or m.shape != p.shape:
            raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state
