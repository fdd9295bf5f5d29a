"""Set attention blocks: Att, Multihead, MAB, SAB, ISAB, PMA and baselines.

All blocks are pure functions of (inputs, parameter container).  Softmax
scaling uses sqrt(d) of the full model dimension, not the per-head width.
No dropout, no positional encoding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .rng import Rng
from .tensor import Parameter, Tensor

LAYERNORM_EPS = 1e-5


# ---------------------------------------------------------------------------
# Parameter containers and initialization
# ---------------------------------------------------------------------------

def xavier_uniform(rng: Rng, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


@dataclass
class MultiheadParams:
    heads: int
    wq: list[Parameter]  # per head, d x d/h
    wk: list[Parameter]
    wv: list[Parameter]
    wo: Parameter        # d x d

    @staticmethod
    def create(name: str, d: int, heads: int, rng: Rng) -> "MultiheadParams":
        if d % heads != 0:
            raise ValueError(f"model dim {d} not divisible by {heads} heads")
        dh = d // heads
        mk = lambda nm: Parameter(nm, xavier_uniform(rng, d, dh))
        return MultiheadParams(
            heads=heads,
            wq=[mk(f"{name}.wq{j}") for j in range(heads)],
            wk=[mk(f"{name}.wk{j}") for j in range(heads)],
            wv=[mk(f"{name}.wv{j}") for j in range(heads)],
            wo=Parameter(f"{name}.wo", xavier_uniform(rng, d, d)),
        )

    def parameters(self) -> list[Parameter]:
        return [*self.wq, *self.wk, *self.wv, self.wo]


@dataclass
class MABParams:
    mh: MultiheadParams
    w_ff: Parameter   # d x d, single FC with ReLU
    b_ff: Parameter   # 1 x d
    ln1_g: Parameter
    ln1_b: Parameter
    ln2_g: Parameter
    ln2_b: Parameter

    @staticmethod
    def create(name: str, d: int, heads: int, rng: Rng) -> "MABParams":
        return MABParams(
            mh=MultiheadParams.create(f"{name}.mh", d, heads, rng),
            w_ff=Parameter(f"{name}.w_ff", xavier_uniform(rng, d, d)),
            b_ff=Parameter(f"{name}.b_ff", np.zeros((1, d))),
            ln1_g=Parameter(f"{name}.ln1_g", np.ones((1, d))),
            ln1_b=Parameter(f"{name}.ln1_b", np.zeros((1, d))),
            ln2_g=Parameter(f"{name}.ln2_g", np.ones((1, d))),
            ln2_b=Parameter(f"{name}.ln2_b", np.zeros((1, d))),
        )

    def parameters(self) -> list[Parameter]:
        return [*self.mh.parameters(), self.w_ff, self.b_ff,
                self.ln1_g, self.ln1_b, self.ln2_g, self.ln2_b]


@dataclass
class ISABParams:
    inducing: Parameter  # m x d
    mab1: MABParams
    mab2: MABParams

    @staticmethod
    def create(name: str, d: int, heads: int, m: int, rng: Rng) -> "ISABParams":
        if m < 1:
            raise ValueError(f"need at least one inducing point, got {m}")
        return ISABParams(
            inducing=Parameter(f"{name}.I",
                               rng.normal(0.0, 1.0 / math.sqrt(d), size=(m, d))),
            mab1=MABParams.create(f"{name}.mab1", d, heads, rng),
            mab2=MABParams.create(f"{name}.mab2", d, heads, rng),
        )

    def parameters(self) -> list[Parameter]:
        return [self.inducing, *self.mab1.parameters(), *self.mab2.parameters()]


@dataclass
class PMAParams:
    seeds: Parameter  # k x d
    mab: MABParams
    # Opt-in leading row-wise FC on Z; off by default because the previous
    # block already ends in a feed-forward layer.
    w_pre: Parameter | None = None
    b_pre: Parameter | None = None

    @staticmethod
    def create(name: str, d: int, heads: int, k: int, rng: Rng,
               pre_rff: bool = False) -> "PMAParams":
        if k < 1:
            raise ValueError(f"need at least one seed vector, got {k}")
        p = PMAParams(
            seeds=Parameter(f"{name}.S",
                            rng.normal(0.0, 1.0 / math.sqrt(d), size=(k, d))),
            mab=MABParams.create(f"{name}.mab", d, heads, rng),
        )
        if pre_rff:
            p.w_pre = Parameter(f"{name}.w_pre", xavier_uniform(rng, d, d))
            p.b_pre = Parameter(f"{name}.b_pre", np.zeros((1, d)))
        return p

    def parameters(self) -> list[Parameter]:
        out = [self.seeds, *self.mab.parameters()]
        if self.w_pre is not None:
            out += [self.w_pre, self.b_pre]
        return out


@dataclass
class RFFPParams:
    """Scalar learnables of the equivariant baseline layer."""
    lam: Parameter  # 1 x 1
    gam: Parameter  # 1 x 1

    @staticmethod
    def create(name: str) -> "RFFPParams":
        return RFFPParams(lam=Parameter(f"{name}.lam", np.ones((1, 1))),
                          gam=Parameter(f"{name}.gam", np.zeros((1, 1))))

    def parameters(self) -> list[Parameter]:
        return [self.lam, self.gam]


# ---------------------------------------------------------------------------
# Forward functions
# ---------------------------------------------------------------------------

def att(q: Tensor, k: Tensor, v: Tensor, sm_scale: float,
        weights: str = "softmax") -> Tensor:
    """Dot-product attention: weights(Q K^T) V.

    ``weights`` selects the activation applied to the score matrix:
    "softmax" (scaled, the default) or "one_plus_relu" (1 + relu(s/scale)),
    which turns zero-query attention into exact sum pooling.
    """
    if q.shape[1] != k.shape[1]:
        raise T.ShapeError(f"att: query dim {q.shape} vs key dim {k.shape}")
    if k.shape[0] != v.shape[0]:
        raise T.ShapeError(f"att: key rows {k.shape} vs value rows {v.shape}")
    scores = T.matmul(q, T.transpose(k))
    if weights == "softmax":
        w = T.softmax_rows(scores, sm_scale)
    elif weights == "one_plus_relu":
        w = T.add_scalar(T.relu(T.scale(scores, 1.0 / sm_scale)), 1.0)
    else:
        raise ValueError(f"unknown attention weight activation {weights!r}")
    return T.matmul(w, v)


def multihead(q: Tensor, k: Tensor, v: Tensor, p: MultiheadParams,
              sm_scale: float, weights: str = "softmax") -> Tensor:
    d = q.shape[1]
    dh = d // p.heads
    # One fused projection per input, then per-head split; identical math to
    # per-head matmuls but far fewer graph nodes.
    qp = T.split_cols(T.matmul(q, T.concat_cols(p.wq)), [dh] * p.heads)
    kp = T.split_cols(T.matmul(k, T.concat_cols(p.wk)), [dh] * p.heads)
    vp = T.split_cols(T.matmul(v, T.concat_cols(p.wv)), [dh] * p.heads)
    heads = [att(qp[j], kp[j], vp[j], sm_scale, weights) for j in range(p.heads)]
    return T.matmul(T.concat_cols(heads), p.wo)


def _rff(h: Tensor, w: Parameter, b: Parameter) -> Tensor:
    return T.relu(T.add(T.matmul(h, w), T.broadcast_row(b, h.shape[0])))


def mab(x: Tensor, y: Tensor, p: MABParams, sm_scale: float | None = None) -> Tensor:
    """LayerNorm(H + rFF(H)) with H = LayerNorm(X + Multihead(X, Y, Y))."""
    d = x.shape[1]
    if y.shape[1] != d:
        raise T.ShapeError(f"mab: X dim {x.shape} vs Y dim {y.shape}")
    if sm_scale is None:
        sm_scale = math.sqrt(d)
    h = T.layernorm_rows(T.add(x, multihead(x, y, y, p.mh, sm_scale)),
                         p.ln1_g, p.ln1_b, LAYERNORM_EPS)
    return T.layernorm_rows(T.add(h, _rff(h, p.w_ff, p.b_ff)),
                            p.ln2_g, p.ln2_b, LAYERNORM_EPS)


def sab(x: Tensor, p: MABParams) -> Tensor:
    return mab(x, x, p)


def isab(x: Tensor, p: ISABParams) -> Tensor:
    h = mab(p.inducing, x, p.mab1)
    return mab(x, h, p.mab2)


def pma(z: Tensor, p: PMAParams) -> Tensor:
    if p.w_pre is not None:
        z = _rff(z, p.w_pre, p.b_pre)
    return mab(p.seeds, z, p.mab)


def rffp_layer(x: Tensor, p: RFFPParams, pool: str) -> Tensor:
    """Equivariant baseline layer: relu(lam * x_i + gam * pool(X)) rowwise."""
    if pool == "mean":
        pooled = T.mean_rows(x)
    elif pool == "max":
        pooled = T.max_rows(x)
    else:
        raise ValueError(f"rffp_layer: unknown pool {pool!r}")
    n = x.shape[0]
    return T.relu(T.add(T.mul_scalar_t(x, p.lam),
                        T.broadcast_row(T.mul_scalar_t(pooled, p.gam), n)))


def dotprod_pool(z: Tensor, w: Tensor) -> Tensor:
    """softmax(Z w^T)-weighted sum of the rows of Z: n x d -> 1 x d."""
    a = T.softmax_rows(T.transpose(T.matmul(z, T.transpose(w))), 1.0)  # 1 x n
    return T.matmul(a, z)
