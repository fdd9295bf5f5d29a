"""Executable property suites: gradients, permutations, pooling lemmas, EM.

Each suite returns a :class:`SuiteResult` with per-case worst errors, so the
CLI can print what failed and with which seed.  The gradient suite walks a
registry of named cases; tests inject faults through that registry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import blocks as B
from . import tasks
from . import tensor as T
from .model import DecoderConfig, EncoderConfig, SetModel
from .rng import Rng
from .tensor import Parameter, Tensor

GRAD_TOL = 1e-6
PERM_TOL = 1e-9
LEMMA_TOL = 1e-12
EM_SLACK = 1e-9


@dataclass
class SuiteResult:
    name: str
    seed: int
    errors: dict[str, float]   # case name -> worst observed error
    tol: float
    failures: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    @property
    def worst(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0


def _rel(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)),
                                             np.max(np.abs(b)), 1.0))


# ---------------------------------------------------------------------------
# Gradient suite
# ---------------------------------------------------------------------------

def _param(rng: Rng, name: str, rows: int, cols: int) -> Parameter:
    return Parameter(name, rng.normal(0.0, 1.0, size=(rows, cols)))


def _case_matmul(rng):
    a, b = _param(rng, "a", 3, 4), _param(rng, "b", 4, 2)
    return lambda: T.sum_all(T.matmul(a, b)), [a, b]


def _case_elementwise(rng):
    a, b = _param(rng, "a", 3, 5), _param(rng, "b", 3, 5)
    c = _param(rng, "c", 3, 5)
    c.data = np.abs(c.data) + 0.5  # keep div/log away from zero

    def fwd():
        z = T.add(T.mul(a, b), T.sub(a, b))
        z = T.add(T.div(z, c), T.log(c))
        return T.mean_all(T.add(T.relu(z), T.softplus(T.neg(z))))

    return fwd, [a, b, c]


def _case_structural(rng):
    a = _param(rng, "a", 4, 6)

    def fwd():
        parts = T.split_cols(a, [2, 3, 1])
        z = T.concat_cols([T.scale(parts[1], 2.0), parts[0], parts[2]])
        z = T.add(z, T.broadcast_row(T.mean_rows(z), z.shape[0]))
        z = T.transpose(T.reshape(z, 3, 8))
        return T.sum_all(T.mul(z, z))

    return fwd, [a]


def _case_reductions(rng):
    a = _param(rng, "a", 4, 4)

    def fwd():
        z = T.concat_cols([T.sum_cols(a), T.transpose(T.sum_rows(a)),
                           T.transpose(T.max_rows(a))])
        return T.sum_all(T.abs_(z))

    return fwd, [a]


def _case_softmax(rng):
    a = _param(rng, "a", 3, 5)
    return (lambda: T.sum_all(T.mul(T.softmax_rows(a, 1.7), a))), [a]


def _case_logsumexp(rng):
    a = _param(rng, "a", 4, 5)
    return (lambda: T.sum_all(T.logsumexp_rows(a))), [a]


def _case_layernorm(rng):
    a = _param(rng, "a", 4, 6)
    g, b = _param(rng, "g", 1, 6), _param(rng, "b", 1, 6)
    return (lambda: T.sum_all(T.mul(T.layernorm_rows(a, g, b, 1e-5), a))), [a, g, b]


def _case_scalar_ops(rng):
    a = _param(rng, "a", 3, 4)
    s = _param(rng, "s", 1, 1)
    return (lambda: T.mean_all(T.exp(T.scale(T.mul_scalar_t(a, s), 0.3)))), [a, s]


def _case_mab(rng):
    p = B.MABParams.create("mab", 4, 2, rng)
    x = Tensor(rng.normal(0.0, 1.0, size=(3, 4)))
    y = Tensor(rng.normal(0.0, 1.0, size=(5, 4)))
    probe = Tensor(rng.normal(0.0, 1.0, size=(3, 4)))
    return (lambda: T.sum_all(T.mul(B.mab(x, y, p), probe))), p.parameters()


def _case_sab_pma(rng):
    enc = EncoderConfig(blocks=("sab",), dim=4, heads=2)
    dec = DecoderConfig(pooling="pma:1", head=(1,))
    model = SetModel(1, enc, dec, rng)
    x = rng.uniform(0.0, 1.0, size=(3, 1))
    return (lambda: model(x)), model.parameters()


def _case_mog_head(rng):
    out = _param(rng, "dec", 4, 5)
    x = rng.normal(0.0, 1.0, size=(6, 2))

    def fwd():
        pi, mu, sigma = tasks.mog_head(out, 2)
        return tasks.mog_loglik(x, pi, mu, sigma)

    return fwd, [out]


def _case_rffp(rng):
    p = B.RFFPParams.create("rffp")
    p.lam.data[:] = 0.8
    p.gam.data[:] = -0.4
    x = _param(rng, "x", 4, 3)
    x.data += 0.05  # keep relu kinks away from finite-difference probes
    return (lambda: T.sum_all(B.rffp_layer(x, p, "mean"))), [x, *p.parameters()]


GRAD_CASES = {
    "matmul": _case_matmul,
    "elementwise": _case_elementwise,
    "structural": _case_structural,
    "reductions": _case_reductions,
    "softmax_rows": _case_softmax,
    "logsumexp_rows": _case_logsumexp,
    "layernorm_rows": _case_layernorm,
    "scalar_ops": _case_scalar_ops,
    "mab": _case_mab,
    "sab_pma_model": _case_sab_pma,
    "mog_head_loglik": _case_mog_head,
    "rffp_layer": _case_rffp,
}


def grad_suite(seed: int = 0, h: float = 1e-5) -> SuiteResult:
    res = SuiteResult("grad", seed, {}, GRAD_TOL)
    for name, make in GRAD_CASES.items():
        fwd, params = make(Rng(seed))
        err = T.finite_diff_check(fwd, params, h)
        res.errors[name] = err
        if err > GRAD_TOL:
            res.failures.append(name)
    return res


# ---------------------------------------------------------------------------
# Permutation suite
# ---------------------------------------------------------------------------

_PERM_ARCHS = [
    (("sab", "sab"), "pma:1", 0, (1,)),
    (("isab:4", "isab:4"), "pma:2", 1, (3,)),
    (("rff", "sab"), "mean", 0, (8, 1)),
    (("rffp-mean", "rffp-max"), "dotprod", 0, (2,)),
    (("isab:3", "sab"), "pma:4", 1, (5,)),
]


def perm_suite(seed: int = 0, n_perms: int = 100,
               archs=None) -> SuiteResult:
    """Block equivariance and full-model invariance under row permutations."""
    res = SuiteResult("perm", seed, {}, PERM_TOL)
    rng = Rng(seed)
    n, d, heads = 6, 8, 2

    x = Tensor(rng.normal(0.0, 1.0, size=(n, d)))
    sab_p = B.MABParams.create("s", d, heads, rng)
    isab_p = B.ISABParams.create("i", d, heads, 3, rng)
    rffp_p = B.RFFPParams.create("r")
    rffp_p.lam.data[:] = 0.7
    rffp_p.gam.data[:] = -1.3
    block_fns = {
        "sab_equivariance": lambda z: B.sab(z, sab_p),
        "isab_equivariance": lambda z: B.isab(z, isab_p),
        "rffp_equivariance": lambda z: B.rffp_layer(z, rffp_p, "mean"),
    }
    for name, fn in block_fns.items():
        base = fn(x).data
        worst = 0.0
        for _ in range(n_perms):
            perm = rng.permutation(n)
            out = fn(Tensor(x.data[perm])).data
            worst = max(worst, _rel(out, base[perm]))
        res.errors[name] = worst
        if worst > PERM_TOL:
            res.failures.append(name)

    for blocks_, pooling, post, head in (archs or _PERM_ARCHS):
        enc = EncoderConfig(blocks=blocks_, dim=d, heads=heads)
        dec = DecoderConfig(pooling=pooling, post_sabs=post, head=head)
        model = SetModel(2, enc, dec, rng)
        xa = rng.normal(0.0, 1.0, size=(n, 2))
        base = model(xa).data
        worst = 0.0
        for _ in range(n_perms):
            perm = rng.permutation(n)
            worst = max(worst, _rel(model(xa[perm]).data, base))
        name = f"invariance[{'+'.join(blocks_)}/{pooling}]"
        res.errors[name] = worst
        if worst > PERM_TOL:
            res.failures.append(name)
    return res


# ---------------------------------------------------------------------------
# Lemma constructions
# ---------------------------------------------------------------------------

def _identity_multihead(d: int, heads: int) -> B.MultiheadParams:
    """Per-head slice-selector projections with an identity output matrix."""
    dh = d // heads
    eye = np.eye(d)
    mk = lambda nm, j: Parameter(nm, eye[:, j * dh:(j + 1) * dh].copy())
    return B.MultiheadParams(
        heads=heads,
        wq=[mk(f"id.wq{j}", j) for j in range(heads)],
        wk=[mk(f"id.wk{j}", j) for j in range(heads)],
        wv=[mk(f"id.wv{j}", j) for j in range(heads)],
        wo=Parameter("id.wo", eye.copy()),
    )


def lemma_suite(seed: int = 0) -> SuiteResult:
    res = SuiteResult("lemma", seed, {}, LEMMA_TOL)
    rng = Rng(seed)
    n, d, heads = 7, 8, 4
    z = Tensor(rng.normal(0.0, 2.0, size=(n, d)))
    zero_q = Tensor(np.zeros((1, d)))

    # Zero-query softmax attention reproduces the exact column mean.
    mean_out = B.att(zero_q, z, z, math.sqrt(d)).data
    err = float(np.max(np.abs(mean_out - z.data.mean(axis=0, keepdims=True))))
    res.errors["zero_query_mean"] = err

    # Zero seed + (1 + relu) weights + identity projections give sum pooling.
    mh = _identity_multihead(d, heads)
    sum_out = B.multihead(zero_q, z, z, mh, math.sqrt(d),
                          weights="one_plus_relu").data
    err = float(np.max(np.abs(sum_out - z.data.sum(axis=0, keepdims=True))))
    res.errors["zero_seed_sum"] = err

    res.failures = [k for k, v in res.errors.items() if v > LEMMA_TOL]
    return res


# ---------------------------------------------------------------------------
# EM monotonicity
# ---------------------------------------------------------------------------

def em_suite(seed: int = 0, n_trials: int = 200) -> SuiteResult:
    res = SuiteResult("em", seed, {}, EM_SLACK)
    rng = Rng(seed)
    worst_drop = 0.0
    for _ in range(n_trials):
        k = int(rng.integers(1, 5))
        n = int(rng.integers(20, 120))
        ds = tasks.gen_synthetic_mog(rng, k=k, n=n)
        theta = tasks.MoGParams(
            pi=np.full(k, 1.0 / k),
            mu=rng.uniform(-4.0, 4.0, size=(k, 2)),
            sigma=np.abs(rng.normal(0.5, 0.3, size=(k, 2))) + 0.05,
        )
        _, ll0 = tasks.mog_loglik_np(ds.points, theta)
        theta1, _ = tasks.em_step(ds.points, theta)
        _, ll1 = tasks.mog_loglik_np(ds.points, theta1)
        worst_drop = max(worst_drop, ll0 - ll1)
    res.errors["worst_ll_drop"] = worst_drop
    if worst_drop > EM_SLACK:
        res.failures.append("worst_ll_drop")
    return res


SUITES = {
    "grad": grad_suite,
    "perm": perm_suite,
    "lemma": lemma_suite,
    "em": em_suite,
}


def run_suites(names, seed: int = 0) -> list[SuiteResult]:
    return [SUITES[n](seed=seed) for n in names]
