"""Task data and task math: max-value regression and 2D mixture clustering.

Mixture likelihoods exist in two forms: a tensor route used during training
(differentiable w.r.t. the predicted parameters) and a plain numpy route
used for evaluation and EM.  Both compute the same log-sum-exp expression
and are tested against each other.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .rng import Rng
from .tensor import ContractError, Tensor

SIGMA_FLOOR = 1e-3
LOG_2PI = math.log(2.0 * math.pi)

# Generative presets for the synthetic clustering task.
MOG_DEFAULT = dict(k=4, n_range=(100, 500), mu_range=(-4.0, 4.0), sigma_gen=0.3)
MOG_LARGE = dict(k=6, n_range=(1000, 5000), mu_range=(-4.0, 4.0), sigma_gen=0.3)


# ---------------------------------------------------------------------------
# Max-value regression
# ---------------------------------------------------------------------------

@dataclass
class MaxRegressionBatch:
    sets: list[np.ndarray]   # each n x 1
    targets: np.ndarray      # per-set maximum


def gen_max_regression(rng: Rng, batch_size: int, n: int | None = None
                       ) -> MaxRegressionBatch:
    """Sets of Unif[0, 100] reals sharing one size n ~ Unif{1..10} per batch.

    The shared-size minibatch is the convention the published mean/sum
    pooling errors correspond to: batches whose optimal prediction depends
    on the hidden size keep those baselines from averaging over sizes, while
    architectures that can locate the maximum are unaffected.
    """
    if n is None:
        n = int(rng.integers(1, 11))
    sets = [rng.uniform(0.0, 100.0, size=(n, 1)) for _ in range(batch_size)]
    targets = np.array([s.max() for s in sets])
    return MaxRegressionBatch(sets=sets, targets=targets)


# ---------------------------------------------------------------------------
# Mixture-of-Gaussians data
# ---------------------------------------------------------------------------

@dataclass
class MoGParams:
    pi: np.ndarray     # (k,) positive, sums to 1
    mu: np.ndarray     # (k, D)
    sigma: np.ndarray  # (k, D) diagonal scales, >= SIGMA_FLOOR expected

    def __post_init__(self):
        self.pi = np.asarray(self.pi, dtype=np.float64)
        self.mu = np.atleast_2d(np.asarray(self.mu, dtype=np.float64))
        self.sigma = np.atleast_2d(np.asarray(self.sigma, dtype=np.float64))
        if np.any(self.sigma <= 0.0):
            raise ContractError("mixture scales must be positive")
        if np.any(self.pi <= 0.0) or abs(self.pi.sum() - 1.0) > 1e-12:
            raise ContractError("mixture weights must be a positive simplex")

    @property
    def k(self) -> int:
        return self.pi.shape[0]

    @property
    def dim(self) -> int:
        return self.mu.shape[1]


@dataclass
class MoGDataset:
    points: np.ndarray   # (n, D)
    labels: np.ndarray   # (n,) component indices, 0-based
    params: MoGParams    # true generating parameters


def gen_synthetic_mog(rng: Rng, k: int = 4, n_range=(100, 500),
                      mu_range=(-4.0, 4.0), sigma_gen: float = 0.3,
                      dim: int = 2, n: int | None = None) -> MoGDataset:
    """Spherical 2D Gaussian clusters with Unif means and Dirichlet(1) weights."""
    if n is None:
        n = int(rng.integers(n_range[0], n_range[1] + 1))
    mu = rng.uniform(mu_range[0], mu_range[1], size=(k, dim))
    pi = rng.dirichlet(np.ones(k))
    pi = np.clip(pi, 1e-12, None)
    pi = pi / pi.sum()
    labels = rng.choice(k, size=n, p=pi)
    points = mu[labels] + rng.normal(0.0, sigma_gen, size=(n, dim))
    sigma = np.full((k, dim), float(sigma_gen))
    return MoGDataset(points=points, labels=labels,
                      params=MoGParams(pi=pi, mu=mu, sigma=sigma))


# ---------------------------------------------------------------------------
# Likelihood: numpy route
# ---------------------------------------------------------------------------

def _log_component_densities(x: np.ndarray, theta: MoGParams) -> np.ndarray:
    """(n, k) matrix of log pi_j + log N(x_i; mu_j, diag sigma_j^2)."""
    n, d = x.shape
    var = theta.sigma ** 2                                    # (k, D)
    diff = x[:, None, :] - theta.mu[None, :, :]               # (n, k, D)
    quad = np.sum(diff * diff / var[None, :, :], axis=2)      # (n, k)
    log_norm = -0.5 * (d * LOG_2PI) - np.log(theta.sigma).sum(axis=1)
    return np.log(theta.pi)[None, :] + log_norm[None, :] - 0.5 * quad


def mog_loglik_np(x: np.ndarray, theta: MoGParams) -> tuple[float, float]:
    """Total and per-datum average log-likelihood, via log-sum-exp."""
    lw = _log_component_densities(x, theta)
    m = lw.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(lw - m).sum(axis=1))
    total = float(lse.sum())
    return total, total / x.shape[0]


# ---------------------------------------------------------------------------
# Likelihood: differentiable tensor route
# ---------------------------------------------------------------------------

def mog_loglik(x: np.ndarray, pi: Tensor, mu: Tensor, sigma: Tensor) -> Tensor:
    """Total log-likelihood as a 1x1 tensor, differentiable in (pi, mu, sigma).

    pi is 1 x k, mu and sigma are k x D.  Expands the quadratic form into
    matrix products so the graph stays small regardless of n.
    """
    if np.any(sigma.data <= 0.0):
        raise ContractError("mixture scales must be positive")
    n, d = x.shape
    k = pi.shape[1]
    x_t = Tensor(x)
    x2_t = Tensor(x * x)
    prec = T.div(Tensor(np.ones((k, d))), T.mul(sigma, sigma))     # 1/sigma^2
    # const_j = sum_d (mu^2 * prec / 2 + log sigma)
    const = T.add(T.scale(T.sum_cols(T.mul(T.mul(mu, mu), prec)), 0.5),
                  T.sum_cols(T.log(sigma)))                        # k x 1
    quad = T.sub(T.scale(T.matmul(x2_t, T.transpose(prec)), 0.5),
                 T.matmul(x_t, T.transpose(T.mul(mu, prec))))      # n x k
    logw = T.sub(T.broadcast_row(T.log(pi), n),
                 T.add(quad, T.broadcast_row(T.transpose(const), n)))
    logw = T.add_scalar(logw, -0.5 * d * LOG_2PI)
    return T.sum_all(T.logsumexp_rows(logw))


def mog_head(decoder_out: Tensor, dim: int) -> tuple[Tensor, Tensor, Tensor]:
    """Map a k x (1 + 2D) decoder output to valid mixture parameters.

    Per row: one mixing logit, D raw means, D raw scales.  Weights are a
    softmax over the k logits; scales go through softplus plus a floor so
    they can never collapse to zero.
    """
    k, width = decoder_out.shape
    if width != 1 + 2 * dim:
        raise T.ShapeError(
            f"mog_head expects k x {1 + 2 * dim} input, got {decoder_out.shape}")
    logits, mu, raw_sigma = T.split_cols(decoder_out, [1, dim, dim])
    pi = T.softmax_rows(T.transpose(logits), 1.0)       # 1 x k
    sigma = T.add_scalar(T.softplus(raw_sigma), SIGMA_FLOOR)
    return pi, mu, sigma


def mog_params_from_head(decoder_out: Tensor, dim: int) -> MoGParams:
    pi, mu, sigma = mog_head(decoder_out, dim)
    return MoGParams(pi=pi.data[0], mu=mu.data, sigma=sigma.data)


# ---------------------------------------------------------------------------
# EM refinement and cluster assignment
# ---------------------------------------------------------------------------

def responsibilities(x: np.ndarray, theta: MoGParams) -> np.ndarray:
    lw = _log_component_densities(x, theta)
    lw = lw - lw.max(axis=1, keepdims=True)
    r = np.exp(lw)
    return r / r.sum(axis=1, keepdims=True)


def em_step(x: np.ndarray, theta: MoGParams,
            sigma_floor: float = SIGMA_FLOOR) -> tuple[MoGParams, dict]:
    """One EM update.  Components with no responsibility mass keep their
    mean/scale and are reported in the metadata."""
    n = x.shape[0]
    r = responsibilities(x, theta)           # (n, k)
    nj = r.sum(axis=0)                       # (k,)
    empty = nj < 1e-12

    pi = np.clip(nj / n, 1e-12, None)
    pi = pi / pi.sum()
    mu = theta.mu.copy()
    sigma = theta.sigma.copy()
    for j in np.flatnonzero(~empty):
        w = r[:, j:j + 1]
        mu[j] = (w * x).sum(axis=0) / nj[j]
        var = (w * (x - mu[j]) ** 2).sum(axis=0) / nj[j]
        sigma[j] = np.sqrt(np.maximum(var, sigma_floor ** 2))
    meta = {"empty_components": np.flatnonzero(empty).tolist()}
    return MoGParams(pi=pi, mu=mu, sigma=sigma), meta


def assign_clusters(x: np.ndarray, theta: MoGParams) -> np.ndarray:
    """Posterior argmax per point; ties break toward the lowest index."""
    return np.argmax(_log_component_densities(x, theta), axis=1)


# ---------------------------------------------------------------------------
# Adjusted Rand Index
# ---------------------------------------------------------------------------

def ari(a, b) -> float:
    """Adjusted Rand index from the pair-counting contingency table."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"label vectors differ: {a.shape} vs {b.shape}")
    n = a.size
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    ka, kb = ai.max() + 1, bi.max() + 1
    table = np.bincount(ai * kb + bi, minlength=ka * kb).reshape(ka, kb)
    comb = lambda v: (v * (v - 1) // 2).sum()
    sum_ij = comb(table)
    sum_a = comb(table.sum(axis=1))
    sum_b = comb(table.sum(axis=0))
    total = n * (n - 1) // 2
    expected = sum_a * sum_b / total
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        return 1.0
    return float((sum_ij - expected) / (max_index - expected))


# ---------------------------------------------------------------------------
# Dataset serialization
# ---------------------------------------------------------------------------
# Flat binary layout, little-endian: magic "MOGD", u32 version, then u64
# n/D/k, f64 points (row-major), i64 labels, f64 pi, f64 mu, f64 sigma.

_MAGIC = b"MOGD"
_VERSION = 1


def save_dataset(ds: MoGDataset, path) -> None:
    n, d = ds.points.shape
    k = ds.params.k
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", _VERSION))
        f.write(struct.pack("<QQQ", n, d, k))
        f.write(ds.points.astype("<f8").tobytes())
        f.write(ds.labels.astype("<i8").tobytes())
        f.write(ds.params.pi.astype("<f8").tobytes())
        f.write(ds.params.mu.astype("<f8").tobytes())
        f.write(ds.params.sigma.astype("<f8").tobytes())


def load_dataset(path) -> MoGDataset:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != _MAGIC:
        raise ValueError(f"bad dataset magic {raw[:4]!r}")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != _VERSION:
        raise ValueError(f"unsupported dataset version {version}")
    n, d, k = struct.unpack_from("<QQQ", raw, 8)
    off = 32
    expect = off + 8 * (n * d + n + k + 2 * k * d)
    if len(raw) != expect:
        raise ValueError(f"dataset truncated: {len(raw)} bytes, expected {expect}")
    def take(count, dtype):
        nonlocal off
        out = np.frombuffer(raw, dtype=dtype, count=count, offset=off).copy()
        off += 8 * count
        return out
    points = take(n * d, "<f8").reshape(n, d)
    labels = take(n, "<i8")
    pi = take(k, "<f8")
    mu = take(k * d, "<f8").reshape(k, d)
    sigma = take(k * d, "<f8").reshape(k, d)
    return MoGDataset(points=points, labels=labels,
                      params=MoGParams(pi=pi, mu=mu, sigma=sigma))


def export_dataset_csv(ds: MoGDataset, path) -> None:
    d = ds.points.shape[1]
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow([f"x{i}" for i in range(d)] + ["label"])
        for row, lab in zip(ds.points, ds.labels):
            w.writerow([repr(float(v)) for v in row] + [int(lab)])
