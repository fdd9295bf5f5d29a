"""Scikit-learn style estimators wrapping the training harnesses.

Both tasks are amortized: the canonical protocol trains on freshly sampled
sets, so ``fit`` accepts ``X=None`` to use the generative recipe.  Passing
explicit data instead trains by resampling minibatches from it.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import tasks
from . import tensor as T
from . import training
from .rng import Rng
from .training import TrainConfig


def check_set_list(X, dim: int, name: str = "X") -> list[np.ndarray]:
    """Validate a list of variable-size sets, each an (n_i, dim) float array."""
    out = []
    for i, s in enumerate(X):
        arr = np.asarray(s, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        if arr.ndim != 2 or arr.shape[1] != dim or arr.shape[0] < 1:
            raise ValueError(
                f"{name}[{i}]: expected a non-empty (n, {dim}) array, "
                f"got shape {np.asarray(s).shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"{name}[{i}] contains non-finite values")
        out.append(arr)
    return out


def check_points(X, dim: int) -> np.ndarray:
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != dim or arr.shape[0] < 1:
        raise ValueError(f"expected a non-empty (n, {dim}) array, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("input contains non-finite values")
    return arr


class _SetEstimator(BaseEstimator):
    def _check_fitted(self):
        if getattr(self, "model_", None) is None:
            raise NotFittedError(
                f"{type(self).__name__} is not fitted; call fit() first")


class MaxSetRegressor(_SetEstimator):
    """Predicts the maximum of a set of reals with a set attention network.

    Parameters mirror the training recipe: encoder blocks, pooling kind,
    model width/heads, and the optimizer schedule.
    """

    def __init__(self, encoder=("sab", "sab"), pooling="pma:1", dim=64,
                 heads=4, steps=20000, batch_size=128, lr=1e-3, seed=0,
                 eval_every=2000, workers=1):
        self.encoder = encoder
        self.pooling = pooling
        self.dim = dim
        self.heads = heads
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.seed = seed
        self.eval_every = eval_every
        self.workers = workers

    def _config(self) -> TrainConfig:
        return TrainConfig(
            task=training.TASK_MAX_REGRESSION, encoder=tuple(self.encoder),
            pooling=self.pooling, dim=self.dim, heads=self.heads,
            steps=self.steps, batch_size=self.batch_size, lr=self.lr,
            seed=self.seed, eval_every=self.eval_every, workers=self.workers)

    def fit(self, X=None, y=None):
        cfg = self._config()
        if X is None:
            self.model_, self.history_ = training.train_max_regression(cfg)
            return self
        sets = check_set_list(X, 1)
        y = np.asarray(y, dtype=np.float64)
        if y.shape != (len(sets),):
            raise ValueError(f"y must have one target per set, got {y.shape}")
        pool = list(zip(sets, y))
        rng = Rng(cfg.seed)

        def make_batch(r):
            idx = r.integers(0, len(pool), size=cfg.batch_size)
            return [pool[i] for i in idx]

        def eval_fn(model, r):
            with T.no_grad():
                errs = [abs(model(s).item() - t) for s, t in pool[:200]]
            return {"mae": float(np.mean(errs))}

        self.model_, self.history_ = training._train_loop(
            cfg, training._max_loss, make_batch, eval_fn)
        return self

    def predict(self, X) -> np.ndarray:
        self._check_fitted()
        sets = check_set_list(X, 1)
        with T.no_grad():
            return np.array([self.model_(s).item() for s in sets])

    def score(self, X, y) -> float:
        """Negative mean absolute error (larger is better)."""
        y = np.asarray(y, dtype=np.float64)
        return -float(np.mean(np.abs(self.predict(X) - y)))


class AmortizedMoGClusterer(_SetEstimator):
    """Maps a 2D point set directly to mixture-of-Gaussians parameters.

    ``fit`` trains the amortized network on synthetic mixture draws;
    ``predict`` assigns cluster labels to a new point set in one forward
    pass, optionally refined by EM steps.
    """

    def __init__(self, encoder=("isab:16", "isab:16"), pooling="pma:4",
                 post_sabs=1, dim=64, heads=4, k=4, steps=10000,
                 batch_size=10, lr=1e-3, lr_decay_step=7000, seed=0,
                 n_min=100, n_max=500, eval_every=2000, workers=1):
        self.encoder = encoder
        self.pooling = pooling
        self.post_sabs = post_sabs
        self.dim = dim
        self.heads = heads
        self.k = k
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.lr_decay_step = lr_decay_step
        self.seed = seed
        self.n_min = n_min
        self.n_max = n_max
        self.eval_every = eval_every
        self.workers = workers

    def _config(self) -> TrainConfig:
        return TrainConfig(
            task=training.TASK_CLUSTERING, encoder=tuple(self.encoder),
            pooling=self.pooling, post_sabs=self.post_sabs, dim=self.dim,
            heads=self.heads, steps=self.steps, batch_size=self.batch_size,
            lr=self.lr, lr_decay_step=self.lr_decay_step, seed=self.seed,
            eval_every=self.eval_every, workers=self.workers,
            mog_k=self.k, mog_n_min=self.n_min, mog_n_max=self.n_max)

    def fit(self, X=None, y=None):
        cfg = self._config()
        if X is None:
            self.model_, self.history_ = training.train_amortized_clustering(cfg)
            return self
        pool = check_set_list(X, 2)
        loss_fn = training._clustering_loss(cfg)

        def make_batch(r):
            idx = r.integers(0, len(pool), size=cfg.batch_size)
            return [pool[i] for i in idx]

        def eval_fn(model, r):
            lls = []
            for pts in pool[:50]:
                theta = training.predict_mog(model, pts, cfg.mog_k)
                lls.append(tasks.mog_loglik_np(pts, theta)[1])
            return {"ll0": float(np.mean(lls))}

        self.model_, self.history_ = training._train_loop(
            cfg, loss_fn, make_batch, eval_fn)
        return self

    def predict_mixture(self, X) -> tasks.MoGParams:
        self._check_fitted()
        return training.predict_mog(self.model_, check_points(X, 2), self.k)

    def predict(self, X, em_steps: int = 0) -> np.ndarray:
        pts = check_points(X, 2)
        theta = self.predict_mixture(pts)
        for _ in range(em_steps):
            theta, _ = tasks.em_step(pts, theta)
        return tasks.assign_clusters(pts, theta)

    def fit_predict(self, X, y=None) -> np.ndarray:
        return self.fit().predict(X)

    def score(self, X, y=None) -> float:
        """Average per-datum log-likelihood of the predicted mixture."""
        pts = check_points(X, 2)
        return tasks.mog_loglik_np(pts, self.predict_mixture(pts))[1]
