"""Independent-output Gaussian process surrogate with an ARD Matérn 5/2 kernel.

Each objective gets its own GP. Targets are standardized (zero mean, unit
variance) before fitting and predictions are mapped back, so callers only ever
see values in the units they trained on.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, lapack, solve_triangular
from scipy.optimize import minimize

log = logging.getLogger(__name__)

SQRT5 = math.sqrt(5.0)
LOG_2PI = math.log(2.0 * math.pi)

LENGTHSCALE_BOUNDS = (1e-3, 10.0)
SIGNAL_BOUNDS = (1e-4, 100.0)
NOISE_BOUNDS = (1e-8, 1.0)
JITTER_LADDER = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)
VARIANCE_FLOOR = 1e-12


class SurrogateError(RuntimeError):
    pass


@dataclass(frozen=True)
class KernelHyperparams:
    lengthscales: np.ndarray
    signal_variance: float
    noise_variance: float

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        object.__setattr__(self, "lengthscales", ls)
        if np.any(ls <= 0) or self.signal_variance <= 0 or self.noise_variance <= 0:
            raise ValueError("kernel hyperparameters must be strictly positive")

    def to_log(self) -> np.ndarray:
        return np.concatenate((np.log(self.lengthscales), [math.log(self.signal_variance), math.log(self.noise_variance)]))

    @classmethod
    def from_log(cls, theta) -> "KernelHyperparams":
        theta = np.asarray(theta, dtype=float)
        return cls(np.exp(theta[:-2]), float(np.exp(theta[-2])), float(np.exp(theta[-1])))


def _scaled_sqdist(X1: np.ndarray, X2: np.ndarray, lengthscales: np.ndarray) -> np.ndarray:
    A = X1 / lengthscales
    B = X2 / lengthscales
    d2 = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.maximum(d2, 0.0)


def matern52_matrix(X1, X2, lengthscales, signal_variance) -> np.ndarray:
    X1 = np.atleast_2d(np.asarray(X1, dtype=float))
    X2 = np.atleast_2d(np.asarray(X2, dtype=float))
    r = np.sqrt(_scaled_sqdist(X1, X2, np.asarray(lengthscales, dtype=float)))
    return signal_variance * (1.0 + SQRT5 * r + (5.0 / 3.0) * r * r) * np.exp(-SQRT5 * r)


def matern52(x1, x2, hyp: KernelHyperparams) -> float:
    x1 = np.asarray(x1, dtype=float).ravel()
    x2 = np.asarray(x2, dtype=float).ravel()
    if x1.shape != x2.shape or x1.shape != hyp.lengthscales.shape:
        raise ValueError(f"dimension mismatch: {x1.shape}, {x2.shape}, lengthscales {hyp.lengthscales.shape}")
    d = math.sqrt(float(np.sum(((x1 - x2) / hyp.lengthscales) ** 2)))
    return hyp.signal_variance * (1.0 + SQRT5 * d + (5.0 / 3.0) * d * d) * math.exp(-SQRT5 * d)


def _cholesky(K: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``K``, escalating diagonal jitter on failure."""
    for jitter in JITTER_LADDER:
        A = K.copy()
        A.flat[:: len(K) + 1] += jitter
        L, info = lapack.dpotrf(A, lower=1, clean=1, overwrite_a=1)
        if info == 0:
            return L, jitter
    raise SurrogateError("kernel matrix not positive definite after jitter escalation")


def _cho_inverse(L: np.ndarray) -> np.ndarray:
    Linv, info = lapack.dtrtri(L, lower=1)
    if info != 0:
        raise SurrogateError("failed to invert kernel matrix")
    return Linv.T @ Linv


def log_marginal_likelihood(theta, X, y, with_grad: bool = True):
    """Log marginal likelihood of a zero-mean GP and its gradient w.r.t. log-hyperparameters.

    ``theta`` is ``[log lengthscales..., log signal_variance, log noise_variance]``.
    """
    theta = np.asarray(theta, dtype=float)
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, d = X.shape
    ls = np.exp(theta[:d])
    sf2 = math.exp(theta[d])
    sn2 = math.exp(theta[d + 1])

    r = np.sqrt(_scaled_sqdist(X, X, ls))
    e = np.exp(-SQRT5 * r)
    sr = SQRT5 * r
    Kf = sf2 * (1.0 + sr + sr * sr / 3.0) * e
    K = Kf.copy()
    K.flat[:: n + 1] += sn2
    L, _ = _cholesky(K)
    alpha = lapack.dpotrs(L, y, lower=1)[0]
    lml = -0.5 * float(y @ alpha) - float(np.log(np.diag(L)).sum()) - 0.5 * n * LOG_2PI
    if not with_grad:
        return lml

    W = np.outer(alpha, alpha) - _cho_inverse(L)
    # dKf/dlog(l_i) = C * (x_ai - x_bi)^2 / l_i^2 with C = sf2 * 5/3 * (1 + sqrt5 r) exp(-sqrt5 r)
    G = W * (sf2 * (5.0 / 3.0) * (1.0 + sr) * e)
    g = G.sum(axis=1)
    pair_sums = 2.0 * ((X * X).T @ g) - 2.0 * np.sum(X * (G @ X), axis=0)
    grad = np.empty(d + 2)
    grad[:d] = 0.5 * pair_sums / (ls * ls)
    grad[d] = 0.5 * float(np.sum(W * Kf))
    grad[d + 1] = 0.5 * sn2 * float(np.trace(W))
    return lml, grad


@dataclass
class TrainingSet:
    inputs: np.ndarray   # (n, d)
    targets: np.ndarray  # (n, k) in caller units (NPI ratios for the tuner)
    center: np.ndarray   # (k,)
    scale: np.ndarray    # (k,)

    @classmethod
    def from_arrays(cls, X, Y) -> "TrainingSet":
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = np.asarray(Y, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
        if len(X) != len(Y) or len(X) == 0:
            raise SurrogateError("inputs and targets must be non-empty and of equal length")
        if not np.all(np.isfinite(Y)):
            raise SurrogateError("non-finite targets")
        center = Y.mean(axis=0)
        scale = Y.std(axis=0) if len(Y) > 1 else np.ones(Y.shape[1])
        scale = np.where(scale > 0, scale, 1.0)
        return cls(X, Y, center, scale)

    @property
    def standardized(self) -> np.ndarray:
        return (self.targets - self.center) / self.scale


@dataclass
class GaussianProcess:
    """One fitted output: hyperparameters plus the cached Cholesky factor."""

    X: np.ndarray
    hyp: KernelHyperparams
    L: np.ndarray
    alpha: np.ndarray
    center: float
    scale: float
    jitter: float = 0.0

    @classmethod
    def from_hyperparams(cls, X, y_std, hyp: KernelHyperparams, center=0.0, scale=1.0) -> "GaussianProcess":
        K = matern52_matrix(X, X, hyp.lengthscales, hyp.signal_variance) + hyp.noise_variance * np.eye(len(X))
        L, jitter = _cholesky(K)
        alpha = cho_solve((L, True), y_std)
        return cls(np.asarray(X, dtype=float), hyp, L, alpha, float(center), float(scale), jitter)

    def predict(self, Xs) -> tuple[np.ndarray, np.ndarray]:
        Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
        if Xs.shape[1] != self.X.shape[1]:
            raise ValueError(f"dimension mismatch: expected {self.X.shape[1]}, got {Xs.shape[1]}")
        Ks = matern52_matrix(Xs, self.X, self.hyp.lengthscales, self.hyp.signal_variance)
        mean = Ks @ self.alpha
        v = solve_triangular(self.L, Ks.T, lower=True)
        var = self.hyp.signal_variance - np.sum(v * v, axis=0)
        var = np.maximum(var, VARIANCE_FLOOR)
        return mean * self.scale + self.center, var * self.scale ** 2


def _random_start(rng: np.random.Generator, d: int) -> np.ndarray:
    return np.concatenate((
        rng.uniform(math.log(0.05), math.log(2.0), size=d),
        [rng.uniform(math.log(0.3), math.log(3.0)), rng.uniform(math.log(1e-6), math.log(1e-1))],
    ))


def fit_hyperparams(X, y, restarts: int = 5, seed: int = 0, maxiter: int = 200,
                    ftol: float = 1e-7, screen_iters: int = 12) -> KernelHyperparams:
    """Maximize the log marginal likelihood over log-hyperparameters (L-BFGS-B).

    Every start gets ``screen_iters`` iterations; only the most promising one
    is then run to convergence.
    """
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    bounds = [tuple(map(math.log, LENGTHSCALE_BOUNDS))] * d + [
        tuple(map(math.log, SIGNAL_BOUNDS)), tuple(map(math.log, NOISE_BOUNDS))]
    rng = np.random.default_rng(seed)
    starts = [np.concatenate((np.full(d, math.log(0.5)), [0.0, math.log(1e-3)]))]
    starts += [_random_start(rng, d) for _ in range(max(restarts, 1) - 1)]

    def objective(theta):
        try:
            lml, grad = log_marginal_likelihood(theta, X, y)
        except SurrogateError:
            return 1e25, np.zeros_like(theta)
        return -lml, -grad

    def ascend(theta0, iters):
        return minimize(objective, theta0, jac=True, method="L-BFGS-B", bounds=bounds,
                        options={"maxiter": iters, "ftol": ftol})

    screened = [ascend(t0, min(screen_iters, maxiter)) for t0 in starts]
    screened = [r for r in screened if np.isfinite(r.fun) and r.fun < 1e25]
    if not screened:
        raise SurrogateError("hyperparameter optimization failed from every start")
    best = min(screened, key=lambda r: r.fun)
    if best.nit >= screen_iters and maxiter > screen_iters:
        polished = ascend(best.x, maxiter - screen_iters)
        if polished.fun <= best.fun:
            best = polished
    return KernelHyperparams.from_log(best.x)


@dataclass
class SurrogateModel:
    train: TrainingSet
    outputs: list[GaussianProcess]

    @property
    def n_outputs(self) -> int:
        return len(self.outputs)

    def predict(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and variance, each of shape ``(m, n_outputs)``."""
        preds = [gp.predict(X) for gp in self.outputs]
        return np.column_stack([p[0] for p in preds]), np.column_stack([p[1] for p in preds])

    def posterior_samples(self, x, count: int, seed: int) -> np.ndarray:
        """Independent Gaussian draws per output at one point, shape ``(count, n_outputs)``."""
        mean, var = self.predict(np.atleast_2d(x)[:1])
        eps = np.random.default_rng(seed).standard_normal((count, self.n_outputs))
        return mean[0] + np.sqrt(var[0]) * eps


def fit(train: TrainingSet, restarts: int = 5, seed: int = 0, maxiter: int = 200,
        ftol: float = 1e-7, screen_iters: int = 12) -> SurrogateModel:
    if len(train.inputs) < 2:
        raise SurrogateError("need at least two training points")
    Ys = train.standardized
    outputs = []
    for j in range(Ys.shape[1]):
        hyp = fit_hyperparams(train.inputs, Ys[:, j], restarts=restarts, seed=seed + 7919 * j,
                              maxiter=maxiter, ftol=ftol, screen_iters=screen_iters)
        outputs.append(GaussianProcess.from_hyperparams(train.inputs, Ys[:, j], hyp, train.center[j], train.scale[j]))
    return SurrogateModel(train, outputs)


def fit_arrays(X, Y, **kwargs) -> SurrogateModel:
    return fit(TrainingSet.from_arrays(X, Y), **kwargs)
