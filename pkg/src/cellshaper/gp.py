"""Gaussian-process regression over the normalized configuration space.

Constant-mean GP with ARD Matern-5/2 (default) or RBF kernel. The
posterior follows the standard noisy-observation equations: with
K~ = K + sigma^2 I,

    mean(x)  = mu + k(x)^T K~^{-1} (y - mu)
    var(x)   = k(x, x) - k(x)^T K~^{-1} k(x)

solved via Cholesky factorization with jitter escalation 1e-8 -> 1e-4.
Hyperparameters are fitted by gradient ascent (Adam) on the log marginal
likelihood of standardized targets; the returned hyperparameters are
mapped back to raw target units, so posterior queries never need to know
about the standardization.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import SingularModelError

LENGTHSCALE_BOUNDS = (5e-3, 2e3)
NOISE_FLOOR = 1e-8
JITTERS = (0.0, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4)

DEFAULT_LENGTHSCALE = 0.5
DEFAULT_SIGNAL_VAR = 1.0
DEFAULT_NOISE_VAR = 1e-4

_SQRT5 = math.sqrt(5.0)


class Observation(NamedTuple):
    x: np.ndarray
    y: float


class Dataset:
    """Append-only collection of (x in [0,1]^d, noisy objective) pairs."""

    def __init__(self, dim: int, x=None, y=None):
        self.dim = int(dim)
        self._x = np.zeros((0, self.dim)) if x is None else np.atleast_2d(np.asarray(x, float)).copy()
        self._y = np.zeros(0) if y is None else np.asarray(y, float).ravel().copy()
        if self._x.shape[1] != self.dim or len(self._x) != len(self._y):
            raise ValueError("inconsistent dataset arrays")
        self._check(self._x, self._y)

    @staticmethod
    def _check(x, y):
        if np.any(x < -1e-9) or np.any(x > 1 + 1e-9):
            raise ValueError("dataset points must lie in [0, 1]^d")
        if not np.all(np.isfinite(y)):
            raise ValueError("dataset targets must be finite")

    @property
    def x(self) -> np.ndarray:
        return self._x

    @property
    def y(self) -> np.ndarray:
        return self._y

    def __len__(self):
        return len(self._y)

    def append(self, x, y):
        x = np.asarray(x, float).reshape(1, self.dim)
        y = np.asarray([y], float)
        self._check(x, y)
        self._x = np.concatenate([self._x, x])
        self._y = np.concatenate([self._y, y])

    def extend(self, x, y):
        x = np.atleast_2d(np.asarray(x, float))
        y = np.asarray(y, float).ravel()
        self._check(x, y)
        self._x = np.concatenate([self._x, x])
        self._y = np.concatenate([self._y, y])

    @property
    def observations(self):
        return [Observation(self._x[i].copy(), float(self._y[i])) for i in range(len(self))]

    def copy(self) -> "Dataset":
        return Dataset(self.dim, self._x, self._y)

    def to_dict(self) -> dict:
        return {"d": self.dim, "x": self._x.tolist(), "y": self._y.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Dataset":
        return cls(d["d"], np.asarray(d["x"]) if d["x"] else None,
                   np.asarray(d["y"]) if d["y"] else None)

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f)

    @classmethod
    def load(cls, path) -> "Dataset":
        with open(path) as f:
            return cls.from_dict(json.load(f))


@dataclass(frozen=True, eq=False)
class GPHyperparams:
    """Constant mean, signal variance, ARD lengthscales, observation noise.

    Lengthscales are clamped into [5e-3, 2e3] (normalized input units) and
    the noise variance is floored at 1e-8 on construction.
    """

    mean: float
    signal_var: float
    lengthscales: np.ndarray
    noise_var: float
    kernel: str = "matern52"

    def __post_init__(self):
        if self.signal_var <= 0:
            raise ValueError("signal variance must be > 0")
        if self.kernel not in ("matern52", "rbf"):
            raise ValueError(f"unknown kernel {self.kernel!r}")
        ls = np.clip(np.asarray(self.lengthscales, float), *LENGTHSCALE_BOUNDS)
        if np.any(~np.isfinite(ls)):
            raise ValueError("lengthscales must be finite")
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "noise_var", max(float(self.noise_var), NOISE_FLOOR))

    def to_dict(self) -> dict:
        return {"mean": self.mean, "signal_var": self.signal_var,
                "lengthscales": self.lengthscales.tolist(),
                "noise_var": self.noise_var, "kernel": self.kernel}

    @classmethod
    def from_dict(cls, d: dict) -> "GPHyperparams":
        return cls(mean=d["mean"], signal_var=d["signal_var"],
                   lengthscales=np.asarray(d["lengthscales"]),
                   noise_var=d["noise_var"], kernel=d.get("kernel", "matern52"))


def default_hyperparams(dataset: Dataset) -> GPHyperparams:
    """Fallback hyperparameters, scaled to the dataset's target spread."""
    y = dataset.y
    ybar = float(np.mean(y)) if len(y) else 0.0
    sy2 = float(np.var(y)) if len(y) > 1 else 1.0
    if sy2 <= 0:
        sy2 = 1.0
    return GPHyperparams(mean=ybar, signal_var=DEFAULT_SIGNAL_VAR * sy2,
                         lengthscales=np.full(dataset.dim, DEFAULT_LENGTHSCALE),
                         noise_var=DEFAULT_NOISE_VAR * sy2)


def _scaled_sqdist(xa: np.ndarray, xb: np.ndarray, lengthscales) -> np.ndarray:
    a = xa / lengthscales
    b = xb / lengthscales
    d2 = (a ** 2).sum(1)[:, None] + (b ** 2).sum(1)[None, :] - 2.0 * (a @ b.T)
    return np.maximum(d2, 0.0)


def _kernel_from_r2(r2: np.ndarray, signal_var: float, kind: str) -> np.ndarray:
    if kind == "matern52":
        r = np.sqrt(r2)
        return signal_var * (1.0 + _SQRT5 * r + (5.0 / 3.0) * r2) * np.exp(-_SQRT5 * r)
    return signal_var * np.exp(-0.5 * r2)


def kernel(x, x2, h: GPHyperparams):
    """Covariance between two points (or batches; broadcasts to a matrix)."""
    xa = np.atleast_2d(np.asarray(x, float))
    xb = np.atleast_2d(np.asarray(x2, float))
    k = _kernel_from_r2(_scaled_sqdist(xa, xb, h.lengthscales), h.signal_var, h.kernel)
    return float(k[0, 0]) if k.size == 1 else k


def _chol_with_jitter(a: np.ndarray):
    """Cholesky of a symmetric PSD matrix, escalating jitter 1e-8 -> 1e-4."""
    eye = np.eye(len(a))
    for jit in JITTERS:
        try:
            return np.linalg.cholesky(a + jit * eye), jit
        except np.linalg.LinAlgError:
            continue
    raise SingularModelError(
        f"Cholesky failed for {len(a)}x{len(a)} system even at jitter {JITTERS[-1]}")


class FittedGP:
    """Immutable posterior cache: dataset snapshot + hyperparameters.

    Safe for concurrent posterior and sampling queries once constructed.
    """

    def __init__(self, dataset: Dataset, h: GPHyperparams):
        if len(dataset) == 0:
            raise ValueError("cannot condition on an empty dataset")
        self.h = h
        self.x = dataset.x.copy()
        self.y = dataset.y.copy()
        kmat = _kernel_from_r2(_scaled_sqdist(self.x, self.x, h.lengthscales),
                               h.signal_var, h.kernel)
        self.chol, self.jitter = _chol_with_jitter(kmat + h.noise_var * np.eye(len(self.x)))
        self.alpha = _cho_solve(self.chol, self.y - h.mean)

    def _cross(self, xq: np.ndarray) -> np.ndarray:
        return _kernel_from_r2(_scaled_sqdist(self.x, xq, self.h.lengthscales),
                               self.h.signal_var, self.h.kernel)

    def predict(self, xq) -> tuple:
        """Posterior mean and variance (clamped >= 0) at query points."""
        xq = np.atleast_2d(np.asarray(xq, float))
        kxq = self._cross(xq)
        mean = self.h.mean + kxq.T @ self.alpha
        w = _tri_solve(self.chol, kxq)
        var = np.maximum(self.h.signal_var - (w ** 2).sum(axis=0), 0.0)
        return mean, var

    def joint(self, xq) -> tuple:
        """Posterior mean vector and full covariance at query points."""
        xq = np.atleast_2d(np.asarray(xq, float))
        kxq = self._cross(xq)
        mean = self.h.mean + kxq.T @ self.alpha
        w = _tri_solve(self.chol, kxq)
        kqq = _kernel_from_r2(_scaled_sqdist(xq, xq, self.h.lengthscales),
                              self.h.signal_var, self.h.kernel)
        return mean, kqq - w.T @ w

    def sample_joint(self, xq, rng: np.random.Generator) -> np.ndarray:
        """One draw from the joint posterior over ``xq``.

        Falls back to independent marginal sampling if the posterior
        covariance cannot be factorized.
        """
        mean, cov = self.joint(xq)
        z = rng.standard_normal(len(mean))
        scale = max(self.h.signal_var, 1e-300)
        for jit in (1e-12, 1e-10, 1e-8, 1e-6):
            try:
                chol = np.linalg.cholesky(cov + jit * scale * np.eye(len(mean)))
                return mean + chol @ z
            except np.linalg.LinAlgError:
                continue
        return mean + np.sqrt(np.maximum(np.diag(cov), 0.0)) * z


def _tri_solve(chol: np.ndarray, b: np.ndarray) -> np.ndarray:
    from scipy.linalg import solve_triangular
    return solve_triangular(chol, b, lower=True, check_finite=False)


def _cho_solve(chol: np.ndarray, b: np.ndarray) -> np.ndarray:
    from scipy.linalg import cho_solve
    return cho_solve((chol, True), b, check_finite=False)


def posterior(dataset: Dataset, h: GPHyperparams, x_query):
    """Posterior mean and variance at one query point (or a batch).

    Scalar in, scalars out; batch in, arrays out.
    """
    model = FittedGP(dataset, h)
    xq = np.asarray(x_query, float)
    single = xq.ndim == 1
    mean, var = model.predict(np.atleast_2d(xq))
    if single:
        return float(mean[0]), float(var[0])
    return mean, var


def log_marginal_likelihood(dataset: Dataset, h: GPHyperparams) -> float:
    """Log marginal likelihood of the targets under the GP prior."""
    model = FittedGP(dataset, h)
    resid = dataset.y - h.mean
    n = len(dataset)
    return float(-0.5 * resid @ model.alpha
                 - np.log(np.diag(model.chol)).sum()
                 - 0.5 * n * math.log(2.0 * math.pi))


def _lml_and_grad(xs: np.ndarray, ys: np.ndarray, log_params: np.ndarray, kind: str):
    """Standardized-space LML and its gradient w.r.t. log hyperparameters.

    ``log_params`` = [log lengthscales (d), log signal_var, log noise_var].
    """
    d = xs.shape[1]
    ls = np.exp(log_params[:d])
    s2 = float(np.exp(log_params[d]))
    n2 = float(np.exp(log_params[d + 1]))
    n = len(xs)

    r2 = _scaled_sqdist(xs, xs, ls)
    kmat = _kernel_from_r2(r2, s2, kind)
    chol, _ = _chol_with_jitter(kmat + n2 * np.eye(n))
    alpha = _cho_solve(chol, ys)
    lml = float(-0.5 * ys @ alpha - np.log(np.diag(chol)).sum()
                - 0.5 * n * math.log(2.0 * math.pi))

    kinv = _cho_solve(chol, np.eye(n))
    w = np.outer(alpha, alpha) - kinv

    if kind == "matern52":
        r = np.sqrt(r2)
        c = (5.0 / 3.0) * s2 * (1.0 + _SQRT5 * r) * np.exp(-_SQRT5 * r)
    else:
        c = kmat
    m = w * c
    # sum_jk m_jk * (x_ji - x_ki)^2 for each dimension i, without n^2*d memory
    rs = m.sum(axis=1)
    cs = m.sum(axis=0)
    x2 = xs ** 2
    t = x2.T @ rs + x2.T @ cs - 2.0 * np.einsum("ji,ji->i", xs, m @ xs)
    grad_ls = 0.5 * t / ls ** 2

    grad_s2 = 0.5 * float(np.sum(w * kmat))
    grad_n2 = 0.5 * n2 * float(np.trace(w))
    return lml, np.concatenate([grad_ls, [grad_s2, grad_n2]])


_LOG_BOUNDS_LS = (math.log(LENGTHSCALE_BOUNDS[0]), math.log(LENGTHSCALE_BOUNDS[1]))
_LOG_BOUNDS_S2 = (math.log(1e-6), math.log(1e4))
_LOG_BOUNDS_N2 = (math.log(1e-8), math.log(1e2))


def _clip_log_params(p: np.ndarray, d: int) -> np.ndarray:
    p = p.copy()
    p[:d] = np.clip(p[:d], *_LOG_BOUNDS_LS)
    p[d] = np.clip(p[d], *_LOG_BOUNDS_S2)
    p[d + 1] = np.clip(p[d + 1], *_LOG_BOUNDS_N2)
    return p


def _adam_ascent(xs, ys, p0, kind, max_steps, lr=0.08, tol=1e-3):
    """Maximize the standardized LML from one start; returns (best_p, best_lml)."""
    d = xs.shape[1]
    p = _clip_log_params(p0, d)
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    best_p, best_lml = p.copy(), -np.inf
    b1, b2, eps = 0.9, 0.999, 1e-8
    for t in range(1, max_steps + 1):
        try:
            lml, g = _lml_and_grad(xs, ys, p, kind)
        except SingularModelError:
            break
        if lml > best_lml:
            best_lml, best_p = lml, p.copy()
        if np.max(np.abs(g)) < tol:
            break
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g ** 2
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        p = _clip_log_params(p + lr * mhat / (np.sqrt(vhat) + eps), d)
    return best_p, best_lml


def fit_hyperparams(dataset: Dataset, kernel_kind: str = "matern52",
                    n_starts: int = 3, max_steps: int = 200, seed: int = 0,
                    warm: GPHyperparams | None = None) -> GPHyperparams:
    """Fit hyperparameters by restarted gradient ascent on the LML.

    Targets are standardized internally; the prior mean is fixed to the
    target mean. Degenerate datasets (constant targets) return the
    defaults. The result is never worse (in LML) than the defaults.
    """
    if len(dataset) < 2:
        raise ValueError("need at least 2 observations to fit hyperparameters")
    y = dataset.y
    ybar = float(np.mean(y))
    sy = float(np.std(y))
    if sy < 1e-12:
        return default_hyperparams(dataset)
    xs = dataset.x
    ys = (y - ybar) / sy
    d = dataset.dim
    rng = np.random.default_rng(seed)

    default_p = np.concatenate([np.full(d, math.log(DEFAULT_LENGTHSCALE)),
                                [0.0, math.log(DEFAULT_NOISE_VAR)]])
    starts = [default_p]
    if warm is not None and warm.kernel == kernel_kind:
        warm_p = np.concatenate([np.log(warm.lengthscales),
                                 [math.log(warm.signal_var / sy ** 2),
                                  math.log(max(warm.noise_var / sy ** 2, NOISE_FLOOR))]])
        starts.append(warm_p)
    while len(starts) < n_starts:
        starts.append(np.concatenate([
            rng.uniform(math.log(0.05), math.log(2.0), size=d),
            [rng.uniform(math.log(0.1), math.log(2.0)),
             rng.uniform(math.log(1e-6), math.log(1e-1))]]))

    # The unoptimized defaults always compete, so the fit can only improve.
    best_p, best_lml = default_p, _lml_and_grad(xs, ys, default_p, kernel_kind)[0]
    for p0 in starts[:n_starts]:
        p, lml = _adam_ascent(xs, ys, p0, kernel_kind, max_steps)
        if lml > best_lml:
            best_p, best_lml = p, lml
    ls = np.exp(best_p[:d])
    return GPHyperparams(mean=ybar, signal_var=float(np.exp(best_p[d])) * sy ** 2,
                         lengthscales=ls,
                         noise_var=float(np.exp(best_p[d + 1])) * sy ** 2,
                         kernel=kernel_kind)


def thompson_sample(dataset: Dataset, h: GPHyperparams, candidates, seed: int) -> int:
    """Index of the argmax of one joint posterior draw over the candidates."""
    cand = np.atleast_2d(np.asarray(candidates, float))
    if len(cand) == 0:
        raise ValueError("candidate set is empty")
    model = FittedGP(dataset, h)
    rng = np.random.default_rng(seed)
    draw = model.sample_joint(cand, rng)
    return int(np.argmax(draw))
