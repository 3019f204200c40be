"""Fixed-dimensional sufficient statistics for p(theta | x_{0:t}).

Three trackers live here:

* :class:`GaussianSuffStat` -- exact conjugate recursion for Gaussian system
  processes (mean/covariance update).
* :class:`SeparableSuffStat` -- the (S1, S2) statistics of a separable system
  with log-quadratic noise.
* :class:`LogPolyDensity` -- the EPF tracker.  ``eta`` is a polynomial in
  theta - center (center 0 unless the model sets one) such that
  ``log p_hat(theta) = log prior(theta) - eta(theta - center) + const``;
  every update is a pure addition.

:class:`BatchedLogPoly` and :class:`GaussianBatch` hold the same statistics
for a whole particle population as arrays, which is what the filters use.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .models import GaussianPrior, ModelSpec
from .polynomial import Poly, monomial_powers

__all__ = [
    "GaussianSuffStat",
    "gaussian_update",
    "gaussian_update_as_kalman",
    "SeparableSuffStat",
    "separable_update",
    "separable_log_density",
    "LogPolyDensity",
    "logpoly_update",
    "logpoly_eval",
    "logpoly_gaussian_params",
    "IncrementKernel",
    "BatchedLogPoly",
    "GaussianBatch",
    "SingularUpdateError",
    "DegreeOverflowError",
]


class SingularUpdateError(np.linalg.LinAlgError):
    """The innovation covariance D_t is not positive definite."""


class DegreeOverflowError(ArithmeticError):
    """A statistic update produced a polynomial above the allowed degree."""


# -- exact Gaussian recursion ---------------------------------------------

@dataclass(frozen=True, eq=False)
class GaussianSuffStat:
    m: np.ndarray
    C: np.ndarray

    @classmethod
    def from_prior(cls, prior: GaussianPrior) -> "GaussianSuffStat":
        return cls(prior.mean.copy(), prior.cov.copy())


def _as_update_args(s, F_t, Q, x_t):
    p = s.m.size
    F = np.asarray(F_t, dtype=float).reshape(p, -1)
    d = F.shape[1]
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    x = np.asarray(x_t, dtype=float).reshape(d)
    if Q.shape != (d, d):
        raise ValueError("Q must be d x d where F_t is p x d")
    return F, Q, x


def gaussian_update(s: GaussianSuffStat, F_t, Q, x_t) -> GaussianSuffStat:
    """One step of the conjugate recursion for ``x_t = F_t^T theta + N(0, Q)``.

    ``F_t`` is p x d (a length-p vector is read as d = 1).  Raises
    :class:`SingularUpdateError` when ``D_t = F_t^T C F_t + Q`` cannot be
    factorized.
    """
    F, Q, x = _as_update_args(s, F_t, Q, x_t)
    CF = s.C @ F
    D = F.T @ CF + Q
    try:
        chol = np.linalg.cholesky(D)
    except np.linalg.LinAlgError as exc:
        raise SingularUpdateError("D_t is not positive definite") from exc
    # gain^T = D^{-1} F^T C
    gain_t = np.linalg.solve(chol.T, np.linalg.solve(chol, CF.T))
    C = s.C - CF @ gain_t
    m = s.m + gain_t.T @ (x - F.T @ s.m)
    return GaussianSuffStat(m, 0.5 * (C + C.T))


def gaussian_update_as_kalman(s: GaussianSuffStat, F_t, Q, x_t) -> GaussianSuffStat:
    """The same update phrased as a Kalman filter on theta.

    Transition matrix I, zero process noise, observation matrix F_t^T and
    observation noise Q.
    """
    F, Q, x = _as_update_args(s, F_t, Q, x_t)
    H = F.T
    P_pred = s.C  # A P A^T + 0 with A = I
    S = H @ P_pred @ H.T + Q
    try:
        K = np.linalg.solve(S.T, (P_pred @ H.T).T).T
    except np.linalg.LinAlgError as exc:
        raise SingularUpdateError("innovation covariance is singular") from exc
    m = s.m + K @ (x - H @ s.m)
    P = (np.eye(s.m.size) - K @ H) @ P_pred
    return GaussianSuffStat(m, 0.5 * (P + P.T))


# -- separable systems ----------------------------------------------------

@dataclass(frozen=True, eq=False)
class SeparableSuffStat:
    """Statistics for ``f_theta(x) = l(x)^T h(theta)`` with log-quadratic noise.

    log p(theta | x_{0:t}) = log prior + S1 h(theta) + h^T S2 h + const.
    """

    S1: np.ndarray
    S2: np.ndarray
    prior: GaussianPrior | None = None

    @classmethod
    def empty(cls, m: int, prior: GaussianPrior | None = None) -> "SeparableSuffStat":
        return cls(np.zeros(m), np.zeros((m, m)), prior)


def separable_update(s: SeparableSuffStat, l_x, x_t, Lambda1, Lambda2) -> SeparableSuffStat:
    """Accumulate one transition.

    ``l_x`` is l(x_{t-1}) with shape (m, d); the noise log-density is
    ``Lambda1 v + v^T Lambda2 v`` with Lambda1 (d,) and Lambda2 (d, d).
    """
    m = s.S1.size
    l_x = np.asarray(l_x, dtype=float).reshape(m, -1)
    d = l_x.shape[1]
    x = np.asarray(x_t, dtype=float).reshape(d)
    L1 = np.asarray(Lambda1, dtype=float).reshape(d)
    L2 = np.asarray(Lambda2, dtype=float).reshape(d, d)
    S1 = s.S1 - (L1 + 2.0 * x @ L2) @ l_x.T
    S2 = s.S2 + l_x @ L2 @ l_x.T
    return replace(s, S1=S1, S2=0.5 * (S2 + S2.T))


def separable_log_density(s: SeparableSuffStat, theta, h) -> np.ndarray:
    """Unnormalized log posterior at ``theta`` (..., p) given the map ``h``."""
    theta = np.asarray(theta, dtype=float)
    hv = np.asarray(h(theta), dtype=float)
    out = hv @ s.S1 + np.einsum("...i,ij,...j->...", hv, s.S2, hv)
    if s.prior is not None:
        out = out + s.prior.log_density(theta)
    return out


# -- EPF log-polynomial tracker ------------------------------------------

@dataclass(frozen=True, eq=False)
class LogPolyDensity:
    """log p_hat(theta) = log prior(theta) - eta(theta - center), truncated to the support."""

    eta: Poly
    prior: GaussianPrior
    support: np.ndarray
    order: int
    degree_bound: int
    center: tuple[float, ...] | None = None

    @classmethod
    def fresh(cls, model: ModelSpec, M: int) -> "LogPolyDensity":
        return cls(Poly({}, model.param_dim), model.theta_prior, model.theta_support,
                   M, model.eta_degree_bound(M), model.center)

    @property
    def offset(self) -> np.ndarray:
        return np.zeros(self.param_dim) if self.center is None else np.asarray(self.center)

    @property
    def param_dim(self) -> int:
        return self.prior.dim


def logpoly_update(d: LogPolyDensity, model: ModelSpec, x_prev: float, x_next: float) -> LogPolyDensity:
    inc = model.logpoly_increment(float(x_prev), float(x_next), d.order)
    eta = d.eta + inc
    if eta.degree() > d.degree_bound:
        raise DegreeOverflowError(f"eta reached degree {eta.degree()} > {d.degree_bound}")
    return replace(d, eta=eta)


def logpoly_eval(d: LogPolyDensity, theta) -> np.ndarray | float:
    """log prior(theta) - eta(theta); -inf outside the support."""
    theta = np.asarray(theta, dtype=float)
    if d.param_dim == 1 and (theta.ndim == 0 or theta.shape[-1] != 1):
        theta = theta[..., None]
    inside = np.all((theta >= d.support[:, 0]) & (theta <= d.support[:, 1]), axis=-1)
    with np.errstate(over="ignore", invalid="ignore"):
        val = d.prior.log_density(theta) - np.asarray(d.eta(theta - d.offset))
    val = np.where(inside, val, -np.inf)
    return float(val) if val.ndim == 0 else val


def _quadratic_parts(eta: Poly, p: int):
    """Return (b, A) with eta(theta) = const + b.theta + theta^T A theta."""
    if eta.degree() > 2:
        raise ValueError("exact Gaussian sampling needs a log-quadratic density")
    b = np.zeros(p)
    A = np.zeros((p, p))
    for e, c in eta.terms.items():
        idx = [i for i, k in enumerate(e) for _ in range(k)]
        if len(idx) == 1:
            b[idx[0]] += c
        elif len(idx) == 2:
            i, j = idx
            if i == j:
                A[i, i] += c
            else:
                A[i, j] += 0.5 * c
                A[j, i] += 0.5 * c
    return b, A


def logpoly_gaussian_params(d: LogPolyDensity) -> tuple[np.ndarray, np.ndarray]:
    """(mean, cov) of a log-quadratic LogPolyDensity, ignoring the support."""
    b, A = _quadratic_parts(d.eta, d.param_dim)
    prec = d.prior.precision + 2.0 * A
    cov = np.linalg.inv(prec)
    mean = cov @ (d.prior.precision @ (d.prior.mean - d.offset) - b) + d.offset
    return mean, cov


# -- batched trackers for particle populations ----------------------------

class IncrementKernel:
    """A model's -log p_hat increment compiled for vectorized evaluation.

    The increment polynomial is written over (theta, features).  Grouping by
    theta-monomial gives ``increment = monomials(features) @ W`` where
    ``W[l, k]`` is the coefficient of feature monomial l times theta monomial k.
    Theta monomials are taken in ``theta - offset`` with the model's centre as
    offset, which keeps the coefficients well scaled.
    """

    def __init__(self, model: ModelSpec, M: int):
        joint = model.increment_poly(M)
        p = model.param_dim
        theta_exps = sorted({e[:p] for e in joint.terms})
        feat_exps = sorted({e[p:] for e in joint.terms})
        t_index = {e: k for k, e in enumerate(theta_exps)}
        f_index = {e: k for k, e in enumerate(feat_exps)}
        W = np.zeros((len(feat_exps), len(theta_exps)))
        for e, c in joint.terms.items():
            W[f_index[e[p:]], t_index[e[:p]]] += c
        self.model = model
        self.order = M
        self.param_dim = p
        self.theta_exps = np.array(theta_exps, dtype=int).reshape(-1, p)
        self.feat_exps = np.array(feat_exps, dtype=int).reshape(len(feat_exps), -1)
        self.W = W
        self.offset = np.asarray(model.center, dtype=float)
        degree = int(self.theta_exps.sum(axis=1).max(initial=0))
        if degree > model.eta_degree_bound(M):
            raise DegreeOverflowError(f"increment degree {degree} exceeds the bound")

    @property
    def size(self) -> int:
        return self.theta_exps.shape[0]

    def __call__(self, x_prev, x_next) -> np.ndarray:
        feats = self.model.increment_features(x_prev, x_next, self.order)
        return monomial_powers(feats, self.feat_exps) @ self.W

    def to_poly(self, coefs: np.ndarray) -> Poly:
        """eta as a polynomial in theta - offset."""
        return Poly({tuple(e): c for e, c in zip(self.theta_exps.tolist(), coefs)}, self.param_dim)


class BatchedLogPoly:
    """One LogPolyDensity per particle, stored as an (N, K) coefficient array."""

    def __init__(self, kernel: IncrementKernel, coefs: np.ndarray):
        self.kernel = kernel
        self.coefs = coefs
        model = kernel.model
        self.prior = model.theta_prior
        self.support = model.theta_support

    @classmethod
    def fresh(cls, model: ModelSpec, M: int, n: int, kernel: IncrementKernel | None = None):
        kernel = kernel or IncrementKernel(model, M)
        return cls(kernel, np.zeros((n, kernel.size)))

    def __len__(self) -> int:
        return self.coefs.shape[0]

    def update(self, x_prev, x_next) -> None:
        self.coefs += self.kernel(x_prev, x_next)

    def take(self, idx) -> "BatchedLogPoly":
        return BatchedLogPoly(self.kernel, self.coefs[idx])

    def log_density(self, theta: np.ndarray, rows=None) -> np.ndarray:
        """Per-particle log density at theta (n, p); ``rows`` selects particles."""
        coefs = self.coefs if rows is None else self.coefs[rows]
        theta = np.asarray(theta, dtype=float)
        inside = np.all((theta >= self.support[:, 0]) & (theta <= self.support[:, 1]), axis=-1)
        with np.errstate(over="ignore", invalid="ignore"):
            mono = monomial_powers(theta - self.kernel.offset, self.kernel.theta_exps)
            val = self.prior.log_density(theta) - np.sum(coefs * mono, axis=-1)
        return np.where(inside, val, -np.inf)

    def density(self, i: int) -> LogPolyDensity:
        model = self.kernel.model
        return LogPolyDensity(self.kernel.to_poly(self.coefs[i]), self.prior, self.support,
                              self.kernel.order, model.eta_degree_bound(self.kernel.order), model.center)

    def gaussian_params(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-particle (mean (N, p), cov (N, p, p)) of log-quadratic densities."""
        p = self.kernel.param_dim
        exps = self.kernel.theta_exps
        if exps.sum(axis=1).max(initial=0) > 2:
            raise ValueError("exact Gaussian sampling needs a log-quadratic density")
        n = len(self)
        b = np.zeros((n, p))
        A = np.zeros((n, p, p))
        for k, e in enumerate(exps):
            idx = [i for i, m in enumerate(e) for _ in range(m)]
            if len(idx) == 1:
                b[:, idx[0]] += self.coefs[:, k]
            elif idx[0] == idx[1]:
                A[:, idx[0], idx[0]] += self.coefs[:, k]
            else:
                A[:, idx[0], idx[1]] += 0.5 * self.coefs[:, k]
                A[:, idx[1], idx[0]] += 0.5 * self.coefs[:, k]
        prec = self.prior.precision + 2.0 * A
        cov = np.linalg.inv(prec)
        off = self.kernel.offset
        h = self.prior.precision @ (self.prior.mean - off) - b
        mean = np.einsum("nij,nj->ni", cov, h) + off
        return mean, cov


class GaussianBatch:
    """Per-particle conjugate statistics for a scalar-state Gaussian system."""

    def __init__(self, m: np.ndarray, C: np.ndarray):
        self.m = m
        self.C = C

    @classmethod
    def from_prior(cls, prior: GaussianPrior, n: int) -> "GaussianBatch":
        return cls(np.tile(prior.mean, (n, 1)), np.tile(prior.cov, (n, 1, 1)))

    def __len__(self) -> int:
        return self.m.shape[0]

    def update(self, F: np.ndarray, Q: float, x: np.ndarray) -> None:
        """Conjugate update with a scalar state; F is (N, p), x is (N,)."""
        CF = np.einsum("nij,nj->ni", self.C, F)
        D = np.einsum("ni,ni->n", F, CF) + Q
        if np.any(D <= 0):
            raise SingularUpdateError("D_t is not positive")
        resid = x - np.einsum("ni,ni->n", F, self.m)
        self.m = self.m + CF * (resid / D)[:, None]
        C = self.C - CF[:, :, None] * CF[:, None, :] / D[:, None, None]
        self.C = 0.5 * (C + np.swapaxes(C, 1, 2))

    def take(self, idx) -> "GaussianBatch":
        return GaussianBatch(self.m[idx], self.C[idx])

    def stat(self, i: int) -> GaussianSuffStat:
        return GaussianSuffStat(self.m[i].copy(), self.C[i].copy())
