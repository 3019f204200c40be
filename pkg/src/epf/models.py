"""State-space models with a parameterized transition and a known sensor.

Every model has the form::

    x_t = f_theta(x_{t-1}) + v_t
    y_t = x_t + w_t,   w_t ~ N(0, obs_noise_std**2)

with a scalar state.  Besides the exact densities each model knows how to
build a polynomial approximation of its transition log-density in theta,
which is what the EPF tracks as a sufficient statistic.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .polynomial import (
    Poly,
    logistic_series,
    logistic_taylor_coefficients,
    taylor_log1p_sq,
    taylor_logistic,
    taylor_sin,
)

__all__ = [
    "GaussianPrior",
    "ModelSpec",
    "SinModel",
    "CauchyModel",
    "StarModel",
    "GaussianSystemModel",
    "Trajectory",
    "make_sin",
    "make_cauchy",
    "make_star",
    "make_gaussian_system",
    "make_model",
    "transition_mean",
    "transition_log_density",
    "observation_log_density",
    "simulate",
    "logistic",
]

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


def logistic(x, gamma, c):
    """STAR gate G(x; gamma, c) = 1 / (1 + exp(-gamma (x - c)))."""
    z = np.multiply(gamma, np.subtract(x, c))
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass(frozen=True, eq=False)
class GaussianPrior:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise ValueError("prior covariance shape does not match the mean")
        if not np.allclose(cov, cov.T):
            raise ValueError("prior covariance must be symmetric")
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise ValueError("prior covariance must be positive definite") from exc
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "_chol", chol)
        object.__setattr__(self, "_prec", np.linalg.inv(cov))
        logdet = 2.0 * np.log(np.diag(chol)).sum()
        object.__setattr__(self, "_lognorm", -mean.size * LOG_SQRT_2PI - 0.5 * logdet)

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def precision(self) -> np.ndarray:
        return self._prec

    def log_density(self, theta) -> np.ndarray:
        d = np.asarray(theta, dtype=float) - self.mean
        return self._lognorm - 0.5 * np.einsum("...i,ij,...j->...", d, self._prec, d)

    def as_poly(self) -> Poly:
        """log density as a degree-2 polynomial in theta."""
        p = self.dim
        terms: dict[tuple[int, ...], float] = {}
        prec = self._prec
        h = prec @ self.mean
        terms[(0,) * p] = self._lognorm - 0.5 * self.mean @ h
        for i in range(p):
            e = [0] * p
            e[i] = 1
            terms[tuple(e)] = terms.get(tuple(e), 0.0) + h[i]
            for j in range(p):
                e2 = [0] * p
                e2[i] += 1
                e2[j] += 1
                terms[tuple(e2)] = terms.get(tuple(e2), 0.0) - 0.5 * prec[i, j]
        return Poly(terms, p)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        z = rng.standard_normal((n, self.dim))
        return self.mean + z @ self._chol.T


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Shared fields and behaviour of the scalar-state models.

    ``theta_support`` is a ``(p, 2)`` array of closed intervals; densities
    over theta are truncated to it.
    """

    name: str
    theta_true: np.ndarray
    theta_prior: GaussianPrior
    theta_support: np.ndarray
    obs_noise_std: float
    trans_noise_param: float
    x0: float = 0.0
    taylor_center: tuple[float, ...] | None = None  # None: expand about theta = 0
    state_dim: int = field(default=1, init=False)

    noise_law = "gaussian"
    centerable = False

    def __post_init__(self):
        theta = np.atleast_1d(np.asarray(self.theta_true, dtype=float))
        support = np.atleast_2d(np.asarray(self.theta_support, dtype=float))
        object.__setattr__(self, "theta_true", theta)
        object.__setattr__(self, "theta_support", support)
        if support.shape != (theta.size, 2):
            raise ValueError("support must hold one [lo, hi] interval per parameter")
        if np.any(support[:, 0] >= support[:, 1]):
            raise ValueError("support intervals need lo < hi")
        if np.any(theta < support[:, 0]) or np.any(theta > support[:, 1]):
            raise ValueError("theta_true lies outside theta_support")
        if self.theta_prior.dim != theta.size:
            raise ValueError("prior dimension differs from theta_true")
        if self.obs_noise_std <= 0 or self.trans_noise_param <= 0:
            raise ValueError("noise scales must be positive")
        if self.taylor_center is not None:
            if not self.centerable:
                raise ValueError(f"{self.name} does not take a Taylor centre")
            center = tuple(float(v) for v in np.atleast_1d(self.taylor_center))
            if len(center) != theta.size:
                raise ValueError("taylor_center needs one entry per parameter")
            object.__setattr__(self, "taylor_center", center)

    @property
    def center(self) -> tuple[float, ...]:
        """Expansion point; approximation polynomials are written in theta - center."""
        return self.taylor_center or (0.0,) * self.param_dim

    @property
    def param_dim(self) -> int:
        return self.theta_true.size

    def with_overrides(self, **changes) -> "ModelSpec":
        return replace(self, **changes)

    def in_support(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        lo, hi = self.theta_support[:, 0], self.theta_support[:, 1]
        return np.all((theta >= lo) & (theta <= hi), axis=-1)

    def _theta(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.ndim == 0:
            theta = theta[None]
        if theta.shape[-1] != self.param_dim:
            raise ValueError(f"{self.name} expects {self.param_dim} parameters, got {theta.shape[-1]}")
        return theta

    # -- exact laws -----------------------------------------------------
    def transition_mean(self, theta, x_prev):
        raise NotImplementedError

    def transition_log_density(self, theta, x_prev, x_next):
        sigma = self.trans_noise_param
        r = (np.asarray(x_next) - self.transition_mean(theta, x_prev)) / sigma
        return -math.log(sigma) - LOG_SQRT_2PI - 0.5 * r * r

    def sample_noise(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.trans_noise_param * rng.standard_normal(n)

    def sample_transition(self, theta, x_prev, rng: np.random.Generator) -> np.ndarray:
        mean = np.asarray(self.transition_mean(theta, x_prev), dtype=float)
        return mean + self.sample_noise(rng, mean.size).reshape(mean.shape)

    def observation_log_density(self, x, y):
        s = self.obs_noise_std
        r = (np.asarray(y) - np.asarray(x)) / s
        return -math.log(s) - LOG_SQRT_2PI - 0.5 * r * r

    # -- polynomial approximation -------------------------------------
    def taylor_mean(self, x_prev: float, M: int) -> Poly:
        """Order-M polynomial in theta - center approximating f_theta(x_prev)."""
        raise NotImplementedError(f"{self.name} has no polynomial transition mean")

    def logpoly_increment(self, x_prev: float, x_next: float, M: int) -> Poly:
        """Polynomial in theta - center equal to -log p_hat(x_next | x_prev, theta) up to a constant.

        Built per step from the Taylor expansion of the mean; the constant
        term is dropped.
        """
        var = self.trans_noise_param**2
        h = self.taylor_mean(x_prev, M)
        inc = h.scale(-x_next / var) + (h * h).scale(0.5 / var)
        return inc.drop_constant()

    def approx_transition_log_density(self, theta, x_prev, x_next, M: int):
        """Exact Gaussian form with f_theta replaced by its order-M expansion."""
        sigma = self.trans_noise_param
        theta = self._theta(theta) - np.asarray(self.center)
        fhat = self.taylor_mean(float(x_prev), M)(theta)
        r = (x_next - fhat) / sigma
        return -math.log(sigma) - LOG_SQRT_2PI - 0.5 * r * r

    def increment_poly(self, M: int) -> Poly:
        """-log p_hat as one polynomial in (theta - center, features), constant in theta dropped.

        The trailing variables are the per-step features returned by
        :meth:`increment_features`; substituting them recovers
        :meth:`logpoly_increment` up to a theta-free constant.
        """
        raise NotImplementedError(f"{self.name} has no polynomial approximation")

    def increment_features(self, x_prev, x_next, M: int) -> np.ndarray:
        return np.stack([np.asarray(x_prev, float), np.asarray(x_next, float)], axis=-1)

    def eta_degree_bound(self, M: int) -> int:
        return 2 * M


@dataclass(frozen=True, eq=False)
class SinModel(ModelSpec):
    """x_t = sin(theta x_{t-1}) + N(0, sigma^2)."""

    def transition_mean(self, theta, x_prev):
        theta = self._theta(theta)
        return np.sin(theta[..., 0] * np.asarray(x_prev, dtype=float))

    centerable = True

    def taylor_mean(self, x_prev, M):
        return taylor_sin(x_prev, M, self.center[0]).poly

    def increment_poly(self, M):
        c0 = self.center[0]
        if c0 == 0.0:
            th, xp, xn = (Poly.variable(i, 3) for i in range(3))
            fhat = Poly({}, 3)
            for k in range(1, M + 1, 2):
                sign = -1.0 if (k // 2) % 2 else 1.0
                fhat = fhat + ((th * xp) ** k).scale(sign / math.factorial(k))
            return _gaussian_increment(fhat, xn, self.trans_noise_param, 1)
        # features sin(c0 x_prev) and cos(c0 x_prev) carry the expansion point
        th, xp, xn, sn, cs = (Poly.variable(i, 5) for i in range(5))
        cycle = (sn, cs, -sn, -cs)
        step = xp * th
        fhat = Poly({}, 5)
        for k in range(M + 1):
            fhat = fhat + (cycle[k % 4] * step**k).scale(1.0 / math.factorial(k))
        return _gaussian_increment(fhat, xn, self.trans_noise_param, 1)

    def increment_features(self, x_prev, x_next, M):
        base = super().increment_features(x_prev, x_next, M)
        c0 = self.center[0]
        if c0 == 0.0:
            return base
        phase = c0 * np.asarray(x_prev, float)
        return np.concatenate([base, np.stack([np.sin(phase), np.cos(phase)], axis=-1)], axis=-1)


@dataclass(frozen=True, eq=False)
class StarModel(ModelSpec):
    """Logistic smooth-transition AR(1); theta = (gamma, c)."""

    a1: float = 0.9
    b1: float = 0.1

    def transition_mean(self, theta, x_prev):
        theta = self._theta(theta)
        x = np.asarray(x_prev, dtype=float)
        g = logistic(x, theta[..., 0], theta[..., 1])
        return self.a1 * x * (1.0 - g) + self.b1 * x * g

    centerable = True

    def taylor_mean(self, x_prev, M):
        g = taylor_logistic(x_prev, M, self.center).poly
        return Poly.constant(self.a1 * x_prev, 2) + g.scale((self.b1 - self.a1) * x_prev)

    def increment_poly(self, M):
        g0 = self.center[0]
        if g0 == 0.0:
            gam, c, xp, xn = (Poly.variable(i, 4) for i in range(4))
            u = gam * (c - xp)
            gate = Poly({}, 4)
            for k, s in enumerate(logistic_series(M)):
                if s:
                    gate = gate + (u**k).scale(float(-s if k % 2 else s))
        else:
            # features: d = x_prev - c0 and g_k = sigma^(k)(g0 d) / k!, one per order
            n = 6 + M
            dg, dc, xp, xn, d = (Poly.variable(i, n) for i in range(5))
            step = dg * d - dc.scale(g0) - dg * dc
            gate = Poly({}, n)
            power = Poly.constant(1.0, n)
            for k in range(M + 1):
                gate = gate + Poly.variable(5 + k, n) * power
                power = power * step
        fhat = xp.scale(self.a1) + (xp * gate).scale(self.b1 - self.a1)
        return _gaussian_increment(fhat, xn, self.trans_noise_param, 2)

    def increment_features(self, x_prev, x_next, M):
        base = super().increment_features(x_prev, x_next, M)
        g0, c0 = self.center
        if g0 == 0.0:
            return base
        d = np.asarray(x_prev, float) - c0
        coefs = logistic_taylor_coefficients(g0 * d, M)
        return np.concatenate([base, d[..., None], coefs], axis=-1)

    def eta_degree_bound(self, M):
        # the series is truncated in u = gamma (c - x): gamma-degree <= M, c-degree <= M
        return 4 * M


@dataclass(frozen=True, eq=False)
class CauchyModel(ModelSpec):
    """x_t = a x_{t-1} + Cauchy(0, gamma); ``trans_noise_param`` is gamma."""

    noise_law = "cauchy"

    def transition_mean(self, theta, x_prev):
        theta = self._theta(theta)
        return theta[..., 0] * np.asarray(x_prev, dtype=float)

    def transition_log_density(self, theta, x_prev, x_next):
        g = self.trans_noise_param
        v = (np.asarray(x_next) - self.transition_mean(theta, x_prev)) / g
        return -math.log(math.pi * g) - np.log1p(v * v)

    def sample_noise(self, rng, n):
        # inverse CDF keeps exactly one uniform per draw
        u = rng.random(n)
        return self.trans_noise_param * np.tan(math.pi * (u - 0.5))

    def logpoly_increment(self, x_prev, x_next, M):
        g = self.trans_noise_param
        v = Poly({(0,): x_next / g, (1,): -x_prev / g}, 1)
        return taylor_log1p_sq(M).compose(v).drop_constant()

    def approx_transition_log_density(self, theta, x_prev, x_next, M):
        g = self.trans_noise_param
        theta = self._theta(theta)
        v = (x_next - theta[..., 0] * x_prev) / g
        return -math.log(math.pi * g) - taylor_log1p_sq(M)(v)

    def increment_poly(self, M):
        a, xp, xn = (Poly.variable(i, 3) for i in range(3))
        v = (xn - a * xp).scale(1.0 / self.trans_noise_param)
        return taylor_log1p_sq(M).compose(v).drop_constant(1)

    def eta_degree_bound(self, M):
        return M


@dataclass(frozen=True, eq=False)
class GaussianSystemModel(ModelSpec):
    """x_t = F(x_{t-1})^T theta + N(0, Q) with a user feature map F.

    ``features`` maps an array of previous states of shape (...) to an
    array of shape (..., p).  It must accept numpy arrays.
    """

    features: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        super().__post_init__()
        if self.features is None:
            raise ValueError("a Gaussian system model needs a feature map F")

    @property
    def Q(self) -> float:
        return self.trans_noise_param**2

    def feature_matrix(self, x_prev) -> np.ndarray:
        F = np.asarray(self.features(np.asarray(x_prev, dtype=float)), dtype=float)
        if F.shape[-1] != self.param_dim:
            raise ValueError("feature map returned the wrong number of columns")
        return F

    def transition_mean(self, theta, x_prev):
        theta = self._theta(theta)
        return np.sum(self.feature_matrix(x_prev) * theta, axis=-1)

    def taylor_mean(self, x_prev, M):
        F = self.feature_matrix(x_prev)
        p = self.param_dim
        return sum(
            (Poly.variable(i, p).scale(float(F[i])) for i in range(p)),
            Poly({}, p),
        )

    def increment_poly(self, M):
        p = self.param_dim
        n = 2 * p + 1
        mean = Poly({}, n)
        for i in range(p):
            mean = mean + Poly.variable(i, n) * Poly.variable(p + i, n)
        return _gaussian_increment(mean, Poly.variable(2 * p, n), self.trans_noise_param, p)

    def increment_features(self, x_prev, x_next, M):
        F = self.feature_matrix(x_prev)
        return np.concatenate([F, np.asarray(x_next, float)[..., None]], axis=-1)

    def eta_degree_bound(self, M):
        return 2


def _gaussian_increment(fhat: Poly, x_next: Poly, sigma: float, p: int) -> Poly:
    """-log N(x_next; fhat, sigma^2) over (theta, features), dropping theta-free terms."""
    var = sigma * sigma
    inc = fhat * x_next.scale(-1.0 / var) + (fhat * fhat).scale(0.5 / var)
    return inc.drop_constant(p)


# -- constructors --------------------------------------------------------

def make_sin(**overrides) -> SinModel:
    spec = dict(
        name="sin",
        theta_true=[0.7],
        theta_prior=GaussianPrior([0.0], [[0.2**2]]),
        theta_support=[[-3.0, 3.0]],
        obs_noise_std=0.1,
        trans_noise_param=1.0,
    )
    spec.update(overrides)
    return SinModel(**spec)


def make_cauchy(**overrides) -> CauchyModel:
    spec = dict(
        name="cauchy",
        theta_true=[0.7],
        theta_prior=GaussianPrior([0.0], [[0.2**2]]),
        theta_support=[[-2.0, 2.0]],
        obs_noise_std=10.0,
        trans_noise_param=1.0,
    )
    spec.update(overrides)
    return CauchyModel(**spec)


def make_star(**overrides) -> StarModel:
    spec = dict(
        name="star",
        theta_true=[1.0, 3.0],
        theta_prior=GaussianPrior([2.0, 2.0], np.diag([1.5**2, 2.0**2])),
        theta_support=[[0.0, 5.0], [-2.0, 8.0]],
        obs_noise_std=0.1,
        trans_noise_param=1.0,
    )
    spec.update(overrides)
    return StarModel(**spec)


def make_gaussian_system(F, Q, theta0, C0, *, theta_true, obs_noise_std=0.1,
                         support=None, name="gaussian_system") -> GaussianSystemModel:
    """Gaussian system process with scalar state and noise variance ``Q``."""
    prior = GaussianPrior(theta0, C0)
    theta_true = np.atleast_1d(np.asarray(theta_true, dtype=float))
    if support is None:
        sd = np.sqrt(np.diag(prior.cov))
        lo = np.minimum(prior.mean - 10 * sd, theta_true - 1.0)
        hi = np.maximum(prior.mean + 10 * sd, theta_true + 1.0)
        support = np.stack([lo, hi], axis=1)
    return GaussianSystemModel(
        name=name,
        theta_true=theta_true,
        theta_prior=prior,
        theta_support=support,
        obs_noise_std=obs_noise_std,
        trans_noise_param=math.sqrt(float(np.squeeze(Q))),
        features=F,
    )


def _linear_features(x):
    return np.asarray(x, dtype=float)[..., None]


def make_linear(theta_true=0.7, **kw) -> GaussianSystemModel:
    """AR(1) x_t = theta x_{t-1} + N(0, 1) with prior N(0, 0.2^2)."""
    return make_gaussian_system(_linear_features, 1.0, [0.0], [[0.2**2]],
                                theta_true=[theta_true], name="linear", **kw)


MODELS = {
    "sin": make_sin,
    "cauchy": make_cauchy,
    "star": make_star,
    "linear": make_linear,
}


def make_model(name: str, **overrides) -> ModelSpec:
    try:
        factory = MODELS[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(MODELS)}") from None
    return factory(**overrides)


# -- module-level operations ---------------------------------------------

def transition_mean(model: ModelSpec, theta, x_prev):
    return model.transition_mean(theta, x_prev)


def transition_log_density(model: ModelSpec, theta, x_prev, x_next):
    return model.transition_log_density(theta, x_prev, x_next)


def observation_log_density(model: ModelSpec, x, y):
    return model.observation_log_density(x, y)


@dataclass(frozen=True, eq=False)
class Trajectory:
    xs: np.ndarray
    ys: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        if len(self.xs) != len(self.ys):
            raise ValueError("states and observations differ in length")

    def __len__(self) -> int:
        return len(self.xs)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "x", "y"])
            for t, (x, y) in enumerate(zip(self.xs, self.ys)):
                w.writerow([t, f"{x:.17g}", f"{y:.17g}"])

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        with open(Path(path), newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows or set(rows[0]) != {"t", "x", "y"}:
            raise ValueError(f"{path}: expected a t,x,y header")
        xs = np.array([float(r["x"]) for r in rows])
        ys = np.array([float(r["y"]) for r in rows])
        return cls(xs, ys)


def simulate(model: ModelSpec, T: int, seed: int, x0: float | None = None) -> Trajectory:
    """Forward-simulate T transitions from x_0 (default ``model.x0``)."""
    if T < 1:
        raise ValueError("T must be at least 1")
    rng = np.random.default_rng(seed)
    xs = np.empty(T + 1)
    xs[0] = model.x0 if x0 is None else x0
    theta = model.theta_true
    noise = model.sample_noise(rng, T)
    for t in range(1, T + 1):
        xs[t] = float(model.transition_mean(theta, xs[t - 1])) + noise[t - 1]
    ys = xs + model.obs_noise_std * rng.standard_normal(T + 1)
    return Trajectory(xs, ys, seed)
