"""Brute-force grid oracles and KL checks for the polynomial approximation.

Everything here costs O(T * G) per density and is meant for validation,
not for use inside a filter.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .models import ModelSpec
from .polynomial import Poly, remainder_bound
from .suffstats import IncrementKernel, LogPolyDensity, logpoly_eval, logpoly_update

__all__ = [
    "GridDensity",
    "make_grid",
    "grid_density_from_log",
    "gibbs_density_exact",
    "gibbs_density_approx",
    "kl_divergence",
    "kl_bound_check",
    "kl_sweep",
    "posterior_moments",
    "posterior_mode",
    "grid_mesh",
    "kl_between_log_densities",
    "rmse",
    "total_variation",
    "example_log_density",
    "example_taylor",
    "example_remainder_epsilon",
    "transition_approx_error",
    "write_kl_csv",
]


def _trapezoid_weights(points: np.ndarray) -> np.ndarray:
    w = np.empty_like(points)
    dx = np.diff(points)
    w[0] = dx[0] / 2
    w[-1] = dx[-1] / 2
    w[1:-1] = (dx[:-1] + dx[1:]) / 2
    return w


@dataclass(frozen=True, eq=False)
class GridDensity:
    """Normalized probability masses on a rectangular theta grid.

    ``log_mass`` has one axis per parameter.  Masses are trapezoid weights
    times density values, normalized to sum to one; ``log_norm`` is the log
    of the trapezoid estimate of the normalizing constant.
    """

    points: tuple[np.ndarray, ...]
    log_mass: np.ndarray
    log_norm: float

    @property
    def mass(self) -> np.ndarray:
        return np.exp(self.log_mass)

    @property
    def param_dim(self) -> int:
        return len(self.points)

    def mesh(self) -> np.ndarray:
        return grid_mesh(self.points)

    def to_csv(self, path) -> None:
        mesh = self.mesh().reshape(-1, self.param_dim)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"theta_{i + 1}" for i in range(self.param_dim)] + ["mass"])
            for row, m in zip(mesh, self.mass.ravel()):
                w.writerow([f"{v:.17g}" for v in row] + [f"{m:.17g}"])


def make_grid(model: ModelSpec, points: int | None = None) -> tuple[np.ndarray, ...]:
    """Uniform grid over the model's support (2001 points in 1-D, 201 per axis otherwise)."""
    if points is None:
        points = 2001 if model.param_dim == 1 else 201
    return tuple(np.linspace(lo, hi, points) for lo, hi in model.theta_support)


def grid_mesh(points) -> np.ndarray:
    return np.stack(np.meshgrid(*points, indexing="ij"), axis=-1)


def grid_density_from_log(points, log_values: np.ndarray) -> GridDensity:
    points = tuple(np.asarray(p, dtype=float) for p in points)
    log_w = sum(
        np.log(_trapezoid_weights(p)).reshape([-1 if i == j else 1 for j in range(len(points))])
        for i, p in enumerate(points)
    )
    log_values = np.asarray(log_values, dtype=float)
    if not np.any(np.isfinite(log_values)):
        raise FloatingPointError("log density is not finite anywhere on the grid")
    joint = log_w + log_values
    log_norm = float(logsumexp(joint))
    return GridDensity(points, joint - log_norm, log_norm)


def _check_grid(model, points):
    if len(points) != model.param_dim:
        raise ValueError("grid dimension differs from the parameter dimension")


def gibbs_density_exact(model: ModelSpec, xs, grid) -> GridDensity:
    """p(theta | x_{0:T}) with the exact transition law, one pass per time step."""
    _check_grid(model, grid)
    xs = np.asarray(xs, dtype=float)
    mesh = grid_mesh(grid)
    logp = model.theta_prior.log_density(mesh)
    for t in range(1, xs.size):
        logp = logp + model.transition_log_density(mesh, xs[t - 1], xs[t])
    return grid_density_from_log(grid, logp)


def gibbs_density_approx(model: ModelSpec, xs, grid, M: int, method: str = "eta") -> GridDensity:
    """Gibbs density with each transition replaced by its order-M approximation.

    ``method`` picks the construction:

    * ``"eta"``: accumulate a :class:`LogPolyDensity` with one update per step;
    * ``"batched"``: sum the compiled increments used inside the EPF;
    * ``"direct"``: add up approximate transition log densities on the grid.

    All three describe the same density; comparing them checks the
    sufficient-statistic bookkeeping.
    """
    _check_grid(model, grid)
    xs = np.asarray(xs, dtype=float)
    mesh = grid_mesh(grid)
    if method == "eta":
        d = LogPolyDensity.fresh(model, M)
        for t in range(1, xs.size):
            d = logpoly_update(d, model, xs[t - 1], xs[t])
        logp = logpoly_eval(d, mesh)
    elif method == "batched":
        kernel = IncrementKernel(model, M)
        coefs = kernel(xs[:-1], xs[1:]).sum(axis=0) if xs.size > 1 else np.zeros(kernel.size)
        d = LogPolyDensity(kernel.to_poly(coefs), model.theta_prior, model.theta_support, M,
                           model.eta_degree_bound(M), model.center)
        logp = logpoly_eval(d, mesh)
    elif method == "direct":
        logp = model.theta_prior.log_density(mesh)
        for t in range(1, xs.size):
            logp = logp + model.approx_transition_log_density(mesh, xs[t - 1], xs[t], M)
    else:
        raise ValueError(f"unknown method {method!r}")
    return grid_density_from_log(grid, logp)


def _same_grid(p: GridDensity, q: GridDensity) -> None:
    if p.log_mass.shape != q.log_mass.shape or not all(
        np.array_equal(a, b) for a, b in zip(p.points, q.points)
    ):
        raise ValueError("densities live on different grids")


def kl_divergence(p: GridDensity, q: GridDensity) -> float:
    """Discrete KL(p || q) over grid masses, computed from log masses."""
    _same_grid(p, q)
    live = p.log_mass > -np.inf
    if np.any(q.log_mass[live] == -np.inf):
        raise ValueError("q has zero mass where p is positive")
    lp = p.log_mass[live]
    kl = float(np.sum(np.exp(lp) * (lp - q.log_mass[live])))
    return max(kl, 0.0)


def total_variation(p: GridDensity, q: GridDensity) -> float:
    _same_grid(p, q)
    return 0.5 * float(np.abs(p.mass - q.mass).sum())


def kl_between_log_densities(S_values, P_values, points=None) -> float:
    S_values = np.asarray(S_values, dtype=float)
    P_values = np.asarray(P_values, dtype=float)
    if points is None:
        points = np.arange(S_values.size, dtype=float)
    p = grid_density_from_log((points,), S_values)
    q = grid_density_from_log((points,), P_values)
    return kl_divergence(p, q)


def kl_bound_check(S_values, P_values, epsilon: float, points=None) -> bool:
    """Check KL(exp S || exp P) <= 2 epsilon on a 1-D grid.

    Raises ValueError if the precondition ``|S - P| <= epsilon`` fails.
    """
    gap = float(np.max(np.abs(np.asarray(S_values) - np.asarray(P_values))))
    if gap > epsilon * (1 + 1e-12):
        raise ValueError(f"|S - P| reaches {gap:.3g} > epsilon = {epsilon:.3g}")
    return kl_between_log_densities(S_values, P_values, points) <= 2.0 * epsilon


def posterior_moments(d: GridDensity) -> tuple[np.ndarray, np.ndarray]:
    mass = d.mass
    mean = np.empty(d.param_dim)
    std = np.empty(d.param_dim)
    for i, pts in enumerate(d.points):
        marg = mass.sum(axis=tuple(j for j in range(d.param_dim) if j != i))
        mean[i] = marg @ pts
        std[i] = math.sqrt(max(marg @ (pts - mean[i]) ** 2, 0.0))
    return mean, std


def posterior_mode(d: GridDensity) -> np.ndarray:
    idx = np.unravel_index(np.argmax(d.log_mass), d.log_mass.shape)
    return np.array([pts[i] for pts, i in zip(d.points, idx)])


def rmse(estimates, truth) -> float:
    e = np.asarray(estimates, dtype=float) - np.asarray(truth, dtype=float)
    return float(np.sqrt(np.mean(e * e)))


def kl_sweep(model: ModelSpec, xs, T_list, M_list, grid) -> list[tuple[int, int, float]]:
    """KL(exact || order-M approximation) for each prefix length T and order M."""
    rows = []
    for T in T_list:
        exact = gibbs_density_exact(model, xs[: T + 1], grid)
        for M in M_list:
            approx = gibbs_density_approx(model, xs[: T + 1], grid, M, method="batched")
            rows.append((int(T), int(M), kl_divergence(exact, approx)))
    return rows


def write_kl_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["T", "M", "kl"])
        for T, M, kl in rows:
            w.writerow([T, M, f"{kl:.17g}"])


def transition_approx_error(model: ModelSpec, xs, M: int, theta=None) -> np.ndarray:
    """|log p - log p_hat| per transition at ``theta`` (default: the true value)."""
    xs = np.asarray(xs, dtype=float)
    theta = model.theta_true if theta is None else np.atleast_1d(theta)
    exact = np.array([model.transition_log_density(theta, a, b) for a, b in zip(xs[:-1], xs[1:])])
    approx = np.array([model.approx_transition_log_density(theta, a, b, M) for a, b in zip(xs[:-1], xs[1:])])
    return np.abs(exact.ravel() - approx.ravel())


# -- the one-dimensional example S(x) = -x^2 + 5 sin^2(x) ---------------------

def example_log_density(x):
    x = np.asarray(x, dtype=float)
    return -x * x + 5.0 * np.sin(x) ** 2


def example_taylor(M: int) -> Poly:
    """Order-M Maclaurin polynomial of -x^2 + 5 sin^2(x).

    Uses sin^2 x = sum_{k>=1} (-1)^{k+1} 2^{2k-1} x^{2k} / (2k)!.
    """
    coefs = [0.0] * (M + 1)
    if M >= 2:
        coefs[2] = -1.0
    for k in range(1, M // 2 + 1):
        coefs[2 * k] += 5.0 * (-1.0) ** (k + 1) * 2.0 ** (2 * k - 1) / math.factorial(2 * k)
    return Poly.univariate(coefs)


def example_remainder_epsilon(M: int, a: float = 3.0) -> float:
    """Lagrange bound on |S - P| over [-a, a]; the (M+1)-th derivative is at most 5 * 2^M."""
    if M < 2:
        raise ValueError("bound derived for M >= 2")
    return remainder_bound(5.0 * 2.0**M, a, M)
