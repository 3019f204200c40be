"""Samplers for the per-particle Gibbs density of theta.

The batched routines advance one Markov chain per particle at once: each
takes a log-density callable ``logf(theta, rows)`` that evaluates the
density of particle ``rows[i]`` at ``theta[i]``.  Scalar wrappers
(:func:`sample_slice`, :func:`sample_rwmh`) run the same code with a single
chain so that there is only one implementation of each kernel.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .suffstats import (
    BatchedLogPoly,
    GaussianSuffStat,
    LogPolyDensity,
    logpoly_eval,
    logpoly_gaussian_params,
)

__all__ = [
    "SamplerConfig",
    "SliceWidthWarning",
    "sample_gaussian",
    "sample_slice",
    "sample_rwmh",
    "sample_exact",
    "gaussian_draw",
    "slice_batch",
    "rwmh_batch",
    "sample_batch",
]

KINDS = ("slice", "rwmh", "exact-gaussian")

LogDensityFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


class SliceWidthWarning(RuntimeWarning):
    """Stepping out hit its limit; the slice width is probably far too small."""


@dataclass(frozen=True)
class SamplerConfig:
    kind: str = "slice"
    rw_step_std: float | tuple[float, ...] = 0.05
    slice_width: float | tuple[float, ...] | None = None  # None: prior std per dimension
    slice_max_steps: int = 50
    mh_steps_per_call: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown sampler kind {self.kind!r}; choose from {KINDS}")
        if np.any(np.asarray(self.rw_step_std) < 0):
            raise ValueError("rw_step_std must be nonnegative")
        if self.slice_width is not None and np.any(np.asarray(self.slice_width) <= 0):
            raise ValueError("slice_width must be positive")
        if self.slice_max_steps < 1 or self.mh_steps_per_call < 1:
            raise ValueError("step counts must be at least 1")

    def widths(self, prior, p: int) -> np.ndarray:
        if self.slice_width is None:
            return np.sqrt(np.diag(prior.cov))
        return np.broadcast_to(np.asarray(self.slice_width, dtype=float), (p,)).copy()

    def steps(self, p: int) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.rw_step_std, dtype=float), (p,)).copy()


# -- Gaussian draws --------------------------------------------------------

def _psd_sqrt(C: np.ndarray) -> np.ndarray:
    """Batched square-root factor of PSD matrices (..., p, p)."""
    try:
        return np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        pass
    w, V = np.linalg.eigh(C)
    tol = 1e-12 * np.maximum(np.abs(w).max(axis=-1, keepdims=True), 1e-300)
    if np.any(w < -tol):
        raise np.linalg.LinAlgError("covariance is indefinite")
    return V * np.sqrt(np.clip(w, 0.0, None))[..., None, :]


def gaussian_draw(m: np.ndarray, C: np.ndarray, z: np.ndarray) -> np.ndarray:
    """m + L z for batched means (n, p), covariances (n, p, p), normals (n, p)."""
    if m.shape[-1] == 1:
        if np.any(C[..., 0, 0] < 0):
            raise np.linalg.LinAlgError("negative variance")
        return m + np.sqrt(C[..., 0, :]) * z
    return m + np.einsum("...ij,...j->...i", _psd_sqrt(C), z)


def sample_gaussian(s: GaussianSuffStat, rng: np.random.Generator) -> np.ndarray:
    z = rng.standard_normal(s.m.size)
    return gaussian_draw(s.m[None], s.C[None], z[None])[0]


# -- slice sampling --------------------------------------------------------

def _with_coord(theta, rows, d, values):
    th = theta[rows].copy()
    th[:, d] = values
    return th


def slice_batch(logf: LogDensityFn, theta: np.ndarray, widths: np.ndarray, support: np.ndarray,
                max_steps: int, rng: np.random.Generator, lp: np.ndarray | None = None):
    """One coordinate-wise slice-sampling scan for every chain.

    Stepping out follows the limited procedure (at most ``max_steps`` widths
    in total per coordinate) and the interval is clipped to the support,
    followed by shrinkage.  Returns ``(theta, logf(theta))``.
    """
    theta = np.array(theta, dtype=float)
    n, p = theta.shape
    all_rows = np.arange(n)
    if lp is None:
        lp = logf(theta, all_rows)
    lp = np.array(lp, dtype=float)
    if not np.all(np.isfinite(lp)):
        raise ValueError("slice sampling needs a finite log density at the initial point")
    hit_limit = False
    for d in range(p):
        w = widths[d]
        lo, hi = support[d]
        x0 = theta[:, d].copy()
        level = lp - rng.standard_exponential(n)
        left = x0 - w * rng.random(n)
        right = left + w
        budget_left = np.floor(max_steps * rng.random(n)).astype(int)
        budget_right = (max_steps - 1) - budget_left

        for edge, budget, sign, bound in ((left, budget_left, -1.0, lo), (right, budget_right, 1.0, hi)):
            active = (edge > bound) if sign < 0 else (edge < bound)
            active &= budget > 0
            while active.any():
                rows = all_rows[active]
                above = logf(_with_coord(theta, rows, d, edge[rows]), rows) > level[rows]
                grow = rows[above]
                edge[grow] += sign * w
                budget[grow] -= 1
                active[:] = False
                keep = grow[(budget[grow] > 0) & ((edge[grow] > bound) if sign < 0 else (edge[grow] < bound))]
                active[keep] = True
        if np.any((budget_left == 0) & (budget_right == 0) & (left > lo) & (right < hi)):
            hit_limit = True
        np.clip(left, lo, hi, out=left)
        np.clip(right, lo, hi, out=right)

        new = x0.copy()
        new_lp = lp.copy()
        pending = np.ones(n, dtype=bool)
        for _ in range(200):
            if not pending.any():
                break
            rows = all_rows[pending]
            cand = left[rows] + rng.random(rows.size) * (right[rows] - left[rows])
            cand_lp = logf(_with_coord(theta, rows, d, cand), rows)
            ok = cand_lp > level[rows]
            new[rows[ok]] = cand[ok]
            new_lp[rows[ok]] = cand_lp[ok]
            pending[rows[ok]] = False
            bad = rows[~ok]
            below = cand[~ok] < x0[bad]
            left[bad[below]] = cand[~ok][below]
            right[bad[~below]] = cand[~ok][~below]
        # chains still pending have shrunk onto x0 and keep it
        theta[:, d] = new
        lp = new_lp
    if hit_limit:
        warnings.warn("slice step-out limit reached; consider a wider slice_width", SliceWidthWarning,
                      stacklevel=2)
    return theta, lp


def rwmh_batch(logf: LogDensityFn, theta: np.ndarray, step: np.ndarray, n_steps: int,
               rng: np.random.Generator, lp: np.ndarray | None = None):
    """``n_steps`` Gaussian random-walk Metropolis steps per chain.

    Proposals outside the support get log density -inf and are rejected.
    Returns ``(theta, logf(theta), accepted_count)``.
    """
    theta = np.array(theta, dtype=float)
    n = theta.shape[0]
    rows = np.arange(n)
    lp = logf(theta, rows) if lp is None else np.array(lp, dtype=float)
    accepted = np.zeros(n, dtype=int)
    for _ in range(n_steps):
        prop = theta + step * rng.standard_normal(theta.shape)
        prop_lp = logf(prop, rows)
        log_u = np.log(rng.random(n))
        with np.errstate(invalid="ignore"):
            ok = log_u < prop_lp - lp
        ok &= np.isfinite(prop_lp)
        theta[ok] = prop[ok]
        lp[ok] = prop_lp[ok]
        accepted += ok
    return theta, lp, accepted


def _scalar_logf(d: LogPolyDensity) -> LogDensityFn:
    return lambda th, rows: np.atleast_1d(logpoly_eval(d, th))


def _as_row(theta_init, p):
    return np.asarray(theta_init, dtype=float).reshape(1, p)


def sample_slice(d: LogPolyDensity, theta_init, cfg: SamplerConfig, rng: np.random.Generator) -> np.ndarray:
    p = d.param_dim
    theta, _ = slice_batch(_scalar_logf(d), _as_row(theta_init, p), cfg.widths(d.prior, p),
                           d.support, cfg.slice_max_steps, rng)
    return theta[0]


def sample_rwmh(d: LogPolyDensity, theta_init, cfg: SamplerConfig, rng: np.random.Generator) -> np.ndarray:
    p = d.param_dim
    theta, _, _ = rwmh_batch(_scalar_logf(d), _as_row(theta_init, p), cfg.steps(p),
                             cfg.mh_steps_per_call, rng)
    return theta[0]


def _truncated_draws(m, C, support, rng, max_tries=1000):
    n, p = m.shape
    theta = gaussian_draw(m, C, rng.standard_normal((n, p)))
    for _ in range(max_tries):
        out = np.any((theta < support[:, 0]) | (theta > support[:, 1]), axis=1)
        if not out.any():
            return theta
        idx = np.flatnonzero(out)
        theta[idx] = gaussian_draw(m[idx], C[idx], rng.standard_normal((idx.size, p)))
    raise RuntimeError("support rejection failed; posterior has little mass inside the support")


def sample_exact(d: LogPolyDensity, rng: np.random.Generator) -> np.ndarray:
    """Exact draw from a log-quadratic density, by rejection onto the support."""
    mean, cov = logpoly_gaussian_params(d)
    return _truncated_draws(mean[None], cov[None], d.support, rng)[0]


def sample_batch(stats: BatchedLogPoly, theta_init: np.ndarray, cfg: SamplerConfig,
                 rng: np.random.Generator) -> np.ndarray:
    """Advance every particle's theta under its own Gibbs density."""
    p = stats.kernel.param_dim
    if cfg.kind == "exact-gaussian":
        mean, cov = stats.gaussian_params()
        return _truncated_draws(mean, cov, stats.support, rng)
    if cfg.kind == "slice":
        theta, _ = slice_batch(stats.log_density, theta_init, cfg.widths(stats.prior, p),
                               stats.support, cfg.slice_max_steps, rng)
        return theta
    theta, _, _ = rwmh_batch(stats.log_density, theta_init, cfg.steps(p), cfg.mh_steps_per_call, rng)
    return theta
