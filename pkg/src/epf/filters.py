"""Particle filters for joint state and static-parameter estimation.

All filters share one skeleton: particles start at the model's initial state
with theta drawn from the (support-truncated) prior, then for t = 1..T each
particle's theta is refreshed (filter specific), the state is propagated
through the exact transition, weighted by the observation likelihood, and
the population is resampled.  Weights are kept in log space.

Randomness comes from :func:`epf.rng.stream`, one stream per (seed, t,
purpose), so every run is a pure function of its inputs and seed.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from . import rng as rngs
from .models import GaussianSystemModel, ModelSpec
from .samplers import SamplerConfig, gaussian_draw, sample_batch
from .suffstats import BatchedLogPoly, GaussianBatch, IncrementKernel

__all__ = [
    "Particle",
    "ParticleSet",
    "FilterOutput",
    "IncompatibleModelError",
    "resample_multinomial",
    "run_sir",
    "run_sir_augmented",
    "run_liu_west",
    "run_storvik",
    "run_epf",
    "default_sampler",
    "FILTERS",
]


class IncompatibleModelError(ValueError):
    """The chosen filter cannot run on this model."""


@dataclass(frozen=True)
class Particle:
    x: float
    theta: np.ndarray
    stat: object
    weight: float


@dataclass
class ParticleSet:
    x: np.ndarray
    theta: np.ndarray
    stat: BatchedLogPoly | GaussianBatch | None
    logw: np.ndarray

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.logw)

    def take(self, idx: np.ndarray) -> "ParticleSet":
        stat = None if self.stat is None else self.stat.take(idx)
        n = len(idx)
        return ParticleSet(self.x[idx].copy(), self.theta[idx].copy(), stat, np.full(n, -np.log(n)))

    def particle(self, i: int) -> Particle:
        if isinstance(self.stat, BatchedLogPoly):
            stat = self.stat.density(i)
        elif isinstance(self.stat, GaussianBatch):
            stat = self.stat.stat(i)
        else:
            stat = None
        return Particle(float(self.x[i]), self.theta[i].copy(), stat, float(np.exp(self.logw[i])))


@dataclass
class FilterOutput:
    """Per-step summaries of a filter run (t = 0..T)."""

    kind: str
    theta_mean: np.ndarray
    theta_std: np.ndarray
    x_mean: np.ndarray
    ess: np.ndarray
    unique_theta: np.ndarray
    step_seconds: np.ndarray
    final: ParticleSet | None = field(default=None, repr=False)

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.x_mean.size)

    @property
    def param_dim(self) -> int:
        return self.theta_mean.shape[1]

    def to_csv(self, path) -> None:
        p = self.param_dim
        header = ["t"] + [f"theta_mean_{i + 1}" for i in range(p)] + [f"theta_std_{i + 1}" for i in range(p)]
        header += ["x_mean", "ess", "unique_theta"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for t in range(self.x_mean.size):
                row = [str(t)]
                row += [f"{v:.17g}" for v in self.theta_mean[t]]
                row += [f"{v:.17g}" for v in self.theta_std[t]]
                row += [f"{self.x_mean[t]:.17g}", f"{self.ess[t]:.17g}", str(int(self.unique_theta[t]))]
                w.writerow(row)


class _Recorder:
    def __init__(self, T: int, p: int, kind: str):
        self.kind = kind
        self.theta_mean = np.zeros((T + 1, p))
        self.theta_std = np.zeros((T + 1, p))
        self.x_mean = np.zeros(T + 1)
        self.ess = np.zeros(T + 1)
        self.unique = np.zeros(T + 1, dtype=int)
        self.seconds = np.zeros(T + 1)

    def record(self, t: int, ps: ParticleSet) -> None:
        w = ps.weights
        mean = w @ ps.theta
        var = w @ (ps.theta - mean) ** 2
        self.theta_mean[t] = mean
        self.theta_std[t] = np.sqrt(np.maximum(var, 0.0))
        self.x_mean[t] = w @ ps.x
        self.ess[t] = 1.0 / np.sum(w * w)
        self.unique[t] = np.unique(ps.theta, axis=0).shape[0]

    def output(self, final: ParticleSet) -> FilterOutput:
        return FilterOutput(self.kind, self.theta_mean, self.theta_std, self.x_mean, self.ess,
                            self.unique, self.seconds, final)


def resample_multinomial(particles: ParticleSet, rng: np.random.Generator) -> ParticleSet:
    """N draws with replacement in proportion to the weights; (x, theta, stat) move together."""
    w = particles.weights
    total = w.sum()
    if not np.isfinite(total) or total <= 0:
        raise FloatingPointError("all particle weights are zero")
    cdf = np.cumsum(w)
    idx = np.searchsorted(cdf, rng.random(len(w)) * cdf[-1], side="right")
    return particles.take(np.minimum(idx, len(w) - 1))


def _prior_draws(model: ModelSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    theta = model.theta_prior.sample(rng, n)
    for _ in range(1000):
        bad = ~model.in_support(theta)
        if not bad.any():
            return theta
        theta[bad] = model.theta_prior.sample(rng, int(bad.sum()))
    raise RuntimeError("prior has almost no mass inside the support")


def _initial(model: ModelSpec, N: int, seed: int, stat, theta0=None) -> ParticleSet:
    if theta0 is None:
        theta = _prior_draws(model, N, rngs.stream(seed, 0, rngs.INIT))
    else:
        theta = np.tile(theta0, (N, 1))
    return ParticleSet(np.full(N, float(model.x0)), theta, stat, np.full(N, -np.log(N)))


def _weigh(ps: ParticleSet, model: ModelSpec, y: float) -> None:
    logw = ps.logw + model.observation_log_density(ps.x, y)
    total = logsumexp(logw)
    if not np.isfinite(total):
        raise FloatingPointError("particle weights underflowed")
    ps.logw = logw - total


def _resample_step(ps: ParticleSet, seed: int, t: int, threshold: float | None) -> ParticleSet:
    if threshold is not None:
        ess = 1.0 / np.sum(ps.weights**2)
        if ess >= threshold * len(ps):
            return ps
    return resample_multinomial(ps, rngs.stream(seed, t, rngs.RESAMPLE))


StepFn = Callable[[ParticleSet, int], None]
Observer = Callable[[int, ParticleSet], None]


def _run(model, ys, N, seed, kind, stat, step: StepFn, resample_threshold, observer,
         theta0=None) -> FilterOutput:
    if N < 1:
        raise ValueError("need at least one particle")
    ys = np.asarray(ys, dtype=float)
    T = ys.size - 1
    rec = _Recorder(T, model.param_dim, kind)
    start = time.perf_counter()
    ps = _initial(model, N, seed, stat, theta0)
    rec.record(0, ps)
    rec.seconds[0] = time.perf_counter() - start
    if observer:
        observer(0, ps)
    for t in range(1, T + 1):
        start = time.perf_counter()
        step(ps, t)
        _weigh(ps, model, ys[t])
        rec.record(t, ps)
        ps = _resample_step(ps, seed, t, resample_threshold)
        rec.seconds[t] = time.perf_counter() - start
        if observer:
            observer(t, ps)
    return rec.output(ps)


def _propagate(ps: ParticleSet, model: ModelSpec, seed: int, t: int) -> np.ndarray:
    return model.sample_transition(ps.theta, ps.x, rngs.stream(seed, t, rngs.STATE))


def run_sir(model: ModelSpec, ys, N: int, seed: int, theta_known, *,
            resample_threshold: float | None = None, observer: Observer | None = None) -> FilterOutput:
    """Bootstrap filter with a known parameter."""
    theta = np.broadcast_to(np.asarray(theta_known, dtype=float), (model.param_dim,))

    def step(ps, t):
        ps.x = _propagate(ps, model, seed, t)

    return _run(model, ys, N, seed, "sir", None, step, resample_threshold, observer, theta0=theta)


def run_liu_west(model: ModelSpec, ys, N: int, rho: float, seed: int, *,
                 resample_threshold: float | None = None, observer: Observer | None = None,
                 kind: str = "liu_west") -> FilterOutput:
    """Liu--West shrink-and-perturb filter.

    Every step, per theta dimension:
    ``theta <- rho theta + (1 - rho) mean + sqrt(1 - rho^2) std N(0, 1)``
    with mean and std taken across particles.  ``rho = 1`` switches the
    perturbation off (no draws), which is the augmented-state SIR filter.
    """
    if not 0.0 < rho <= 1.0:
        raise ValueError("rho must lie in (0, 1]")

    def step(ps, t):
        if rho < 1.0:
            r = rngs.stream(seed, t, rngs.PERTURB)
            mean = ps.theta.mean(axis=0)
            std = ps.theta.std(axis=0)
            noise = r.standard_normal(ps.theta.shape)
            ps.theta = rho * ps.theta + (1.0 - rho) * mean + np.sqrt(1.0 - rho**2) * std * noise
        ps.x = _propagate(ps, model, seed, t)

    return _run(model, ys, N, seed, kind, None, step, resample_threshold, observer)


def run_sir_augmented(model: ModelSpec, ys, N: int, seed: int, *,
                      resample_threshold: float | None = None, observer: Observer | None = None) -> FilterOutput:
    """SIR on the state augmented with theta under an identity transition."""
    return run_liu_west(model, ys, N, 1.0, seed, resample_threshold=resample_threshold,
                        observer=observer, kind="sir_augmented")


def run_storvik(model: ModelSpec, ys, N: int, seed: int, *,
                resample_threshold: float | None = None, observer: Observer | None = None) -> FilterOutput:
    """Storvik's filter with exact conjugate statistics (Gaussian system models only)."""
    if not isinstance(model, GaussianSystemModel):
        raise IncompatibleModelError(f"Storvik's filter needs a Gaussian system model, got {model.name!r}")
    stats = GaussianBatch.from_prior(model.theta_prior, N)

    def step(ps, t):
        r = rngs.stream(seed, t, rngs.THETA)
        ps.theta = gaussian_draw(ps.stat.m, ps.stat.C, r.standard_normal(ps.theta.shape))
        x_new = _propagate(ps, model, seed, t)
        ps.stat.update(model.feature_matrix(ps.x), model.Q, x_new)
        ps.x = x_new

    return _run(model, ys, N, seed, "storvik", stats, step, resample_threshold, observer)


def default_sampler(model: ModelSpec) -> SamplerConfig:
    if model.param_dim > 1:
        return SamplerConfig(kind="rwmh", rw_step_std=0.05, mh_steps_per_call=1)
    return SamplerConfig(kind="slice")


def run_epf(model: ModelSpec, ys, N: int, M: int, sampler_cfg: SamplerConfig | None, seed: int, *,
            resample_threshold: float | None = None, observer: Observer | None = None) -> FilterOutput:
    """Extended parameter filter.

    Each particle carries a log-polynomial approximation of its Gibbs
    density.  At step t theta is drawn from the statistic of x_{0:t-1}
    (one sampler call, started from the particle's previous theta), the
    state moves through the exact transition, and the statistic absorbs
    the new (x_{t-1}, x_t) pair before resampling.
    """
    if M < 1:
        raise ValueError("approximation order must be at least 1")
    cfg = sampler_cfg or default_sampler(model)
    kernel = IncrementKernel(model, M)
    stats = BatchedLogPoly.fresh(model, M, N, kernel)

    def step(ps, t):
        ps.theta = sample_batch(ps.stat, ps.theta, cfg, rngs.stream(seed, t, rngs.THETA))
        x_new = _propagate(ps, model, seed, t)
        ps.stat.update(ps.x, x_new)
        ps.x = x_new

    return _run(model, ys, N, seed, "epf", stats, step, resample_threshold, observer)


FILTERS = ("sir", "sir_augmented", "liu_west", "storvik", "epf")
