"""Sparse multivariate polynomials and the Taylor expansions used by the EPF.

A :class:`Poly` maps exponent tuples to float coefficients.  Zero
coefficients are never stored, so two polynomials compare equal exactly when
their term dictionaries do.  Series coefficients that need to be exact (the
logistic series) are generated with :class:`fractions.Fraction` and only
converted to floats at the end.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "Poly",
    "TaylorExpansion",
    "poly_add",
    "poly_scale",
    "poly_mul",
    "poly_eval",
    "taylor_sin",
    "taylor_log1p_sq",
    "taylor_logistic",
    "logistic_series",
    "logistic_derivative_polys",
    "logistic_taylor_coefficients",
    "remainder_bound",
]

Exponent = tuple[int, ...]


class Poly:
    """Immutable sparse polynomial in ``nvars`` variables."""

    __slots__ = ("_terms", "nvars")

    def __init__(self, terms: Mapping[Sequence[int], float] | None = None, nvars: int = 1):
        if nvars < 1:
            raise ValueError("a polynomial needs at least one variable")
        clean: dict[Exponent, float] = {}
        for exps, coef in (terms or {}).items():
            key = tuple(int(e) for e in exps)
            if len(key) != nvars:
                raise ValueError(f"exponent {key} does not have {nvars} entries")
            if any(e < 0 for e in key):
                raise ValueError(f"negative exponent in {key}")
            clean[key] = clean.get(key, 0.0) + float(coef)
        self._terms = {k: v for k, v in clean.items() if v != 0.0}
        self.nvars = nvars

    # -- constructors -------------------------------------------------
    @classmethod
    def constant(cls, value: float, nvars: int = 1) -> "Poly":
        return cls({(0,) * nvars: value}, nvars)

    @classmethod
    def variable(cls, index: int, nvars: int = 1) -> "Poly":
        exps = [0] * nvars
        exps[index] = 1
        return cls({tuple(exps): 1.0}, nvars)

    @classmethod
    def univariate(cls, coefs: Sequence[float]) -> "Poly":
        """Build ``sum_k coefs[k] * t**k``."""
        return cls({(k,): c for k, c in enumerate(coefs)}, 1)

    # -- inspection ---------------------------------------------------
    @property
    def terms(self) -> Mapping[Exponent, float]:
        return MappingProxyType(self._terms)

    def coefficient(self, exps: Sequence[int]) -> float:
        return self._terms.get(tuple(exps), 0.0)

    def degree(self) -> int:
        """Total degree; the zero polynomial has degree -1."""
        return max((sum(e) for e in self._terms), default=-1)

    def var_degree(self, index: int) -> int:
        return max((e[index] for e in self._terms), default=-1)

    def is_zero(self) -> bool:
        return not self._terms

    def __len__(self) -> int:
        return len(self._terms)

    def __repr__(self) -> str:
        return f"Poly({dict(sorted(self._terms.items()))!r}, nvars={self.nvars})"

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Poly):
            return NotImplemented
        return self.nvars == other.nvars and self._terms == other._terms

    __hash__ = None  # type: ignore[assignment]

    # -- ring operations ----------------------------------------------
    def _check(self, other: "Poly") -> None:
        if self.nvars != other.nvars:
            raise ValueError(f"variable count mismatch: {self.nvars} vs {other.nvars}")

    def __add__(self, other: "Poly | float") -> "Poly":
        if not isinstance(other, Poly):
            other = Poly.constant(other, self.nvars)
        self._check(other)
        out = dict(self._terms)
        for e, c in other._terms.items():
            out[e] = out.get(e, 0.0) + c
        return Poly(out, self.nvars)

    __radd__ = __add__

    def __neg__(self) -> "Poly":
        return self.scale(-1.0)

    def __sub__(self, other: "Poly | float") -> "Poly":
        if not isinstance(other, Poly):
            other = Poly.constant(other, self.nvars)
        return self + (-other)

    def __rsub__(self, other: float) -> "Poly":
        return Poly.constant(other, self.nvars) - self

    def scale(self, k: float) -> "Poly":
        return Poly({e: c * k for e, c in self._terms.items()}, self.nvars)

    def __mul__(self, other: "Poly | float") -> "Poly":
        if not isinstance(other, Poly):
            return self.scale(float(other))
        self._check(other)
        out: dict[Exponent, float] = {}
        for ea, ca in self._terms.items():
            for eb, cb in other._terms.items():
                key = tuple(i + j for i, j in zip(ea, eb))
                out[key] = out.get(key, 0.0) + ca * cb
        return Poly(out, self.nvars)

    __rmul__ = __mul__

    def __pow__(self, n: int) -> "Poly":
        if n < 0:
            raise ValueError("negative powers are not polynomials")
        result = Poly.constant(1.0, self.nvars)
        base = self
        while n:
            if n & 1:
                result = result * base
            n >>= 1
            if n:
                base = base * base
        return result

    # -- evaluation and substitution ----------------------------------
    def __call__(self, point: Sequence[float] | np.ndarray | float) -> np.ndarray | float:
        return poly_eval(self, point)

    def partial_eval(self, values: Sequence[float], start: int) -> "Poly":
        """Substitute ``values`` for variables ``start, start+1, ...``.

        The result keeps only the leading ``start`` variables.
        """
        values = list(values)
        if start < 1 or start + len(values) != self.nvars:
            raise ValueError("partial_eval must substitute a trailing block of variables")
        out: dict[Exponent, float] = {}
        for e, c in self._terms.items():
            factor = c
            for v, k in zip(values, e[start:]):
                if k:
                    factor *= v**k
            key = e[:start]
            out[key] = out.get(key, 0.0) + factor
        return Poly(out, start)

    def compose(self, inner: "Poly") -> "Poly":
        """For univariate ``self``, return ``self(inner)`` by Horner's rule."""
        if self.nvars != 1:
            raise ValueError("compose needs a univariate outer polynomial")
        result = Poly({}, inner.nvars)
        for k in range(self.degree(), -1, -1):
            result = result * inner + self.coefficient((k,))
        return result

    def embed(self, nvars: int, positions: Sequence[int]) -> "Poly":
        """Re-express in ``nvars`` variables, mapping variable i to ``positions[i]``."""
        out = {}
        for e, c in self._terms.items():
            key = [0] * nvars
            for i, k in zip(positions, e):
                key[i] += k
            out[tuple(key)] = c
        return Poly(out, nvars)

    def shift(self, offsets: Sequence[float]) -> "Poly":
        """Substitute ``x_i -> x_i - offsets[i]``, i.e. re-centre the polynomial."""
        if len(offsets) != self.nvars:
            raise ValueError("one offset per variable required")
        if not any(offsets):
            return self
        out = Poly({}, self.nvars)
        moved = [Poly.variable(i, self.nvars) - float(o) for i, o in enumerate(offsets)]
        for e, c in self._terms.items():
            term = Poly.constant(c, self.nvars)
            for v, k in zip(moved, e):
                if k:
                    term = term * v**k
            out = out + term
        return out

    def drop_constant(self, leading: int | None = None) -> "Poly":
        """Drop terms free of the first ``leading`` variables (default: all)."""
        n = self.nvars if leading is None else leading
        return Poly({e: c for e, c in self._terms.items() if any(e[:n])}, self.nvars)

    # -- debug text format --------------------------------------------
    def to_text(self) -> str:
        """One ``e1 e2 ... ep : coeff`` line per term, sorted by exponent."""
        lines = [
            " ".join(str(k) for k in e) + " : " + repr(c)
            for e, c in sorted(self._terms.items())
        ]
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def from_text(cls, text: str, nvars: int | None = None) -> "Poly":
        terms: dict[Exponent, float] = {}
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            lhs, rhs = line.split(":")
            key = tuple(int(k) for k in lhs.split())
            nvars = nvars or len(key)
            terms[key] = float(rhs)
        if nvars is None:
            raise ValueError("cannot infer the variable count of an empty polynomial")
        return cls(terms, nvars)


def poly_add(a: Poly, b: Poly) -> Poly:
    return a + b


def poly_scale(a: Poly, k: float) -> Poly:
    return a.scale(k)


def poly_mul(a: Poly, b: Poly) -> Poly:
    return a * b


def poly_eval(a: Poly, point) -> np.ndarray | float:
    """Evaluate ``a`` at ``point``.

    ``point`` has shape ``(..., nvars)``; a bare scalar is accepted for
    univariate polynomials.  Returns a float for a single point.
    """
    x = np.asarray(point, dtype=float)
    if a.nvars == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        x = x[..., None]
    if x.shape[-1] != a.nvars:
        raise ValueError(f"point has {x.shape[-1]} coordinates, polynomial has {a.nvars} variables")
    out = np.zeros(x.shape[:-1])
    for e, c in a.terms.items():
        term = np.full(x.shape[:-1], c)
        for j, k in enumerate(e):
            if k:
                term = term * x[..., j] ** k
        out = out + term
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class TaylorExpansion:
    """A truncated Taylor series.  ``poly`` is written in ``theta - center``."""

    center: tuple[float, ...]
    order: int
    poly: Poly

    def __call__(self, theta) -> np.ndarray | float:
        shifted = np.asarray(theta, dtype=float) - np.asarray(self.center)
        return poly_eval(self.poly, shifted)

    def in_theta(self) -> Poly:
        """The same polynomial written in theta rather than ``theta - center``."""
        return self.poly.shift(self.center)


def taylor_sin(x_prev: float, M: int, center: float = 0.0) -> TaylorExpansion:
    """Expansion of ``sin(theta * x_prev)`` in theta about ``center``, through order M."""
    if M < 1:
        raise ValueError("order must be at least 1")
    phase = center * x_prev
    cycle = (math.sin(phase), math.cos(phase), -math.sin(phase), -math.cos(phase))
    coefs = [cycle[k % 4] * x_prev**k / math.factorial(k) for k in range(M + 1)]
    if center == 0.0:
        coefs[0] = 0.0
    return TaylorExpansion((float(center),), M, Poly.univariate(coefs))


def taylor_log1p_sq(M: int) -> Poly:
    """``log(1 + v**2)`` expanded in v through order M (M even)."""
    if M < 2 or M % 2:
        raise ValueError("order must be even and at least 2")
    coefs = [0.0] * (M + 1)
    for k in range(1, M // 2 + 1):
        coefs[2 * k] = (1.0 if k % 2 else -1.0) / k
    return Poly.univariate(coefs)


@lru_cache(maxsize=None)
def logistic_derivative_polys(K: int) -> tuple[tuple[Fraction, ...], ...]:
    """Coefficients of P_0..P_K with sigma^(k)(u) = P_k(sigma(u)).

    Follows from sigma' = sigma (1 - sigma): P_{k+1}(s) = P_k'(s) (s - s**2).
    """
    poly = [Fraction(0), Fraction(1)]  # P_0(s) = s
    out = []
    for _ in range(K + 1):
        out.append(tuple(poly))
        deriv = [i * c for i, c in enumerate(poly)][1:]
        nxt = [Fraction(0)] * (len(deriv) + 2)
        for i, c in enumerate(deriv):
            nxt[i + 1] += c
            nxt[i + 2] -= c
        poly = nxt
    return tuple(out)


@lru_cache(maxsize=None)
def logistic_series(M: int) -> tuple[Fraction, ...]:
    """Exact Maclaurin coefficients of ``1 / (1 + exp(-u))`` through order M."""
    half = Fraction(1, 2)
    return tuple(
        sum(c * half**i for i, c in enumerate(P)) / math.factorial(k)
        for k, P in enumerate(logistic_derivative_polys(M))
    )


def logistic_taylor_coefficients(w0, M: int) -> np.ndarray:
    """sigma^(k)(w0) / k! for k = 0..M along a trailing axis; ``w0`` may be an array."""
    s = 0.5 * (1.0 + np.tanh(0.5 * np.asarray(w0, dtype=float)))
    out = []
    for k, P in enumerate(logistic_derivative_polys(M)):
        val = np.zeros_like(s)
        for c in reversed(P):
            val = val * s + float(c)
        out.append(val / math.factorial(k))
    return np.stack(out, axis=-1)


def taylor_logistic(x_prev: float, M: int, center: Sequence[float] = (0.0, 0.0)) -> TaylorExpansion:
    """Expansion of the STAR gate ``1 / (1 + exp(-gamma (x_prev - c)))`` in (gamma, c).

    The gate is sigma(w) with w = gamma (x_prev - c).  The series is taken in
    w about w0 = gamma0 (x_prev - c0), truncated at order M, and each power
    of w - w0 is expanded exactly.  The result is a polynomial in
    (gamma - gamma0, c - c0).  With gamma0 = 0 this is the series in
    u = gamma (c - x_prev) about u = 0, and c0 plays no role.
    """
    if M < 0:
        raise ValueError("order must be nonnegative")
    g0, c0 = (float(v) for v in center)
    dg, dc = Poly.variable(0, 2), Poly.variable(1, 2)
    # w - w0 in the shifted variables
    step = dg.scale(x_prev - c0) - dc.scale(g0) - dg * dc
    if g0 == 0.0:
        coefs = [float(v) for v in logistic_series(M)]
    else:
        coefs = logistic_taylor_coefficients(g0 * (x_prev - c0), M)
    out = Poly({}, 2)
    power = Poly.constant(1.0, 2)
    for k in range(M + 1):
        if coefs[k]:
            out = out + power.scale(float(coefs[k]))
        power = power * step
    return TaylorExpansion((g0, c0), M, out)


def remainder_bound(U: float, a: float, M: int) -> float:
    """Lagrange remainder bound ``U a**(M+1) / (M+1)!``, evaluated in log space."""
    if U < 0 or a <= 0:
        raise ValueError("need U >= 0 and a > 0")
    if U == 0:
        return 0.0
    return math.exp(math.log(U) + (M + 1) * math.log(a) - math.lgamma(M + 2))


def monomial_powers(points: np.ndarray, exps: np.ndarray) -> np.ndarray:
    """Evaluate the monomials ``exps`` (K, n) at ``points`` (..., n) -> (..., K)."""
    points = np.asarray(points, dtype=float)
    exps = np.asarray(exps, dtype=int)
    out = np.ones(points.shape[:-1] + (exps.shape[0],))
    for j in range(exps.shape[1]):
        top = int(exps[:, j].max(initial=0))
        if top == 0:
            continue
        pw = np.ones(points.shape[:-1] + (top + 1,))
        for k in range(1, top + 1):
            pw[..., k] = pw[..., k - 1] * points[..., j]
        out *= pw[..., exps[:, j]]
    return out


def terms_array(poly: Poly, exps: Iterable[Exponent]) -> np.ndarray:
    """Coefficients of ``poly`` listed in the order of ``exps``."""
    return np.array([poly.coefficient(e) for e in exps])
