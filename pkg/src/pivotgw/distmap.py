"""The automaton distribution map and its derivatives.

Given a colour distribution x, draw a child count from chi, colour the
children i.i.d. x, and apply the automaton: the root colour's distribution is
the image of x. Everything here evaluates that map exactly up to an explicit
truncation deficit, which is reported rather than renormalized away, because
classification near criticality needs honest error bars.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .automata import Automaton
from .errors import InvalidInputError, ResourceLimitError, UnsupportedError
from .offspring import ChildDistribution, Poisson

__all__ = [
    "StateDistribution",
    "PsiResult",
    "psi",
    "psi_poisson_thinned",
    "psi_scalar",
    "psi_scalar_curve",
    "psi_scalar_derivative",
    "at_least_two_curve",
    "at_least_one_curve",
    "zero_ones_curve",
    "one_of_each_curve",
]

_SIMPLEX_TOL = 1e-12
_MAX_ENUM = 5_000_000


@dataclass(frozen=True)
class StateDistribution:
    """Probability vector over the colour set."""

    weights: tuple

    def __post_init__(self):
        w = self.weights
        if len(w) < 2:
            raise InvalidInputError("need at least two colours")
        if any(x < 0 for x in w):
            raise InvalidInputError(f"negative weight in {w}")
        if abs(sum(w) - 1.0) > _SIMPLEX_TOL:
            raise InvalidInputError(f"weights sum to {sum(w)}, not 1")

    @staticmethod
    def bernoulli(x: float) -> "StateDistribution":
        """Two-colour distribution with weight x on colour 1."""
        if not 0 <= x <= 1:
            raise InvalidInputError(f"probability {x} outside [0, 1]")
        return StateDistribution((1.0 - x, x))

    @staticmethod
    def point_mass(k: int, colour: int) -> "StateDistribution":
        w = [0.0] * k
        w[colour] = 1.0
        return StateDistribution(tuple(w))

    @property
    def k(self) -> int:
        return len(self.weights)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float)


@dataclass(frozen=True)
class PsiResult:
    """Image of a colour distribution, plus the truncation mass not captured.

    ``weights`` sums to 1 - deficit by construction; it is not renormalized.
    """

    weights: np.ndarray
    deficit: float

    def component(self, colour: int) -> float:
        return float(self.weights[colour])


# ---------------------------------------------------------------------------
# Composition tables: all count vectors with total <= N, shared across calls.

@lru_cache(maxsize=64)
def _composition_table(k: int, n_max: int):
    """Count vectors over k colours with total <= n_max, plus log-multinomials."""
    counts = np.arange(n_max + 1, dtype=np.int64)[:, None]
    for _ in range(k - 1):
        remaining = n_max - counts.sum(axis=1)
        reps = remaining + 1
        if reps.sum() > _MAX_ENUM:
            raise ResourceLimitError(
                f"composition enumeration too large ({reps.sum()} vectors); "
                "use a larger truncation tolerance"
            )
        base = np.repeat(counts, reps, axis=0)
        # ragged arange: 0..remaining[i] for each row i
        offsets = np.repeat(np.cumsum(reps) - reps, reps)
        new_col = np.arange(reps.sum()) - offsets
        counts = np.column_stack([base, new_col])
    totals = counts.sum(axis=1)
    logfact = np.concatenate(([0.0], np.cumsum(np.log(np.arange(1, n_max + 1)))))
    log_multinomial = logfact[totals] - logfact[counts].sum(axis=1)
    return counts, totals, log_multinomial


@lru_cache(maxsize=256)
def _colour_table(spec: Automaton, n_max: int) -> np.ndarray:
    counts, _, _ = _composition_table(spec.k, n_max)
    return spec.evaluate_array(counts)


@lru_cache(maxsize=256)
def _switch_table(spec: Automaton, n_max: int) -> np.ndarray:
    """S[i, c, g] = colour after one c-child of vector i is recoloured g.

    Entries with counts[i, c] == 0 or c == g are filled with the unswitched
    colour; callers mask them out.
    """
    counts, _, _ = _composition_table(spec.k, n_max)
    k = spec.k
    base = _colour_table(spec, n_max)
    out = np.repeat(base[:, None, None], k, axis=1).repeat(k, axis=2)
    for c in range(k):
        have = counts[:, c] >= 1
        for g in range(k):
            if g == c:
                continue
            edited = counts[have].copy()
            edited[:, c] -= 1
            edited[:, g] += 1
            out[have, c, g] = spec.evaluate_array(edited)
    return out


def clear_caches():
    """Drop memoized enumeration tables (mostly for tests)."""
    _composition_table.cache_clear()
    _colour_table.cache_clear()
    _switch_table.cache_clear()


# ---------------------------------------------------------------------------
# The map itself

def _composition_weights(counts, totals, log_multinomial, pmf, x: np.ndarray):
    """chi(m) * multinomial * prod x_i^n_i for every composition row."""
    logx = np.where(x > 0, np.log(np.where(x > 0, x, 1.0)), 0.0)
    logw = log_multinomial + counts @ logx
    w = np.exp(logw) * pmf[totals]
    dead = x <= 0
    if dead.any():
        w[(counts[:, dead] > 0).any(axis=1)] = 0.0
    return w


def psi(spec: Automaton, chi: ChildDistribution, x: StateDistribution,
        eps: float = 1e-12) -> PsiResult:
    """Exact image of x under the distribution map, within eps per component.

    The sum runs over colour-count vectors (not per-child colour sequences)
    weighted by multinomial coefficients, which keeps k = 3 tractable at
    Poisson-sized truncation points.
    """
    if x.k != spec.k:
        raise InvalidInputError(f"distribution has {x.k} colours, automaton {spec.k}")
    if not eps > 0:
        raise InvalidInputError(f"eps must be > 0, got {eps}")
    n_max = chi.truncation_point(eps)
    counts, totals, logmult = _composition_table(spec.k, n_max)
    pmf = chi.pmf_upto(n_max)
    w = _composition_weights(counts, totals, logmult, pmf, x.as_array())
    colour = _colour_table(spec, n_max)
    weights = np.bincount(colour, weights=w, minlength=spec.k)
    deficit = max(0.0, 1.0 - float(pmf.sum()))
    return PsiResult(weights, deficit)


def psi_poisson_thinned(spec: Automaton, lam: float, x: StateDistribution,
                        eps: float = 1e-12) -> PsiResult:
    """Same map for Poisson offspring, via independent per-colour counts.

    Thinning a Poisson(lam) brood by colour probabilities yields independent
    Poisson(lam * x_i) counts, so the sum factorizes into a product of k
    univariate truncated series. Used as the fast path and as an independent
    cross-check of :func:`psi`.
    """
    if x.k != spec.k:
        raise InvalidInputError(f"distribution has {x.k} colours, automaton {spec.k}")
    if not eps > 0:
        raise InvalidInputError(f"eps must be > 0, got {eps}")
    if not lam > 0:
        raise InvalidInputError(f"Poisson rate must be > 0, got {lam}")
    k = spec.k
    rates = lam * x.as_array()
    tops, tables = [], []
    for r in rates:
        if r <= 0:
            tops.append(0)
            tables.append(np.array([1.0]))
        else:
            n = Poisson(r).truncation_point(eps / k) if r > 0 else 0
            tops.append(n)
            tables.append(Poisson(r).pmf_upto(n))
    size = 1
    for n in tops:
        size *= n + 1
    if size > _MAX_ENUM:
        raise ResourceLimitError(
            f"thinned enumeration too large ({size} cells); use a larger eps"
        )
    grids = np.meshgrid(*[np.arange(n + 1) for n in tops], indexing="ij")
    counts = np.stack([g.ravel() for g in grids], axis=1)
    w = np.ones(len(counts))
    for i in range(k):
        w *= tables[i][counts[:, i]]
    colour = spec.evaluate_array(counts)
    weights = np.bincount(colour, weights=w, minlength=k)
    deficit = max(0.0, 1.0 - float(w.sum()))
    return PsiResult(weights, deficit)


def psi_scalar(spec: Automaton, chi: ChildDistribution, x: float,
               eps: float = 1e-12) -> float:
    """Weight of colour 1 in the image of Bernoulli(x); two colours only."""
    if spec.k != 2:
        raise UnsupportedError("scalar map defined for two colours only")
    return psi(spec, chi, StateDistribution.bernoulli(x), eps).component(1)


# ---------------------------------------------------------------------------
# Vectorized scalar map over grids (the solver and sweep backbone)

@lru_cache(maxsize=256)
def _scalar_tables(spec: Automaton, chi: ChildDistribution, eps: float):
    n_max = chi.truncation_point(eps)
    counts, totals, logmult = _composition_table(2, n_max)
    colour = _colour_table(spec, n_max)
    pmf = chi.pmf_upto(n_max)
    ones = colour == 1
    mm = totals[ones]
    jj = counts[ones, 1]
    # fold chi(m) into the log coefficient; drop zero-probability totals
    keep = pmf[mm] > 0
    mm, jj = mm[keep], jj[keep]
    logcoef = logmult[ones][keep] + np.log(pmf[mm])
    # 1 iff a vector with j one-children maps to 1 regardless of zero-children;
    # only valid when the rules never inspect colour-0 counts
    ones_only = None
    if isinstance(chi, Poisson) and spec.inspects_only(1):
        ones_only = np.zeros(n_max + 1, dtype=bool)
        for j in range(n_max + 1):
            ones_only[j] = spec.evaluate((0, j)) == 1
    deficit = max(0.0, 1.0 - float(pmf.sum()))
    # endpoint values are exact: a point mass colours every child the same way
    at0 = counts[:, 1] == 0
    at1 = counts[:, 0] == 0
    endpoint0 = float((pmf[totals[at0]] * (colour[at0] == 1)).sum())
    endpoint1 = float((pmf[totals[at1]] * (colour[at1] == 1)).sum())
    return mm, jj, logcoef, ones_only, deficit, endpoint0, endpoint1


def psi_scalar_curve(spec: Automaton, chi: ChildDistribution, xs: np.ndarray,
                     eps: float = 1e-12):
    """Colour-1 weight of the image of Bernoulli(x) for an array of x values.

    Returns (values, deficit). Matches :func:`psi_scalar` to floating-point
    accuracy; exists because grid scans and sweeps evaluate the map tens of
    thousands of times.
    """
    if spec.k != 2:
        raise UnsupportedError("scalar map defined for two colours only")
    xs = np.asarray(xs, dtype=float)
    if xs.size and (xs.min() < 0 or xs.max() > 1):
        raise InvalidInputError("grid values must lie in [0, 1]")
    mm, jj, logcoef, ones_only, deficit, end0, end1 = _scalar_tables(spec, chi, eps)
    out = np.empty(xs.shape)
    flat = xs.ravel()
    res = out.ravel()
    interior = (flat > 0) & (flat < 1)
    res[flat == 0.0] = end0
    res[flat == 1.0] = end1
    xi = flat[interior]
    if xi.size:
        if ones_only is not None:
            res[interior] = _poisson_ones_only_curve(chi.lam, xi, ones_only)
        else:
            res[interior] = _pair_curve(xi, mm, jj, logcoef)
    return out, deficit


def _poisson_ones_only_curve(lam, xi, ones_only):
    # P[Poisson(lam*x) falls in the accepting set], via the pmf recurrence
    rate = lam * xi
    term = np.exp(-rate)
    acc = term.copy() if ones_only[0] else np.zeros_like(xi)
    for j in range(1, len(ones_only)):
        term = term * rate / j
        if ones_only[j]:
            acc += term
    return acc


def _pair_curve(xi, mm, jj, logcoef, chunk=8192):
    out = np.empty_like(xi)
    mj = (mm - jj).astype(float)
    jjf = jj.astype(float)
    for lo in range(0, len(xi), chunk):
        xc = xi[lo:lo + chunk]
        lx = np.log(xc)[:, None]
        l1x = np.log1p(-xc)[:, None]
        out[lo:lo + chunk] = np.exp(logcoef[None, :] + jjf[None, :] * lx
                                    + mj[None, :] * l1x).sum(axis=1)
    return out


def psi_scalar_derivative(spec: Automaton, chi: ChildDistribution, p: float,
                          h: float = 1e-6, eps: float = 1e-12) -> float:
    """Finite-difference derivative of the scalar map at p.

    Central difference in the interior; a second-order one-sided stencil at
    the endpoints, where the step is clipped to stay inside [0, 1].
    """
    if spec.k != 2:
        raise UnsupportedError("scalar derivative defined for two colours only")
    if not 0 <= p <= 1:
        raise InvalidInputError(f"p must lie in [0, 1], got {p}")
    if not 0 < h < 0.5:
        raise InvalidInputError(f"step h must be in (0, 0.5), got {h}")

    def f(x):
        return psi_scalar(spec, chi, x, eps)

    if p - h >= 0 and p + h <= 1:
        return (f(p + h) - f(p - h)) / (2 * h)
    if p - h < 0:
        h = min(h, (1 - p) / 2)
        return (-3 * f(p) + 4 * f(p + h) - f(p + 2 * h)) / (2 * h)
    h = min(h, p / 2)
    return (3 * f(p) - 4 * f(p - h) + f(p - 2 * h)) / (2 * h)


# ---------------------------------------------------------------------------
# Closed forms for the standard two-state examples with Poisson offspring.
# These exist purely as independent cross-check references for tests.

def at_least_two_curve(lam: float, x):
    return 1.0 - np.exp(-lam * np.asarray(x, dtype=float)) * (1.0 + lam * np.asarray(x, dtype=float))


def at_least_one_curve(lam: float, x):
    return 1.0 - np.exp(-lam * np.asarray(x, dtype=float))


def zero_ones_curve(lam: float, x):
    return np.exp(-lam * np.asarray(x, dtype=float))


def one_of_each_curve(lam: float, x):
    x = np.asarray(x, dtype=float)
    return 1.0 - np.exp(-lam * (1.0 - x)) - np.exp(-lam * x) + math.exp(-lam)
