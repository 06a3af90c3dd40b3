"""Offspring (child-count) distributions with exact pmf access.

Every family here has a finite logarithmic moment, and construction rejects
distributions that put zero mass on {2, 3, ...} (those never produce a true
branching tree). Geometric is parameterized on the nonnegative integers as
P[m] = (1-p)^m * p.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import InvalidInputError

__all__ = [
    "ChildDistribution",
    "Poisson",
    "Binomial",
    "Geometric",
    "FiniteSupport",
    "from_config",
    "to_config",
]

_MASS_TOL = 1e-12


class ChildDistribution:
    """Interface shared by the concrete families."""

    def pmf(self, m: int) -> float:
        if m < 0:
            raise InvalidInputError(f"pmf argument must be >= 0, got {m}")
        return float(self.pmf_upto(m)[m])

    def pmf_upto(self, n: int) -> np.ndarray:
        """Exact pmf values for m = 0..n inclusive."""
        raise NotImplementedError

    def truncation_point(self, eps: float) -> int:
        """Smallest N whose tail mass beyond N is at most eps.

        Finite-support families always report their maximal support point,
        regardless of eps.
        """
        if not 0 < eps < 1:
            raise InvalidInputError(f"eps must be in (0, 1), got {eps}")
        return self._truncation_point(float(eps))

    def has_finite_log_moment(self) -> bool:
        # All built-in families have exponential or bounded tails.
        return True

    def mean(self) -> float:
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        raise NotImplementedError

    def _truncation_point(self, eps: float) -> int:
        raise NotImplementedError

    def _check_branching_mass(self):
        # standing assumption: positive probability of >= 2 children
        probe = self.pmf_upto(self._mass_probe_limit())
        if probe[2:].sum() <= 0.0:
            raise InvalidInputError(
                "child distribution must put positive probability on {2, 3, ...}"
            )

    def _mass_probe_limit(self) -> int:
        return 64


@dataclass(frozen=True)
class Poisson(ChildDistribution):
    lam: float

    def __post_init__(self):
        if not self.lam > 0:
            raise InvalidInputError(f"Poisson rate must be > 0, got {self.lam}")
        self._check_branching_mass()

    def pmf_upto(self, n: int) -> np.ndarray:
        # log-space recurrence: lp(m) = lp(m-1) + log(lam) - log(m)
        m = np.arange(n + 1, dtype=float)
        lp = np.empty(n + 1)
        lp[0] = -self.lam
        if n:
            lp[1:] = -self.lam + np.cumsum(math.log(self.lam) - np.log(m[1:]))
        return np.exp(lp)

    def mean(self) -> float:
        return self.lam

    def sample(self, rng, size):
        return rng.poisson(self.lam, size=size)

    def _truncation_point(self, eps: float) -> int:
        return _scan_truncation(self, eps, start=int(self.lam) + 1)

    def _mass_probe_limit(self) -> int:
        return max(64, int(4 * self.lam))


@dataclass(frozen=True)
class Binomial(ChildDistribution):
    n: int
    p: float

    def __post_init__(self):
        if self.n < 0 or not 0 <= self.p <= 1:
            raise InvalidInputError(f"bad Binomial parameters n={self.n}, p={self.p}")
        self._check_branching_mass()

    def pmf_upto(self, n: int) -> np.ndarray:
        out = np.zeros(n + 1)
        top = min(n, self.n)
        m = np.arange(top + 1, dtype=float)
        with np.errstate(divide="ignore"):
            logc = (
                math.lgamma(self.n + 1)
                - np.array([math.lgamma(i + 1) + math.lgamma(self.n - i + 1) for i in range(top + 1)])
            )
            lp = logc + m * _safe_log(self.p) + (self.n - m) * _safe_log(1 - self.p)
        out[: top + 1] = np.exp(lp)
        # exact endpoints when p hits 0 or 1
        if self.p == 0:
            out[:] = 0.0
            out[0] = 1.0
        elif self.p == 1:
            out[:] = 0.0
            if self.n <= n:
                out[self.n] = 1.0
        return out

    def mean(self) -> float:
        return self.n * self.p

    def sample(self, rng, size):
        return rng.binomial(self.n, self.p, size=size)

    def _truncation_point(self, eps: float) -> int:
        return self.n

    def _mass_probe_limit(self) -> int:
        return max(2, self.n)


@dataclass(frozen=True)
class Geometric(ChildDistribution):
    """P[m] = (1-p)^m * p for m = 0, 1, 2, ..."""

    p: float

    def __post_init__(self):
        if not 0 < self.p < 1:
            raise InvalidInputError(f"Geometric p must be in (0, 1), got {self.p}")
        self._check_branching_mass()

    def pmf_upto(self, n: int) -> np.ndarray:
        m = np.arange(n + 1, dtype=float)
        return np.exp(m * math.log1p(-self.p)) * self.p

    def mean(self) -> float:
        return (1 - self.p) / self.p

    def sample(self, rng, size):
        # numpy's geometric counts trials on {1, 2, ...}
        return rng.geometric(self.p, size=size) - 1

    def _truncation_point(self, eps: float) -> int:
        # tail beyond N is (1-p)^(N+1)
        n = int(math.ceil(math.log(eps) / math.log1p(-self.p))) - 1
        n = max(n, 0)
        while math.exp((n + 1) * math.log1p(-self.p)) > eps:
            n += 1
        return n


@dataclass(frozen=True)
class FiniteSupport(ChildDistribution):
    table: tuple  # ((m, prob), ...) sorted by m

    def __post_init__(self):
        if not self.table:
            raise InvalidInputError("empty pmf table")
        seen = set()
        total = 0.0
        for m, prob in self.table:
            if m < 0 or m in seen:
                raise InvalidInputError(f"bad support point {m}")
            if prob < 0 or prob > 1:
                raise InvalidInputError(f"pmf value {prob} outside [0, 1]")
            seen.add(m)
            total += prob
        if abs(total - 1.0) > _MASS_TOL:
            raise InvalidInputError(f"pmf table sums to {total}, not 1")
        object.__setattr__(self, "table", tuple(sorted(self.table)))
        self._check_branching_mass()

    @staticmethod
    def from_dict(pmf: dict) -> "FiniteSupport":
        return FiniteSupport(tuple((int(m), float(p)) for m, p in pmf.items()))

    def pmf_upto(self, n: int) -> np.ndarray:
        out = np.zeros(n + 1)
        for m, prob in self.table:
            if m <= n:
                out[m] = prob
        return out

    def mean(self) -> float:
        return sum(m * prob for m, prob in self.table)

    def sample(self, rng, size):
        support = np.array([m for m, _ in self.table])
        probs = np.array([p for _, p in self.table])
        return support[rng.choice(len(support), size=size, p=probs / probs.sum())]

    def _truncation_point(self, eps: float) -> int:
        return self.table[-1][0]

    def _mass_probe_limit(self) -> int:
        return self.table[-1][0]


def _safe_log(x: float) -> float:
    return math.log(x) if x > 0 else -math.inf


@lru_cache(maxsize=None)
def _scan_cache(dist: ChildDistribution, eps: float, start: int) -> int:
    target = 1.0 - eps
    n = max(start, 8)
    while True:
        pmf = dist.pmf_upto(n)
        cum = np.cumsum(pmf)
        hit = np.nonzero(cum >= target)[0]
        if hit.size:
            return int(hit[0])
        n *= 2
        if n > 10**7:
            raise InvalidInputError("truncation scan failed to converge")


def _scan_truncation(dist: ChildDistribution, eps: float, start: int) -> int:
    return _scan_cache(dist, eps, start)


# ---------------------------------------------------------------------------
# Config format

def from_config(doc: dict) -> ChildDistribution:
    try:
        family = doc["family"].lower()
    except (KeyError, TypeError, AttributeError) as exc:
        raise InvalidInputError(f"distribution config needs a 'family': {doc!r}") from exc
    try:
        if family == "poisson":
            return Poisson(float(doc["lambda"]))
        if family == "binomial":
            return Binomial(int(doc["n"]), float(doc["p"]))
        if family == "geometric":
            return Geometric(float(doc["p"]))
        if family == "finite":
            return FiniteSupport.from_dict(doc["pmf"])
    except KeyError as exc:
        raise InvalidInputError(f"distribution config missing field {exc}") from exc
    raise InvalidInputError(f"unknown distribution family {family!r}")


def to_config(dist: ChildDistribution) -> dict:
    if isinstance(dist, Poisson):
        return {"family": "poisson", "lambda": dist.lam}
    if isinstance(dist, Binomial):
        return {"family": "binomial", "n": dist.n, "p": dist.p}
    if isinstance(dist, Geometric):
        return {"family": "geometric", "p": dist.p}
    if isinstance(dist, FiniteSupport):
        return {"family": "finite", "pmf": {str(m): p for m, p in dist.table}}
    raise InvalidInputError(f"not a known distribution: {dist!r}")
