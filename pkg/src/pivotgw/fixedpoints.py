"""Fixed points of the automaton distribution map.

Two colours: the map restricted to Bernoulli weights is a smooth function of
one variable on [0, 1], so a dense grid scan plus bisection finds every
crossing, with a separate detector for tangential (double) roots. Three or
more colours: multistart damped iteration plus a Newton polish on the simplex
chart; completeness is never claimed there.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .automata import Automaton
from .distmap import StateDistribution, psi, psi_scalar_curve
from .errors import BracketError, InternalError, InvalidInputError, UnsupportedError
from .offspring import ChildDistribution

__all__ = [
    "FixedPointRecord",
    "KStateResult",
    "find_fixed_points_2state",
    "find_fixed_points_kstate",
    "critical_lambda",
]

SUPPORT_THRESHOLD = 1e-9


@dataclass(frozen=True)
class FixedPointRecord:
    nu: StateDistribution
    residual: float
    multiplicity_hint: str  # "simple" or "tangential"
    support_full: bool

    def scalar(self) -> float:
        """Weight of colour 1; two-colour records only."""
        if self.nu.k != 2:
            raise UnsupportedError("scalar view defined for two colours only")
        return self.nu.weights[1]


@dataclass(frozen=True)
class KStateResult:
    records: tuple
    complete: bool  # always False: the multistart search proves nothing


def _verify_residual(spec, chi, nu: StateDistribution, tol: float) -> float:
    res = psi(spec, chi, nu, eps=tol / 10)
    return float(np.max(np.abs(res.weights - nu.as_array())))


def _record(spec, chi, x: float, tol: float, hint: str,
            support_threshold: float) -> FixedPointRecord | None:
    nu = StateDistribution.bernoulli(min(max(x, 0.0), 1.0))
    residual = _verify_residual(spec, chi, nu, tol)
    if residual > tol:
        return None
    full = all(w > support_threshold for w in nu.weights)
    return FixedPointRecord(nu, residual, hint, full)


def find_fixed_points_2state(spec: Automaton, chi: ChildDistribution,
                             grid_size: int = 10_000, tol: float = 1e-10,
                             eps: float | None = None,
                             tangency_threshold: float = 1e-7,
                             support_threshold: float = SUPPORT_THRESHOLD):
    """All fixed points on [0, 1] for a two-colour automaton, sorted ascending.

    Sign changes of g(x) = image(x) - x on a uniform grid are refined by
    bisection to machine width; grid points where |g| dips below the tangency
    threshold without changing sign are treated as candidate double roots and
    refined by golden-section on |g|. The endpoints are tested explicitly
    (point masses evaluate exactly up to the truncation deficit).
    """
    if spec.k != 2:
        raise UnsupportedError("two-state solver requires exactly two colours")
    if grid_size < 100:
        raise InvalidInputError(f"grid_size must be >= 100, got {grid_size}")
    if not tol > 0:
        raise InvalidInputError(f"tol must be > 0, got {tol}")
    if eps is None:
        eps = min(1e-12, tol / 10)

    xs = np.linspace(0.0, 1.0, grid_size + 1)
    vals, _ = psi_scalar_curve(spec, chi, xs, eps)
    g = vals - xs

    def g_at(x: float) -> float:
        v, _ = psi_scalar_curve(spec, chi, np.array([x]), eps)
        return float(v[0] - x)

    roots: list[tuple[float, str]] = []

    # endpoints are exact up to the deficit
    if abs(g[0]) <= tol:
        roots.append((0.0, "simple"))
    if abs(g[-1]) <= tol:
        roots.append((1.0, "simple"))

    # interior grid hits and strict sign changes
    for i in np.nonzero(g[1:-1] == 0.0)[0] + 1:
        roots.append((float(xs[i]), "simple"))
    for i in np.nonzero(g[:-1] * g[1:] < 0.0)[0]:
        lo, hi = float(xs[i]), float(xs[i + 1])
        glo = float(g[i])
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            gm = g_at(mid)
            if gm == 0.0:
                lo = hi = mid
                break
            if (gm < 0) == (glo < 0):
                lo, glo = mid, gm
            else:
                hi = mid
            if hi - lo <= 1e-16 * max(1.0, abs(lo)):
                break
        roots.append((0.5 * (lo + hi), "simple"))

    # tangential candidates: local minima of |g| under the threshold
    ag = np.abs(g)
    interior = np.arange(1, len(xs) - 1)
    is_min = (ag[interior] <= ag[interior - 1]) & (ag[interior] <= ag[interior + 1])
    small = ag[interior] < tangency_threshold
    no_cross = (np.sign(g[interior - 1]) == np.sign(g[interior])) & (
        np.sign(g[interior + 1]) == np.sign(g[interior]))
    for i in interior[is_min & small & no_cross]:
        x0 = float(xs[i])
        if any(abs(x0 - r) <= max(10 * tol, 2.0 / grid_size) for r, _ in roots):
            continue
        xm = _golden_min(lambda x: abs(g_at(x)), float(xs[i - 1]), float(xs[i + 1]))
        if abs(g_at(xm)) <= tol:
            roots.append((xm, "tangential"))

    # dedup at 10*tol and sort
    roots.sort()
    out: list[FixedPointRecord] = []
    last = None
    for x, hint in roots:
        if last is not None and abs(x - last) <= 10 * tol:
            continue
        rec = _record(spec, chi, x, tol, hint, support_threshold)
        if rec is not None:
            out.append(rec)
            last = x
    if not out:
        raise InternalError(
            "no fixed point found on [0, 1]; the map is continuous on a compact "
            "interval so at least one must exist"
        )
    return out


def _golden_min(f, a: float, b: float, iters: int = 80) -> float:
    invphi = (math.sqrt(5) - 1) / 2
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
        if b - a <= 1e-15:
            break
    return 0.5 * (a + b)


# ---------------------------------------------------------------------------
# k-state search

def _halton(index: int, base: int) -> float:
    f, r = 1.0, 0.0
    while index > 0:
        f /= base
        r += f * (index % base)
        index //= base
    return r


_PRIMES = (2, 3, 5, 7, 11, 13, 17)


def _simplex_starts(k: int, n: int):
    """Vertices, barycenter, and low-discrepancy interior points."""
    pts = [np.eye(k)[i] for i in range(k)]
    pts.append(np.full(k, 1.0 / k))
    i = 1
    while len(pts) < n + k + 1:
        u = np.array([_halton(i, _PRIMES[j]) for j in range(k)])
        e = -np.log(np.clip(u, 1e-12, 1.0))
        pts.append(e / e.sum())
        i += 1
    return pts


def _psi_vec(spec, chi, x: np.ndarray, eps: float) -> np.ndarray:
    x = np.clip(x, 0.0, None)
    x = x / x.sum()
    return psi(spec, chi, StateDistribution(tuple(x)), eps).weights


def find_fixed_points_kstate(spec: Automaton, chi: ChildDistribution,
                             starts: int = 24, damping: float = 0.5,
                             tol: float = 1e-10, max_iter: int = 400,
                             eps: float | None = None,
                             support_threshold: float = SUPPORT_THRESHOLD) -> KStateResult:
    """Best-effort fixed-point search on the k-simplex.

    Damped iteration from each start finds the attracting points; a Newton
    polish on the (k-1)-dimensional chart recovers repelling ones near any
    start. The result is always flagged incomplete: nothing guarantees every
    fixed point has a start in its basin.
    """
    if starts < 1:
        raise InvalidInputError(f"starts must be >= 1, got {starts}")
    if not 0 < damping <= 1:
        raise InvalidInputError(f"damping must be in (0, 1], got {damping}")
    if not tol > 0:
        raise InvalidInputError(f"tol must be > 0, got {tol}")
    if eps is None:
        eps = min(1e-12, tol / 10)
    k = spec.k

    candidates: list[np.ndarray] = []
    seeds = _simplex_starts(k, starts)
    for x0 in seeds:
        x = x0.copy()
        for _ in range(max_iter):
            nxt = _psi_vec(spec, chi, x, eps)
            nxt = nxt / nxt.sum()
            step = float(np.max(np.abs(nxt - x)))
            x = (1 - damping) * x + damping * nxt
            if step < tol / 10:
                break
        candidates.append(x)

    polished: list[np.ndarray] = []
    for x0 in seeds + candidates:
        x = _newton_polish(spec, chi, x0, eps, tol)
        if x is not None:
            polished.append(x)

    accepted = []
    for x in candidates + polished:
        if np.any(x < 0):
            continue
        nu = StateDistribution(tuple(x / x.sum()))
        res = psi(spec, chi, nu, eps)
        residual = float(np.max(np.abs(res.weights - nu.as_array())))
        if residual <= tol:
            accepted.append((nu, residual))

    # dedup at 10*tol in max norm, keeping the smallest residual
    accepted.sort(key=lambda t: tuple(t[0].weights))
    records = []
    for nu, residual in accepted:
        dup = None
        for i, r in enumerate(records):
            if max(abs(a - b) for a, b in zip(nu.weights, r.nu.weights)) <= 10 * tol:
                dup = i
                break
        rec = FixedPointRecord(
            nu, residual, "simple",
            all(w > support_threshold for w in nu.weights),
        )
        if dup is None:
            records.append(rec)
        elif residual < records[dup].residual:
            records[dup] = rec
    return KStateResult(tuple(records), complete=False)


def _newton_polish(spec, chi, x0: np.ndarray, eps: float, tol: float,
                   max_iter: int = 40):
    """Newton iteration for psi(x) = x on the chart y = x[:-1]."""
    k = len(x0)
    y = np.asarray(x0[:-1], dtype=float)

    def full(yv):
        return np.concatenate([yv, [1.0 - yv.sum()]])

    def fval(yv):
        x = full(yv)
        if np.any(x < -1e-9) or np.any(x > 1 + 1e-9):
            return None
        x = np.clip(x, 0.0, None)
        s = x.sum()
        if s <= 0:
            return None
        return _psi_vec(spec, chi, x, eps)[: k - 1] - yv

    f = fval(y)
    if f is None:
        return None
    h = 1e-7
    for _ in range(max_iter):
        if float(np.max(np.abs(f))) < 1e-14:
            break
        jac = np.empty((k - 1, k - 1))
        for j in range(k - 1):
            yp = y.copy()
            yp[j] += h
            fp = fval(yp)
            if fp is None:
                return None
            jac[:, j] = (fp - f) / h
        try:
            step = np.linalg.solve(jac, -f)
        except np.linalg.LinAlgError:
            return None
        if not np.all(np.isfinite(step)) or np.max(np.abs(step)) > 1.0:
            return None
        y = y + step
        f = fval(y)
        if f is None:
            return None
    x = np.clip(full(y), 0.0, None)
    s = x.sum()
    if s <= 0:
        return None
    x = x / s
    return x


# ---------------------------------------------------------------------------
# Critical parameter search

def critical_lambda(spec: Automaton, family, lambda_lo: float, lambda_hi: float,
                    tol: float = 1e-3, root_floor: float = 1e-4,
                    grid_size: int = 10_000, root_tol: float = 1e-10) -> float:
    """Smallest rate at which a nontrivial fixed point appears, by bisection.

    ``family`` maps a rate to a child distribution (e.g. Poisson). The caller
    asserts that the predicate "some root exceeds root_floor" is monotone on
    the bracket; the bracket endpoints must disagree.
    """
    if spec.k != 2:
        raise UnsupportedError("critical-rate search requires two colours")
    if not lambda_lo < lambda_hi:
        raise InvalidInputError("need lambda_lo < lambda_hi")
    if not tol > 0:
        raise InvalidInputError(f"tol must be > 0, got {tol}")

    def predicate(lam: float) -> bool:
        recs = find_fixed_points_2state(spec, family(lam), grid_size=grid_size,
                                        tol=root_tol)
        return any(r.scalar() > root_floor for r in recs)

    plo, phi = predicate(lambda_lo), predicate(lambda_hi)
    if plo == phi:
        raise BracketError(
            f"predicate is {plo} at both bracket endpoints "
            f"[{lambda_lo}, {lambda_hi}]"
        )
    lo, hi = lambda_lo, lambda_hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if predicate(mid) == plo:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
