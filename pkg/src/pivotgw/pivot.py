"""Pivot-tree criticality and the interpretable/rogue verdict.

A vertex of the random state tree is pivotal when recolouring it (and
recomputing its ancestors) can move the root's colour into a target set. The
pivotal vertices form a multitype branching tree whose types pair the vertex
colour with the set of switch destinations that reach the target; this module
builds that tree's mean matrix by exact enumeration, extracts its spectral
radius by power iteration, and turns the comparison with 1 into a verdict on
whether the fixed point admits an interpretation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .automata import Automaton, evaluate, is_monotone
from .distmap import (StateDistribution, _colour_table, _composition_table,
                      _switch_table, psi, psi_scalar_derivative)
from .errors import (InvalidInputError, ShrinkRequiredError, UnsupportedError)
from .offspring import ChildDistribution

__all__ = [
    "TargetSets",
    "AugmentedType",
    "PivotAnalysis",
    "Verdict",
    "child_b_set",
    "mean_matrix",
    "spectral_radius",
    "generation_mean",
    "verdict",
    "analyze",
    "shrink_support",
    "growth_rate_identity_check",
    "GrowthRateCheck",
]

GENERATION_MEANS_MAX = 10


@dataclass(frozen=True)
class TargetSets:
    """Per-colour destination sets for the root's colour change."""

    sets: tuple  # tuple of frozensets, indexed by colour

    def __post_init__(self):
        k = len(self.sets)
        for colour, dest in enumerate(self.sets):
            if not dest:
                raise InvalidInputError(f"target set for colour {colour} is empty")
            if colour in dest:
                raise InvalidInputError(
                    f"target set for colour {colour} contains the colour itself")
            if not all(0 <= g < k for g in dest):
                raise InvalidInputError(f"target set {set(dest)} out of range")

    @staticmethod
    def maximal(k: int) -> "TargetSets":
        return TargetSets(tuple(
            frozenset(g for g in range(k) if g != c) for c in range(k)))

    @property
    def k(self) -> int:
        return len(self.sets)

    def is_maximal(self) -> bool:
        return all(len(s) == self.k - 1 for s in self.sets)


@dataclass(frozen=True)
class AugmentedType:
    """Colour of a vertex plus the switch destinations that reach the target.

    A vertex is pivotal exactly when ``b_set`` is nonempty; only pivotal types
    index the mean matrix.
    """

    colour: int
    b_set: frozenset


@dataclass(frozen=True)
class Verdict:
    status: str        # interpretable | rogue | interpretable_if_bounded | unknown
    criterion: str     # which classification rule produced the status
    notes: tuple = ()


@dataclass(frozen=True)
class PivotAnalysis:
    """Mean matrix of the pivotal subtree and everything derived from it.

    ``support`` lists the original colour indices that carry mass; when the
    fixed point misses some colours the analysis runs on the restricted
    automaton and the types below are reported in original colour indices.
    ``generation_means`` holds the expected number of pivotal vertices per
    level, root included at index 0.
    """

    nu: StateDistribution
    target: TargetSets
    types: tuple               # pivotal AugmentedTypes, matrix row/column order
    mean_matrix: np.ndarray
    root_weights: np.ndarray   # weight of each type as the root's type
    spectral_radius: float
    criticality: str           # subcritical | critical | supercritical
    band: float                # half-width of the critical classification band
    generation_means: tuple
    deficit: float
    support: tuple
    maximal_target: bool


def _mask(b_set) -> int:
    m = 0
    for g in b_set:
        m |= 1 << g
    return m


def _unmask(mask: int, k: int) -> frozenset:
    return frozenset(g for g in range(k) if mask >> g & 1)


def child_b_set(spec: Automaton, counts, child_colour: int, parent_b) -> frozenset:
    """Switch destinations of one child that move the root into the target.

    ``parent_b`` is the parent's own destination set. Switching the child to g
    changes the parent's colour to some s; the root then moves into the target
    exactly when s lies in ``parent_b``. The parent's current colour never
    lies in its own destination set, so switches that leave the parent
    unchanged are excluded automatically.
    """
    counts = tuple(int(c) for c in counts)
    if not 0 <= child_colour < spec.k:
        raise InvalidInputError(f"child colour {child_colour} out of range")
    if counts[child_colour] < 1:
        raise InvalidInputError(
            f"no child of colour {child_colour} in counts {counts}")
    parent_b = frozenset(parent_b)
    out = []
    for g in range(spec.k):
        if g == child_colour:
            continue
        edited = list(counts)
        edited[child_colour] -= 1
        edited[g] += 1
        if evaluate(spec, edited) in parent_b:
            out.append(g)
    return frozenset(out)


# ---------------------------------------------------------------------------
# Restricting to the support of the fixed point

@dataclass(frozen=True)
class SubAutomaton:
    """The automaton viewed on a subset of colours.

    Count vectors over the kept colours embed as zero elsewhere. If the base
    automaton maps such a vector outside the kept set, the sentinel index
    ``k`` is returned; for a genuine fixed point that can only happen on
    zero-probability configurations.
    """

    base: Automaton
    kept: tuple

    @property
    def k(self) -> int:
        return len(self.kept)

    @property
    def colours(self) -> tuple:
        return tuple(self.base.colours[i] for i in self.kept)

    def _embed(self, counts: np.ndarray) -> np.ndarray:
        full = np.zeros((len(counts), self.base.k), dtype=counts.dtype)
        for sub, orig in enumerate(self.kept):
            full[:, orig] = counts[:, sub]
        return full

    def evaluate(self, counts) -> int:
        arr = np.asarray([list(counts)], dtype=np.int64)
        return int(self.evaluate_array(arr)[0])

    def evaluate_array(self, counts: np.ndarray) -> np.ndarray:
        counts = np.asarray(counts)
        base_col = self.base.evaluate_array(self._embed(counts))
        lut = np.full(self.base.k, self.k, dtype=np.uint8)
        for sub, orig in enumerate(self.kept):
            lut[orig] = sub
        return lut[base_col]

    def inspects_only(self, colour: int) -> bool:
        return False


def shrink_support(spec: Automaton, nu: StateDistribution,
                   threshold: float = 1e-9):
    """Drop zero-weight colours; returns (spec', nu', kept original indices)."""
    kept = tuple(i for i, w in enumerate(nu.weights) if w > threshold)
    if len(kept) == len(nu.weights):
        return spec, nu, kept
    if not kept:
        raise InvalidInputError("distribution has no colour above the threshold")
    w = np.array([nu.weights[i] for i in kept], dtype=float)
    w = w / w.sum()
    sub = SubAutomaton(spec, kept)
    if len(kept) == 1:
        return sub, None, kept
    return sub, StateDistribution(tuple(w)), kept


# ---------------------------------------------------------------------------
# Mean matrix over augmented types

def mean_matrix(spec: Automaton, chi: ChildDistribution, nu: StateDistribution,
                target: TargetSets | None = None, eps: float = 1e-12,
                residual_factor: float = 10.0,
                n_generations: int = GENERATION_MEANS_MAX) -> PivotAnalysis:
    """Exact mean matrix of the pivotal subtree at a full-support fixed point.

    For each reachable pivotal type (colour, destinations): enumerate child
    count vectors up to the truncation point, weight each by its conditional
    probability given the parent's colour, derive every child's destination
    set from the parent's, and accumulate expected counts of each pivotal
    child type. Reachability starts from the root types (colour, target set).
    """
    if nu.k != spec.k:
        raise InvalidInputError(f"distribution has {nu.k} colours, automaton {spec.k}")
    if spec.k > 8:
        raise UnsupportedError("augmented-type closure implemented for k <= 8")
    x = nu.as_array()
    if np.any(x <= 0):
        raise ShrinkRequiredError(
            "fixed point has zero-weight colours; restrict the colour set first "
            "(see shrink_support)")
    if target is None:
        target = TargetSets.maximal(spec.k)
    if target.k != spec.k:
        raise InvalidInputError("target sets sized for a different colour count")

    res = psi(spec, chi, nu, eps)
    residual = float(np.max(np.abs(res.weights - x)))
    if residual > residual_factor * eps:
        raise InvalidInputError(
            f"nu is not a fixed point at this tolerance: residual {residual:.3e} "
            f"> {residual_factor * eps:.3e}")

    k = spec.k
    n_max = chi.truncation_point(eps)
    counts, totals, logmult = _composition_table(k, n_max)
    colour = _colour_table(spec, n_max)
    switched = _switch_table(spec, n_max)
    pmf = chi.pmf_upto(n_max)
    logx = np.log(x)
    w_all = np.exp(logmult + counts @ logx) * pmf[totals]

    root_types = [(c, _mask(target.sets[c])) for c in range(k)]
    order: list = []
    index: dict = {}
    for t in root_types:
        index[t] = len(order)
        order.append(t)

    rows: dict = {}
    head = 0
    while head < len(order):
        sigma, bmask = order[head]
        head += 1
        sel = colour == sigma
        wsel = w_all[sel] / x[sigma]
        csel = counts[sel]
        ssel = switched[sel]
        row: dict = {}
        for c in range(k):
            have = csel[:, c] >= 1
            if not have.any():
                continue
            child_mask = np.zeros(int(have.sum()), dtype=np.int64)
            for g in range(k):
                if g == c:
                    continue
                hits = (bmask >> ssel[have, c, g]) & 1
                child_mask |= hits.astype(np.int64) << g
            contrib = np.bincount(child_mask,
                                  weights=wsel[have] * csel[have, c],
                                  minlength=1 << k)
            for bb in np.nonzero(contrib)[0]:
                if bb == 0:
                    continue  # non-pivotal children are not in the subtree
                t = (c, int(bb))
                if t not in index:
                    index[t] = len(order)
                    order.append(t)
                row[t] = row.get(t, 0.0) + float(contrib[bb])
        rows[(sigma, bmask)] = row

    n_types = len(order)
    matrix = np.zeros((n_types, n_types))
    for t, row in rows.items():
        for tt, val in row.items():
            matrix[index[t], index[tt]] = val

    root_weights = np.zeros(n_types)
    for c in range(k):
        root_weights[index[(c, _mask(target.sets[c]))]] += x[c]

    deficit = max(0.0, 1.0 - float(pmf.sum()))
    rho = spectral_radius(matrix)
    band = _criticality_band(deficit)
    crit = _classify(rho, band)
    gen = _generation_means(matrix, root_weights, n_generations)
    types = tuple(AugmentedType(c, _unmask(m, k)) for c, m in order)
    return PivotAnalysis(
        nu=nu, target=target, types=types, mean_matrix=matrix,
        root_weights=root_weights, spectral_radius=rho, criticality=crit,
        band=band, generation_means=gen, deficit=deficit,
        support=tuple(range(k)), maximal_target=target.is_maximal(),
    )


def _criticality_band(deficit: float) -> float:
    return 1e-9 if deficit < 1e-10 else 100.0 * deficit


def _classify(rho: float, band: float) -> str:
    if rho < 1.0 - band:
        return "subcritical"
    if rho > 1.0 + band:
        return "supercritical"
    return "critical"


def _generation_means(matrix: np.ndarray, root_weights: np.ndarray, n_max: int):
    out = [float(root_weights.sum())]
    v = np.ones(len(matrix))
    for _ in range(n_max):
        v = matrix @ v
        out.append(float(root_weights @ v))
    return tuple(out)


def generation_mean(analysis: PivotAnalysis, n: int) -> float:
    """Expected number of pivotal vertices at level n (root is level 0)."""
    if n < 0:
        raise InvalidInputError(f"generation index must be >= 0, got {n}")
    if n < len(analysis.generation_means):
        return analysis.generation_means[n]
    v = np.ones(len(analysis.mean_matrix))
    for _ in range(n):
        v = analysis.mean_matrix @ v
    return float(analysis.root_weights @ v)


# ---------------------------------------------------------------------------
# Spectral radius by power iteration

def spectral_radius(matrix: np.ndarray, rel_tol: float = 1e-13,
                    max_iter: int = 200_000, restarts: int = 4) -> float:
    """Largest-modulus eigenvalue of a nonnegative square matrix.

    Power iteration on M + I (the shift removes periodicity; nonnegativity
    makes the dominant eigenvalue real, so the shift adds exactly one).
    Restarts from the all-ones vector and from seeded random positive vectors
    guard against unlucky starting directions; the largest converged estimate
    wins.
    """
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InvalidInputError(f"matrix must be square, got shape {m.shape}")
    if m.size and m.min() < 0:
        raise InvalidInputError("matrix must be entrywise nonnegative")
    if not np.all(np.isfinite(m)):
        raise InvalidInputError("matrix entries must be finite")
    n = m.shape[0]
    if n == 0:
        return 0.0
    if n == 1:
        return float(m[0, 0])

    shifted = m + np.eye(n)
    rng = np.random.default_rng(20240601)
    best = 0.0
    for r in range(restarts):
        v = np.ones(n) if r == 0 else rng.random(n) + 0.1
        v /= np.linalg.norm(v)
        est = 0.0
        for _ in range(max_iter):
            w = shifted @ v
            norm = np.linalg.norm(w)
            if norm == 0.0:
                est = 1.0  # nilpotent: only the shift remains
                break
            new = float(v @ w)  # Rayleigh quotient with the unit vector v
            v = w / norm
            if abs(new - est) <= rel_tol * max(1.0, abs(new)):
                est = new
                break
            est = new
        best = max(best, est - 1.0)
    return max(best, 0.0)


# ---------------------------------------------------------------------------
# Verdict

_TWO_STATE_RULE = "two-state pivot criterion"
_SUBCRITICAL_RULE = "subcritical pivot tree (sufficient condition)"
_BOUNDED_RULE = "critical pivot tree with bounded generation means"
_SUPER_UNKNOWN = "supercritical pivot tree, k >= 3: existence undecided"
_DEGENERATE_RULE = "single-colour fixed point: constant interpretation"


def verdict(spec: Automaton, chi: ChildDistribution, nu: StateDistribution,
            analysis: PivotAnalysis) -> Verdict:
    """Classify the fixed point as interpretable or rogue.

    Two effective colours: interpretable iff the pivotal subtree is
    subcritical or critical. Three or more: subcritical suffices for
    interpretability; the critical band is resolved by checking the generation
    means stay bounded by one; supercritical stays unknown because
    nonexistence is not established there.
    """
    if not analysis.maximal_target:
        raise InvalidInputError("verdict is defined for maximal target sets only")
    notes = []
    if not chi.has_finite_log_moment():
        notes.append("offspring law lacks a finite logarithmic moment; "
                     "the two-state criterion is stated under that hypothesis")
    k_eff = len(analysis.support)
    rho, band = analysis.spectral_radius, analysis.band
    if k_eff <= 2:
        if rho <= 1.0 + band:
            return Verdict("interpretable",
                           f"{_TWO_STATE_RULE}: rho <= 1", tuple(notes))
        return Verdict("rogue", f"{_TWO_STATE_RULE}: rho > 1", tuple(notes))
    if rho < 1.0 - band:
        return Verdict("interpretable", f"{_SUBCRITICAL_RULE}: rho < 1",
                       tuple(notes))
    if rho <= 1.0 + band:
        means = analysis.generation_means
        bounded = all(gm <= 1.0 + 1e-9 for gm in means[1:])
        notes.append(
            f"generation means up to n={len(means) - 1} "
            f"{'stay' if bounded else 'do not stay'} bounded by 1")
        if bounded:
            return Verdict("interpretable_if_bounded",
                           f"{_BOUNDED_RULE} (checked numerically)",
                           tuple(notes))
        return Verdict("unknown", "critical pivot tree, k >= 3: "
                       "generation means exceed 1 within the horizon",
                       tuple(notes))
    return Verdict("unknown", _SUPER_UNKNOWN, tuple(notes))


def analyze(spec: Automaton, chi: ChildDistribution, nu: StateDistribution,
            eps: float = 1e-12, support_threshold: float = 1e-9,
            residual_factor: float = 10.0):
    """Full pipeline: restrict to the support, build the matrix, classify.

    Returns (PivotAnalysis, Verdict). Types in the analysis are reported in
    the original colour indices even when the computation ran on a restricted
    colour set.
    """
    sub, sub_nu, kept = shrink_support(spec, nu, support_threshold)
    if len(kept) == 1:
        # Point mass: the constant colouring is compatible, the root is the
        # only pivotal vertex, and nothing below it can move the root.
        analysis = PivotAnalysis(
            nu=nu, target=TargetSets.maximal(spec.k), types=(),
            mean_matrix=np.zeros((0, 0)), root_weights=np.zeros(0),
            spectral_radius=0.0, criticality="subcritical",
            band=_criticality_band(0.0),
            generation_means=(1.0,) + (0.0,) * GENERATION_MEANS_MAX,
            deficit=0.0, support=kept, maximal_target=True,
        )
        return analysis, Verdict("interpretable", _DEGENERATE_RULE)
    analysis = mean_matrix(sub, chi, sub_nu, eps=eps,
                           residual_factor=residual_factor)
    if len(kept) != spec.k:
        # map types back to original colour indices
        types = tuple(
            AugmentedType(kept[t.colour], frozenset(kept[g] for g in t.b_set))
            for t in analysis.types)
        target = TargetSets.maximal(spec.k)
        analysis = PivotAnalysis(
            nu=nu, target=target, types=types,
            mean_matrix=analysis.mean_matrix,
            root_weights=analysis.root_weights,
            spectral_radius=analysis.spectral_radius,
            criticality=analysis.criticality, band=analysis.band,
            generation_means=analysis.generation_means,
            deficit=analysis.deficit, support=kept,
            maximal_target=True,
        )
    return analysis, verdict(spec, chi, nu, analysis)


# ---------------------------------------------------------------------------
# Growth-rate identity for monotone automata

@dataclass(frozen=True)
class GrowthRateCheck:
    passed: bool
    spectral_radius: float
    derivative: float
    rel_diff: float


def growth_rate_identity_check(spec: Automaton, chi: ChildDistribution,
                               nu: StateDistribution, tol_rel: float = 1e-5,
                               eps: float = 1e-12,
                               monotone_bound: int = 200) -> GrowthRateCheck:
    """Spectral radius of the pivotal subtree vs the scalar map's derivative.

    For monotone two-colour automata the two agree at interior fixed points;
    both sides are computed independently here. Non-monotone automata are
    rejected: the identity does not hold for them.
    """
    if spec.k != 2:
        raise UnsupportedError("growth-rate identity defined for two colours")
    report = is_monotone(spec, monotone_bound)
    if not report.monotone:
        raise UnsupportedError(
            f"automaton is not monotone (counterexample {report.counterexample}); "
            "the growth-rate identity is not claimed for it")
    p = nu.weights[1]
    analysis, _ = analyze(spec, chi, nu, eps=eps)
    rho = analysis.spectral_radius
    deriv = psi_scalar_derivative(spec, chi, p, eps=eps)
    diff = abs(rho - deriv) / max(1.0, abs(rho), abs(deriv))
    return GrowthRateCheck(diff <= tol_rel, rho, deriv, diff)
