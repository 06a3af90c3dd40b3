"""Monte Carlo engine and exhaustive small-tree oracle.

Sampling follows the level-by-level construction of the random state tree:
generate the branching tree to the requested depth, colour the deepest level
i.i.d. from the fixed point, propagate colours upward through the automaton,
then push switch-destination sets down from the root. Each sample owns a
counter-based random stream keyed by (seed, sample index), so results are
bit-identical regardless of batching.

The oracle side enumerates every colouring of an explicit finite tree's
deepest level and computes root distributions and pivotality probabilities
exactly, which is what the exact pipeline is validated against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .automata import Automaton
from .distmap import StateDistribution
from .errors import InvalidInputError, ResourceLimitError
from .offspring import ChildDistribution
from .pivot import TargetSets

__all__ = [
    "TreeShape",
    "ColouredTreeSample",
    "StatRow",
    "SimulationSummary",
    "sample_rst",
    "estimate",
    "oracle_exact",
    "OracleResult",
    "mark_b_sets",
    "replay_switch",
    "root_distribution_recursive",
    "type_key",
    "random_shape",
]

DEFAULT_NODE_BUDGET = 10_000_000


def type_key(colour: int, b_set) -> str:
    """Canonical string for an augmented type, e.g. ``1|{0,2}``."""
    inner = ",".join(str(g) for g in sorted(b_set))
    return f"{colour}|{{{inner}}}"


# ---------------------------------------------------------------------------
# Explicit tree shapes

@dataclass(frozen=True)
class TreeShape:
    """Rooted tree as a parent-pointer array; vertex 0 is the root."""

    parents: tuple

    def __post_init__(self):
        if not self.parents or self.parents[0] != -1:
            raise InvalidInputError("vertex 0 must be the root (parent -1)")
        for v, p in enumerate(self.parents):
            if v > 0 and not 0 <= p < v:
                raise InvalidInputError(
                    "parents must precede children in the vertex order")

    @staticmethod
    def from_nested(nested) -> "TreeShape":
        """Build from nested lists, e.g. [[], [[]]] is a root with two
        children, the second of which has one child."""
        parents = [-1]

        def walk(node, parent_index):
            for sub in node:
                parents.append(parent_index)
                walk(sub, len(parents) - 1)

        walk(nested, 0)
        return TreeShape(tuple(parents))

    @property
    def n_vertices(self) -> int:
        return len(self.parents)

    def children(self):
        out = [[] for _ in self.parents]
        for v, p in enumerate(self.parents):
            if p >= 0:
                out[p].append(v)
        return out

    def depths(self) -> np.ndarray:
        d = np.zeros(self.n_vertices, dtype=np.int64)
        for v, p in enumerate(self.parents):
            if p >= 0:
                d[v] = d[p] + 1
        return d

    @property
    def depth(self) -> int:
        return int(self.depths().max())

    def boundary(self) -> np.ndarray:
        """Vertices at the deepest level; these carry free colours.

        A single-vertex tree has no boundary: its root is a true leaf and
        takes the automaton's leaf colour.
        """
        d = self.depths()
        if d.max() == 0:
            return np.zeros(0, dtype=np.int64)
        return np.nonzero(d == d.max())[0]


def random_shape(rng: np.random.Generator, max_leaves: int, k: int,
                 max_depth: int = 4) -> TreeShape:
    """Random shape whose deepest level has at most max_leaves vertices."""
    while True:
        parents = [-1]
        frontier = [0]
        depth = int(rng.integers(1, max_depth + 1))
        for _ in range(depth):
            nxt = []
            for v in frontier:
                for _ in range(int(rng.integers(0, 4))):
                    parents.append(v)
                    nxt.append(len(parents) - 1)
            if not nxt:
                break
            frontier = nxt
        shape = TreeShape(tuple(parents))
        if shape.n_vertices > 1 and len(shape.boundary()) <= max_leaves:
            return shape


# ---------------------------------------------------------------------------
# Colour propagation and switch-set marking on explicit shapes

def _colour_counts(spec, shape: TreeShape, colours: np.ndarray, v: int,
                   children) -> np.ndarray:
    """Per-colour child counts of v; colours has shape (V, B)."""
    k = spec.k
    ch = children[v]
    out = np.zeros((colours.shape[1], k), dtype=np.int64)
    for u in ch:
        cu = colours[u]
        for c in range(k):
            out[:, c] += cu == c
    return out


def propagate_colours(spec: Automaton, shape: TreeShape,
                      boundary_colours: np.ndarray) -> np.ndarray:
    """Colour every vertex given the deepest level's colours.

    ``boundary_colours`` has one row per boundary vertex (order of
    ``shape.boundary()``) and one column per scenario; childless vertices
    above the deepest level take the automaton's leaf colour.
    """
    boundary_colours = np.asarray(boundary_colours, dtype=np.int64)
    if boundary_colours.ndim == 1:
        boundary_colours = boundary_colours[:, None]
    bd = shape.boundary()
    if boundary_colours.shape[0] != len(bd):
        raise InvalidInputError(
            f"expected {len(bd)} boundary rows, got {boundary_colours.shape[0]}")
    n_scen = boundary_colours.shape[1] if boundary_colours.size else 1
    colours = np.full((shape.n_vertices, n_scen), -1, dtype=np.int64)
    colours[bd] = boundary_colours
    children = shape.children()
    depths = shape.depths()
    for v in sorted(range(shape.n_vertices), key=lambda u: -depths[u]):
        if colours[v, 0] >= 0:
            continue
        counts = _colour_counts(spec, shape, colours, v, children)
        colours[v] = spec.evaluate_array(counts)
    return colours


def mark_b_sets(spec: Automaton, shape: TreeShape, colours: np.ndarray,
                target: TargetSets | None = None):
    """Top-down switch-destination masks for fully coloured trees.

    ``colours`` has shape (V,) or (V, B). Returns (masks, pivotal) of the same
    shape; bit g of a mask means switching that vertex to colour g moves the
    root's colour into the target set.
    """
    single = colours.ndim == 1
    colours = np.atleast_2d(np.asarray(colours, dtype=np.int64).T).T
    if target is None:
        target = TargetSets.maximal(spec.k)
    k = spec.k
    target_mask = np.zeros(k, dtype=np.int64)
    for c in range(k):
        for g in target.sets[c]:
            target_mask[c] |= 1 << g
    masks = np.zeros_like(colours)
    masks[0] = target_mask[colours[0]]
    children = shape.children()
    order = sorted(range(shape.n_vertices), key=lambda u: shape.depths()[u])
    for v in order:
        ch = children[v]
        if not ch:
            continue
        counts = _colour_counts(spec, shape, colours, v, children)
        pmask = masks[v]
        for u in ch:
            cu = colours[u]
            m = np.zeros_like(pmask)
            for g in range(k):
                edited = counts.copy()
                np.add.at(edited, (np.arange(len(cu)), cu), -1)
                edited[:, g] += 1
                switched = spec.evaluate_array(edited)
                hit = ((pmask >> switched) & 1) & (cu != g)
                m |= hit << g
            masks[u] = m
    pivotal = masks != 0
    if single:
        return masks[:, 0], pivotal[:, 0]
    return masks, pivotal


def replay_switch(spec: Automaton, shape: TreeShape, colours: np.ndarray,
                  vertex: int, new_colour: int) -> np.ndarray:
    """Root colour after recolouring one vertex and its ancestors.

    The switch-and-replay primitive: only the path to the root is recomputed.
    ``colours`` has shape (V,) or (V, B); returns the new root colour(s).
    """
    single = colours.ndim == 1
    colours = np.atleast_2d(np.asarray(colours, dtype=np.int64).T).T
    children = shape.children()
    current = np.full(colours.shape[1], new_colour, dtype=np.int64)
    v = vertex
    while shape.parents[v] != -1:
        p = shape.parents[v]
        counts = _colour_counts(spec, shape, colours, p, children)
        old = colours[v]
        np.add.at(counts, (np.arange(len(old)), old), -1)
        np.add.at(counts, (np.arange(len(current)), current), 1)
        current = spec.evaluate_array(counts).astype(np.int64)
        v = p
    if single:
        return current[0]
    return current


def check_compatible(spec: Automaton, shape: TreeShape,
                     colours: np.ndarray) -> bool:
    """Every vertex above the deepest level matches the automaton."""
    colours = np.atleast_2d(np.asarray(colours, dtype=np.int64).T).T
    children = shape.children()
    depths = shape.depths()
    top = depths.max()
    for v in range(shape.n_vertices):
        if depths[v] == top:
            continue
        counts = _colour_counts(spec, shape, colours, v, children)
        if not np.array_equal(spec.evaluate_array(counts), colours[v]):
            return False
    return True


# ---------------------------------------------------------------------------
# Exhaustive oracle

@dataclass(frozen=True)
class OracleResult:
    root_distribution: np.ndarray
    pivot_probability: np.ndarray   # per vertex
    level_means: np.ndarray         # expected pivotal count per level


def _leaf_cap(k: int) -> int:
    if k == 2:
        return 16
    if k == 3:
        return 10
    return max(1, int(math.log(60_000) / math.log(k)))


def oracle_exact(spec: Automaton, shape: TreeShape,
                 nu: StateDistribution) -> OracleResult:
    """Exact root distribution and pivotality probabilities by enumeration.

    Every colouring of the deepest level is enumerated, weighted by the
    product of its colour probabilities, and propagated. Pivotality is
    decided per colouring by literal switch-and-replay: a vertex is pivotal
    when some recolouring of it changes the root's colour.
    """
    k = spec.k
    if nu.k != k:
        raise InvalidInputError("distribution and automaton disagree on k")
    bd = shape.boundary()
    cap = _leaf_cap(k)
    if len(bd) > cap:
        raise ResourceLimitError(
            f"{len(bd)} boundary vertices exceeds the enumeration cap {cap} "
            f"for {k} colours")
    n_scen = k ** len(bd)
    grid = np.stack(np.unravel_index(np.arange(n_scen), (k,) * len(bd)))
    colours = propagate_colours(spec, shape, grid)
    w = np.ones(n_scen)
    nu_arr = nu.as_array()
    for row in grid:
        w *= nu_arr[row]
    root_dist = np.bincount(colours[0], weights=w, minlength=k)

    piv = np.zeros((shape.n_vertices, n_scen), dtype=bool)
    root_old = colours[0]
    for v in range(shape.n_vertices):
        if v == 0:
            piv[0] = True  # maximal target: the root can always be recoloured
            continue
        for g in range(k):
            todo = colours[v] != g
            if not todo.any():
                continue
            new_root = replay_switch(spec, shape, colours, v, g)
            piv[v] |= todo & (new_root != root_old)
    pivot_probability = piv @ w
    depths = shape.depths()
    level_means = np.zeros(depths.max() + 1)
    for v in range(shape.n_vertices):
        level_means[depths[v]] += pivot_probability[v]
    return OracleResult(root_dist, pivot_probability, level_means)


def root_distribution_recursive(spec: Automaton, shape: TreeShape,
                                nu: StateDistribution) -> np.ndarray:
    """Root colour distribution by bottom-up convolution over the shape.

    Independent of the enumeration route: each vertex's colour distribution
    is computed from its children's via the count-vector convolution, which
    is the shape-conditional version of the distribution map.
    """
    k = spec.k
    children = shape.children()
    depths = shape.depths()
    top = depths.max()
    dists: dict[int, np.ndarray] = {}
    nu_arr = nu.as_array()
    for v in sorted(range(shape.n_vertices), key=lambda u: -depths[u]):
        if depths[v] == top:
            dists[v] = nu_arr.copy()
            continue
        table = {(0,) * k: 1.0}
        for u in children[v]:
            new: dict = {}
            du = dists[u]
            for counts, prob in table.items():
                for c in range(k):
                    if du[c] == 0:
                        continue
                    key = list(counts)
                    key[c] += 1
                    key = tuple(key)
                    new[key] = new.get(key, 0.0) + prob * du[c]
            table = new
        out = np.zeros(k)
        for counts, prob in table.items():
            out[spec.evaluate(counts)] += prob
        dists[v] = out
    return dists[0]


# ---------------------------------------------------------------------------
# Sampling

@dataclass(frozen=True)
class ColouredTreeSample:
    """One sampled random state tree, truncated at ``depth``.

    ``parents`` uses -1 for the root; ``b_masks`` encodes switch-destination
    sets as bitmasks (bit g set = switching to colour g moves the root into
    its target set); ``pivotal`` is exactly ``b_masks != 0``.
    """

    spec: Automaton = field(repr=False)
    parents: np.ndarray
    level_of: np.ndarray
    colours: np.ndarray
    b_masks: np.ndarray
    pivotal: np.ndarray
    depth: int
    seed: int

    @property
    def n_vertices(self) -> int:
        return len(self.parents)

    def b_set(self, v: int) -> frozenset:
        return frozenset(g for g in range(self.spec.k)
                         if self.b_masks[v] >> g & 1)

    def children(self):
        out = [[] for _ in range(self.n_vertices)]
        for v, p in enumerate(self.parents):
            if p >= 0:
                out[p].append(v)
        return out

    def to_newick(self) -> str:
        """Parenthesized dump with colour|b-set|pivotal annotations."""
        children = self.children()

        def fmt(v):
            tag = (f"{self.colours[v]}|"
                   f"{{{','.join(str(g) for g in sorted(self.b_set(v)))}}}|"
                   f"{'P' if self.pivotal[v] else '-'}")
            if not children[v]:
                return tag
            return "(" + ",".join(fmt(u) for u in children[v]) + ")" + tag
        return fmt(0) + ";"


def _tree_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[seed & (2**64 - 1),
                                                     index & (2**64 - 1)]))


def _draw_tree(chi: ChildDistribution, nu_cum: np.ndarray, depth: int,
               rng: np.random.Generator, node_budget: int):
    """Child counts per level plus boundary colours for one sample."""
    level_counts = []
    size = 1
    total = 1
    for _ in range(depth):
        counts = np.asarray(chi.sample(rng, size), dtype=np.int64)
        level_counts.append(counts)
        size = int(counts.sum())
        total += size
        if total > node_budget:
            raise ResourceLimitError(
                f"tree exceeded the node budget ({node_budget})")
    boundary = np.searchsorted(nu_cum, rng.random(size), side="right")
    return level_counts, boundary.astype(np.int64)


def _target_masks(spec: Automaton) -> np.ndarray:
    k = spec.k
    out = np.empty(k, dtype=np.int64)
    for c in range(k):
        out[c] = ((1 << k) - 1) ^ (1 << c)
    return out


def _propagate_chunk(spec, level_parents, level_counts_mat, boundary_colours,
                     depth):
    """Colours upward, then switch masks downward, for a whole chunk."""
    k = spec.k
    colours = [None] * (depth + 1)
    colours[depth] = boundary_colours
    for d in range(depth - 1, -1, -1):
        n_par = len(level_counts_mat[d])
        # one fused bincount gives the per-colour child counts of every parent
        combo = np.bincount(level_parents[d + 1] * k + colours[d + 1],
                            minlength=n_par * k)
        counts = combo.reshape(n_par, k)
        level_counts_mat[d] = counts
        colours[d] = spec.evaluate_array(counts).astype(np.int64, copy=False)

    tmask = _target_masks(spec)
    masks = [None] * (depth + 1)
    masks[0] = tmask[colours[0]]
    deltas = {}
    for c in range(k):
        for g in range(k):
            if g != c:
                row = np.zeros(k, dtype=np.int64)
                row[c] -= 1
                row[g] += 1
                deltas[c, g] = row
    for d in range(depth):
        counts = level_counts_mat[d]
        pmask = masks[d]
        bits = np.zeros((k, len(counts)), dtype=np.int64)
        for (c, g), row in deltas.items():
            switched = spec.evaluate_array(counts + row)
            bits[c] |= ((pmask >> switched) & 1) << g
        masks[d + 1] = bits[colours[d + 1], level_parents[d + 1]]
    return colours, masks


def sample_rst(spec: Automaton, chi: ChildDistribution, nu: StateDistribution,
               depth: int, seed: int,
               node_budget: int = DEFAULT_NODE_BUDGET,
               stream: int = 0) -> ColouredTreeSample:
    """Sample one random state tree truncated at ``depth``.

    Level-n vertices get i.i.d. colours from ``nu``; colours propagate upward
    through the automaton; switch-destination sets propagate downward from
    the maximal target set at the root. Deterministic given (seed, stream).
    """
    if depth < 0:
        raise InvalidInputError(f"depth must be >= 0, got {depth}")
    if nu.k != spec.k:
        raise InvalidInputError("distribution and automaton disagree on k")
    expected = sum(chi.mean() ** d for d in range(depth + 1))
    if expected > node_budget:
        raise ResourceLimitError(
            f"expected tree size {expected:.3g} exceeds the node budget")
    rng = _tree_rng(seed, stream)
    nu_cum = np.cumsum(nu.as_array())
    level_counts, boundary = _draw_tree(chi, nu_cum, depth, rng, node_budget)

    level_parents = [np.full(1, -1, dtype=np.int64)]
    for d in range(depth):
        counts = level_counts[d]
        level_parents.append(np.repeat(np.arange(len(counts)), counts))
    counts_mat = [np.zeros((len(level_counts[d]), spec.k), dtype=np.int64)
                  for d in range(depth)] + [None]
    colours, masks = _propagate_chunk(
        spec, level_parents, counts_mat, boundary, depth)

    sizes = [len(c) for c in colours]
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    parents = np.empty(offsets[-1], dtype=np.int64)
    level_of = np.empty(offsets[-1], dtype=np.int64)
    parents[0] = -1
    level_of[0] = 0
    for d in range(1, depth + 1):
        lo, hi = offsets[d], offsets[d + 1]
        parents[lo:hi] = level_parents[d] + offsets[d - 1]
        level_of[lo:hi] = d
    colours_flat = np.concatenate(colours) if colours else np.zeros(0)
    masks_flat = np.concatenate(masks)
    return ColouredTreeSample(
        spec=spec, parents=parents, level_of=level_of,
        colours=colours_flat.astype(np.int64), b_masks=masks_flat,
        pivotal=masks_flat != 0, depth=depth, seed=seed,
    )


# ---------------------------------------------------------------------------
# Aggregated estimation

@dataclass(frozen=True)
class StatRow:
    name: str
    mean: float
    se: float
    count: int


@dataclass(frozen=True)
class SimulationSummary:
    samples: int
    completed: int
    partial: bool
    depth: int
    seed: int
    rows: tuple

    def row(self, name: str) -> StatRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def names(self):
        return [r.name for r in self.rows]


class _Acc:
    __slots__ = ("s", "s2", "n")

    def __init__(self):
        self.s = 0.0
        self.s2 = 0.0
        self.n = 0

    def add_array(self, x: np.ndarray):
        self.s += float(x.sum())
        self.s2 += float((x.astype(float) ** 2).sum())
        self.n += int(x.size)

    def row(self, name: str) -> StatRow:
        if self.n == 0:
            return StatRow(name, math.nan, math.nan, 0)
        mean = self.s / self.n
        if self.n < 2:
            return StatRow(name, mean, math.nan, self.n)
        var = max(0.0, (self.s2 - self.n * mean * mean) / (self.n - 1))
        return StatRow(name, mean, math.sqrt(var / self.n), self.n)


def estimate(spec: Automaton, chi: ChildDistribution, nu: StateDistribution,
             depth: int, samples: int, seed: int,
             node_budget: int = DEFAULT_NODE_BUDGET,
             chunk_size: int = 512) -> SimulationSummary:
    """Monte Carlo estimates of everything the exact pipeline computes.

    Statistics: root-colour frequencies; per pivotal parent type, the mean
    count of pivotal children of each type (the mean-matrix entries); expected
    pivotal count per level; and the frequency of the pivotal subtree reaching
    each level (a proxy for survival, labeled as such). Standard errors are
    sample standard deviations over the respective observations divided by
    the square root of their count.
    """
    if samples < 1:
        raise InvalidInputError(f"samples must be >= 1, got {samples}")
    if depth < 0:
        raise InvalidInputError(f"depth must be >= 0, got {depth}")
    k = spec.k
    nu_cum = np.cumsum(nu.as_array())

    root_acc = [_Acc() for _ in range(k)]
    level_acc = [_Acc() for _ in range(depth + 1)]
    surv_acc = [_Acc() for _ in range(depth + 1)]
    mm_acc: dict = {}
    parent_count: dict = {}

    completed = 0
    partial = False
    for chunk_lo in range(0, samples, chunk_size):
        chunk_hi = min(samples, chunk_lo + chunk_size)
        try:
            per_tree = [
                _draw_tree(chi, nu_cum, depth, _tree_rng(seed, i), node_budget)
                for i in range(chunk_lo, chunk_hi)
            ]
        except ResourceLimitError:
            partial = True
            break
        n_tree = len(per_tree)

        # trees are concatenated per level; vertices keep tree order, so the
        # global repeat of counts already yields global parent indices
        level_parents = [np.full(n_tree, -1, dtype=np.int64)]
        tree_of = [np.arange(n_tree, dtype=np.int64)]
        counts_mat: list = []
        for d in range(depth):
            all_counts = np.concatenate([t[0][d] for t in per_tree])
            level_parents.append(np.repeat(np.arange(len(all_counts)), all_counts))
            tree_of.append(np.repeat(np.arange(n_tree),
                                     [int(t[0][d].sum()) for t in per_tree]))
            counts_mat.append(np.zeros((len(all_counts), k), dtype=np.int64))
        counts_mat.append(None)
        boundary = np.concatenate([t[1] for t in per_tree])

        colours, masks = _propagate_chunk(
            spec, level_parents, counts_mat, boundary, depth)

        # per-tree statistics
        roots = colours[0]
        for c in range(k):
            root_acc[c].add_array((roots == c).astype(np.int64))
        for d in range(depth + 1):
            piv = masks[d] != 0
            ln = np.bincount(tree_of[d][piv], minlength=n_tree)
            level_acc[d].add_array(ln)
            surv_acc[d].add_array((ln > 0).astype(np.int64))

        # per-parent pivotal children counts, grouped by augmented type
        big = 1 << k
        for d in range(depth):
            pmask = masks[d]
            piv_par = np.nonzero(pmask != 0)[0]
            if piv_par.size == 0:
                continue
            pkeys = colours[d][piv_par] * big + pmask[piv_par]
            slot = np.full(len(pmask), -1, dtype=np.int64)
            slot[piv_par] = np.arange(piv_par.size)
            ch_piv = np.nonzero(masks[d + 1] != 0)[0]
            ch_slot = slot[level_parents[d + 1][ch_piv]]
            ckeys = colours[d + 1][ch_piv] * big + masks[d + 1][ch_piv]
            distinct_ck = np.unique(ckeys) if ch_piv.size else []
            for pk in np.unique(pkeys):
                sel_par = pkeys == pk
                parent_count[int(pk)] = parent_count.get(int(pk), 0) + int(sel_par.sum())
                for ck in distinct_ck:
                    z = np.bincount(ch_slot[ckeys == ck],
                                    minlength=piv_par.size)[sel_par]
                    mm_acc.setdefault((int(pk), int(ck)), _Acc()).add_array(z)
        completed = chunk_hi

    # parents of a type that produced no children of some observed type still
    # contribute zero observations to that entry
    for (pk, ck), acc in mm_acc.items():
        missing = parent_count[pk] - acc.n
        if missing > 0:
            acc.add_array(np.zeros(missing, dtype=np.int64))

    def unkey(key: int) -> str:
        big = 1 << k
        colour, mask = divmod(key, big)
        return type_key(colour, [g for g in range(k) if mask >> g & 1])

    rows = []
    for c in range(k):
        rows.append(root_acc[c].row(f"root_colour_freq[{spec.colours[c]}]"))
    for (pk, ck), acc in mm_acc.items():
        rows.append(acc.row(f"pivotal_children[{unkey(pk)} -> {unkey(ck)}]"))
    for d in range(depth + 1):
        rows.append(level_acc[d].row(f"pivotal_level_mean[{d}]"))
    for d in range(depth + 1):
        rows.append(surv_acc[d].row(f"pivot_survival_freq[{d}]"))
    rows.sort(key=lambda r: r.name)
    return SimulationSummary(
        samples=samples, completed=completed, partial=partial,
        depth=depth, seed=seed, rows=tuple(rows),
    )
