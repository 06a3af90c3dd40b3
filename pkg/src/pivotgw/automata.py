"""Tree automata on a finite colour set.

An automaton maps a vector of child-colour counts to the parent's colour.
Rules are written in a small predicate DSL over count-membership atoms, so
that every spec is serializable; arbitrary callables are accepted behind the
same evaluation interface for in-library use.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

from .errors import InvalidInputError, UnsupportedError

__all__ = [
    "CountIn",
    "CountAtLeast",
    "AllOf",
    "AnyOf",
    "NotOf",
    "AutomatonSpec",
    "FuncAutomaton",
    "Automaton",
    "evaluate",
    "evaluate_switched",
    "is_monotone",
    "MonotoneReport",
    "spec_to_json",
    "spec_from_json",
    "at_least_two",
    "at_least_one",
    "zero_ones",
    "one_of_each",
    "many_roots",
    "sum_capped",
]


# ---------------------------------------------------------------------------
# Predicate DSL

@dataclass(frozen=True)
class CountIn:
    """count(colour) lies in a finite integer set."""

    colour: int
    values: frozenset

    def holds(self, counts) -> bool:
        return int(counts[self.colour]) in self.values

    def holds_array(self, counts: np.ndarray) -> np.ndarray:
        col = counts[:, self.colour]
        out = np.zeros(len(col), dtype=bool)
        for v in self.values:
            out |= col == v
        return out


@dataclass(frozen=True)
class CountAtLeast:
    """count(colour) lies in the ray [bound, infinity)."""

    colour: int
    bound: int

    def holds(self, counts) -> bool:
        return int(counts[self.colour]) >= self.bound

    def holds_array(self, counts: np.ndarray) -> np.ndarray:
        return counts[:, self.colour] >= self.bound


@dataclass(frozen=True)
class AllOf:
    terms: tuple

    def holds(self, counts) -> bool:
        return all(t.holds(counts) for t in self.terms)

    def holds_array(self, counts: np.ndarray) -> np.ndarray:
        out = np.ones(len(counts), dtype=bool)
        for t in self.terms:
            out &= t.holds_array(counts)
        return out


@dataclass(frozen=True)
class AnyOf:
    terms: tuple

    def holds(self, counts) -> bool:
        return any(t.holds(counts) for t in self.terms)

    def holds_array(self, counts: np.ndarray) -> np.ndarray:
        out = np.zeros(len(counts), dtype=bool)
        for t in self.terms:
            out |= t.holds_array(counts)
        return out


@dataclass(frozen=True)
class NotOf:
    term: object

    def holds(self, counts) -> bool:
        return not self.term.holds(counts)

    def holds_array(self, counts: np.ndarray) -> np.ndarray:
        return ~self.term.holds_array(counts)


Predicate = Union[CountIn, CountAtLeast, AllOf, AnyOf, NotOf]


def _predicate_colours(pred) -> set:
    """Colour indices a predicate inspects."""
    if isinstance(pred, (CountIn, CountAtLeast)):
        return {pred.colour}
    if isinstance(pred, (AllOf, AnyOf)):
        out = set()
        for t in pred.terms:
            out |= _predicate_colours(t)
        return out
    if isinstance(pred, NotOf):
        return _predicate_colours(pred.term)
    raise TypeError(f"not a predicate: {pred!r}")


# ---------------------------------------------------------------------------
# Automaton specs

@dataclass(frozen=True)
class AutomatonSpec:
    """First-match-wins rule list with a mandatory default colour.

    ``rules`` is a tuple of ``(predicate, colour_index)`` pairs. Totality is
    trivial: any count vector that matches no rule gets ``default``.
    """

    colours: tuple
    rules: tuple
    default: int

    def __post_init__(self):
        if len(self.colours) < 2:
            raise InvalidInputError("need at least two colours")
        if len(set(self.colours)) != len(self.colours):
            raise InvalidInputError("colour names must be distinct")
        k = len(self.colours)
        for pred, col in self.rules:
            if not 0 <= col < k:
                raise InvalidInputError(f"rule colour index {col} out of range")
            for c in _predicate_colours(pred):
                if not 0 <= c < k:
                    raise InvalidInputError(f"predicate colour index {c} out of range")
        if not 0 <= self.default < k:
            raise InvalidInputError(f"default colour index {self.default} out of range")

    @property
    def k(self) -> int:
        return len(self.colours)

    def evaluate(self, counts) -> int:
        return evaluate(self, counts)

    def evaluate_array(self, counts: np.ndarray) -> np.ndarray:
        counts = np.asarray(counts)
        if counts.ndim != 2 or counts.shape[1] != self.k:
            raise InvalidInputError(
                f"count matrix must have {self.k} columns, got shape {counts.shape}"
            )
        conds = [pred.holds_array(counts) for pred, _ in self.rules]
        choices = [np.uint8(col) for _, col in self.rules]
        return np.select(conds, choices, default=np.uint8(self.default))

    def inspects_only(self, colour: int) -> bool:
        """True if every rule predicate reads only ``colour``'s count."""
        used = set()
        for pred, _ in self.rules:
            used |= _predicate_colours(pred)
        return used <= {colour}


@dataclass(frozen=True, eq=False)
class FuncAutomaton:
    """Automaton backed by an arbitrary callable ``counts -> colour index``.

    Not serializable; hashes by identity so result caches still work.
    """

    colours: tuple
    fn: Callable

    @property
    def k(self) -> int:
        return len(self.colours)

    def evaluate(self, counts) -> int:
        return evaluate(self, counts)

    def evaluate_array(self, counts: np.ndarray) -> np.ndarray:
        counts = np.asarray(counts)
        out = np.empty(len(counts), dtype=np.uint8)
        for i, row in enumerate(counts):
            out[i] = self.fn(tuple(int(x) for x in row))
        return out

    def inspects_only(self, colour: int) -> bool:
        return False


Automaton = Union[AutomatonSpec, FuncAutomaton]


def evaluate(spec: Automaton, counts: Sequence[int]) -> int:
    """Colour assigned to a parent whose children have the given counts."""
    counts = tuple(int(c) for c in counts)
    if len(counts) != spec.k:
        raise InvalidInputError(
            f"count vector has length {len(counts)}, automaton has {spec.k} colours"
        )
    if any(c < 0 for c in counts):
        raise InvalidInputError(f"negative count in {counts}")
    if isinstance(spec, FuncAutomaton):
        return int(spec.fn(counts))
    for pred, col in spec.rules:
        if pred.holds(counts):
            return col
    return spec.default


def evaluate_switched(spec: Automaton, counts, frm: int, to: int) -> int:
    """Parent colour after one child of colour ``frm`` is recoloured ``to``.

    The input vector is not modified.
    """
    counts = tuple(int(c) for c in counts)
    if frm == to:
        raise InvalidInputError("switch source and destination colours must differ")
    if not (0 <= frm < spec.k and 0 <= to < spec.k):
        raise InvalidInputError(f"switch colours ({frm}, {to}) out of range")
    if counts[frm] < 1:
        raise InvalidInputError(f"no child of colour {frm} to switch in {counts}")
    edited = list(counts)
    edited[frm] -= 1
    edited[to] += 1
    return evaluate(spec, edited)


# ---------------------------------------------------------------------------
# Monotonicity (two colours)

@dataclass(frozen=True)
class MonotoneReport:
    monotone: bool
    counterexample: tuple | None  # ((n0, n1), (n0-1, n1+1)) raising move that decreases A
    bound: int


def is_monotone(spec: Automaton, max_children: int = 200) -> MonotoneReport:
    """Whether raising a child's colour can never lower the parent's colour.

    Certified only up to ``max_children`` total children; single-step moves
    (one child from colour 0 to colour 1) generate the raising order, so they
    are the only moves checked.
    """
    if spec.k != 2:
        raise UnsupportedError("monotonicity check implemented for two colours only")
    if max_children < 1:
        raise InvalidInputError("max_children must be >= 1")
    totals = np.arange(max_children + 1)
    for m in totals:
        n1 = np.arange(m + 1)
        counts = np.stack([m - n1, n1], axis=1)
        vals = spec.evaluate_array(counts).astype(np.int16)
        # moving one child 0 -> 1 walks right along this row
        drops = np.nonzero(np.diff(vals) < 0)[0]
        if drops.size:
            j = int(drops[0])
            lo = (int(m - j), int(j))
            hi = (int(m - j - 1), int(j + 1))
            return MonotoneReport(False, (lo, hi), max_children)
    return MonotoneReport(True, None, max_children)


# ---------------------------------------------------------------------------
# Serialization (spec file format)

def _pred_to_json(pred, colours):
    if isinstance(pred, CountIn):
        return {"count": colours[pred.colour], "in": sorted(pred.values)}
    if isinstance(pred, CountAtLeast):
        return {"count": colours[pred.colour], "ge": pred.bound}
    if isinstance(pred, AllOf):
        return {"all": [_pred_to_json(t, colours) for t in pred.terms]}
    if isinstance(pred, AnyOf):
        return {"any": [_pred_to_json(t, colours) for t in pred.terms]}
    if isinstance(pred, NotOf):
        return {"not": _pred_to_json(pred.term, colours)}
    raise TypeError(f"not a predicate: {pred!r}")


def _pred_from_json(node, index):
    if not isinstance(node, dict):
        raise InvalidInputError(f"predicate node must be an object, got {node!r}")
    if "count" in node:
        colour = index.get(node["count"])
        if colour is None:
            raise InvalidInputError(f"unknown state {node['count']!r} in predicate")
        if "in" in node:
            vals = node["in"]
            if not vals or any((not isinstance(v, int)) or v < 0 for v in vals):
                raise InvalidInputError(f"'in' must list nonnegative integers: {vals!r}")
            return CountIn(colour, frozenset(vals))
        if "ge" in node:
            if not isinstance(node["ge"], int) or node["ge"] < 0:
                raise InvalidInputError(f"'ge' must be a nonnegative integer: {node['ge']!r}")
            return CountAtLeast(colour, node["ge"])
        raise InvalidInputError(f"count predicate needs 'in' or 'ge': {node!r}")
    if "all" in node:
        return AllOf(tuple(_pred_from_json(t, index) for t in node["all"]))
    if "any" in node:
        return AnyOf(tuple(_pred_from_json(t, index) for t in node["any"]))
    if "not" in node:
        return NotOf(_pred_from_json(node["not"], index))
    raise InvalidInputError(f"unrecognized predicate node: {node!r}")


def spec_to_json(spec: AutomatonSpec) -> dict:
    if not isinstance(spec, AutomatonSpec):
        raise UnsupportedError("only rule-DSL automata are serializable")
    return {
        "states": list(spec.colours),
        "rules": [
            {"when": _pred_to_json(pred, spec.colours), "then": spec.colours[col]}
            for pred, col in spec.rules
        ],
        "default": spec.colours[spec.default],
    }


def spec_from_json(doc: dict) -> AutomatonSpec:
    try:
        states = doc["states"]
        rules = doc["rules"]
        default = doc["default"]
    except (KeyError, TypeError) as exc:
        raise InvalidInputError(f"automaton document missing field: {exc}") from exc
    if not isinstance(states, list) or len(states) < 2:
        raise InvalidInputError("'states' must list at least two names")
    index = {name: i for i, name in enumerate(states)}
    if default not in index:
        raise InvalidInputError(f"default state {default!r} not in states")
    parsed = []
    for rule in rules:
        if "when" not in rule or "then" not in rule:
            raise InvalidInputError(f"rule needs 'when' and 'then': {rule!r}")
        if rule["then"] not in index:
            raise InvalidInputError(f"rule target {rule['then']!r} not in states")
        parsed.append((_pred_from_json(rule["when"], index), index[rule["then"]]))
    return AutomatonSpec(tuple(states), tuple(parsed), index[default])


# ---------------------------------------------------------------------------
# Example automata used throughout the tests and docs

def at_least_two() -> AutomatonSpec:
    """Parent is 1 iff at least two children are 1."""
    return AutomatonSpec(("0", "1"), ((CountAtLeast(1, 2), 1),), 0)


def at_least_one() -> AutomatonSpec:
    """Parent is 1 iff some child is 1 (classical survival rule)."""
    return AutomatonSpec(("0", "1"), ((CountAtLeast(1, 1), 1),), 0)


def zero_ones() -> AutomatonSpec:
    """Parent is 1 iff no child is 1."""
    return AutomatonSpec(("0", "1"), ((CountIn(1, frozenset([0])), 1),), 0)


def one_of_each() -> AutomatonSpec:
    """Parent is 1 iff it has both a 0-child and a 1-child."""
    return AutomatonSpec(
        ("0", "1"),
        ((AllOf((CountAtLeast(0, 1), CountAtLeast(1, 1))), 1),),
        0,
    )


def many_roots() -> AutomatonSpec:
    """Parent is 1 iff the number of 1-children is in {0, 6, 7} or >= 12."""
    return AutomatonSpec(
        ("0", "1"),
        ((AnyOf((CountIn(1, frozenset([0, 6, 7])), CountAtLeast(1, 12))), 1),),
        0,
    )


def sum_capped(cap: int = 2) -> AutomatonSpec:
    """Three-state automaton: parent state = sum of child states, capped.

    With ``cap=2`` this is the standard example on {0, 1, 2}: the weighted sum
    n1 + 2*n2 clipped to 2.
    """
    if cap != 2:
        raise UnsupportedError("only cap=2 is expressible in the count DSL")
    return AutomatonSpec(
        ("0", "1", "2"),
        (
            (CountAtLeast(2, 1), 2),
            (CountAtLeast(1, 2), 2),
            (CountIn(1, frozenset([1])), 1),
        ),
        0,
    )
