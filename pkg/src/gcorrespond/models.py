"""Hierarchical model formulas, graphical model spaces and corner-point designs.

A term is a ``frozenset`` of factor names; the empty frozenset is the
intercept. Terms are ordered for display and for design-matrix columns by
(size, positions of their factors in the data), so for factors
``Y, A, B, ...`` the order is ``Intercept, Y, A, B, ..., YA, YB, ..., AB, ...``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from itertools import combinations, product
from typing import Iterable, Iterator, Sequence

import numpy as np

INTERCEPT: frozenset = frozenset()
MAX_GRAPHICAL_FACTORS = 7


class FormulaError(ValueError):
    pass


def _as_term(t) -> frozenset:
    if isinstance(t, str):
        return frozenset([t]) if t else INTERCEPT
    return frozenset(t)


def term_key(term: frozenset, order: Sequence[str]) -> tuple:
    pos = {n: i for i, n in enumerate(order)}
    try:
        return (len(term), tuple(sorted(pos[n] for n in term)))
    except KeyError as exc:
        raise FormulaError(f"factor {exc.args[0]!r} not among {list(order)}") from None


def sort_terms(terms: Iterable[frozenset], order: Sequence[str]) -> list[frozenset]:
    return sorted(terms, key=lambda t: term_key(t, order))


def term_factors(term: frozenset, order: Sequence[str]) -> tuple[str, ...]:
    """Factor names of ``term`` in data order."""
    pos = {n: i for i, n in enumerate(order)}
    return tuple(sorted(term, key=pos.__getitem__))


def _generator_key(term: frozenset, order: Sequence[str]) -> tuple:
    pos = {n: i for i, n in enumerate(order)}
    return tuple(sorted(pos[n] for n in term))


def term_name(term: frozenset, order: Sequence[str] | None = None) -> str:
    if not term:
        return "1"
    names = term_factors(term, order) if order is not None else tuple(sorted(term))
    sep = "" if all(len(n) == 1 for n in names) else ":"
    return sep.join(names)


@dataclass(frozen=True)
class ModelFormula:
    """A hierarchical set of terms for a log-linear or logistic model."""

    terms: frozenset
    role: str = "loglinear"
    outcome: str | None = None

    def __post_init__(self):
        terms = frozenset(_as_term(t) for t in self.terms) | {INTERCEPT}
        object.__setattr__(self, "terms", terms)
        if self.role not in ("loglinear", "logistic"):
            raise FormulaError(f"role must be 'loglinear' or 'logistic', got {self.role!r}")
        if self.role == "logistic":
            if self.outcome is None:
                raise FormulaError("a logistic formula needs an outcome")
            if any(self.outcome in t for t in terms):
                raise FormulaError(f"logistic terms may not contain the outcome {self.outcome!r}")

    @property
    def factors(self) -> frozenset:
        return frozenset().union(*self.terms)

    def is_hierarchical(self) -> bool:
        return all(frozenset(s) in self.terms
                   for t in self.terms for k in range(len(t)) for s in combinations(t, k))

    def generators(self) -> frozenset:
        """Maximal terms (intercept only if it is the whole model)."""
        gens = frozenset(t for t in self.terms if not any(t < u for u in self.terms))
        return gens

    def sorted_terms(self, order: Sequence[str]) -> list[frozenset]:
        return sort_terms(self.terms, order)

    def describe(self, order: Sequence[str] | None = None) -> str:
        order = list(order) if order is not None else sorted(self.factors)
        gens = sorted(self.generators(), key=lambda t: _generator_key(t, order))
        body = "+".join(term_name(g, order) for g in gens) if gens != [INTERCEPT] else "1"
        lhs = "log(mu)" if self.role == "loglinear" else "logit(p)"
        return f"{lhs} = {body}"

    def __str__(self):
        return self.describe()

    def to_dict(self, order: Sequence[str] | None = None) -> dict:
        order = list(order) if order is not None else sorted(self.factors)
        out = {"role": self.role,
               "generators": [list(term_factors(g, order)) for g in sorted(self.generators(), key=lambda t: _generator_key(t, order)) if g]}
        if self.outcome is not None:
            out["outcome"] = self.outcome
        return out


def close_hierarchical(generators: Iterable, role: str = "loglinear",
                       outcome: str | None = None) -> ModelFormula:
    """Smallest hierarchical formula containing every generator."""
    terms = {INTERCEPT}
    for g in generators:
        g = _as_term(g)
        for k in range(len(g) + 1):
            terms.update(frozenset(s) for s in combinations(sorted(g), k))
    return ModelFormula(frozenset(terms), role=role, outcome=outcome)


def parse_formula(text: str, factors: Sequence[str] | None = None, role: str = "loglinear",
                  outcome: str | None = None) -> ModelFormula:
    """Parse ``"YAB+YCD+YE"`` (single-letter factors) or ``"Y:A:B+Y:C"``.

    A leading ``log(mu)=`` or ``logit(p)=`` is ignored. ``"1"`` is the
    intercept-only model.
    """
    body = text.split("=", 1)[1] if "=" in text else text
    if factors is not None:
        factors = list(factors)
    gens = []
    for piece in body.replace(" ", "").split("+"):
        if not piece or piece == "1":
            continue
        if ":" in piece:
            names = piece.split(":")
        elif factors is not None and piece in factors:
            names = [piece]
        else:
            names = list(piece)
        if factors is not None:
            unknown = [n for n in names if n not in factors]
            if unknown:
                raise FormulaError(f"unknown factor(s) {unknown} in {piece!r}")
        gens.append(frozenset(names))
    return close_hierarchical(gens, role=role, outcome=outcome)


def formula_from_dict(obj: dict) -> ModelFormula:
    """Load ``{"role": ..., "generators": [[...], ...], "outcome": ...}`` with closure."""
    try:
        gens = [frozenset(g) for g in obj.get("generators", [])]
        role = obj.get("role", "loglinear")
    except TypeError as exc:
        raise FormulaError(f"malformed model JSON: {exc}") from None
    return close_hierarchical(gens, role=role, outcome=obj.get("outcome"))


def load_formula(path) -> ModelFormula:
    with open(path) as fh:
        return formula_from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# Model spaces
# ---------------------------------------------------------------------------

def graph_edges(vertices: Sequence[str]) -> list[tuple[str, str]]:
    return list(combinations(vertices, 2))


def graphical_model(vertices: Sequence[str], edges: Iterable[tuple[str, str]],
                    role: str = "loglinear", outcome: str | None = None) -> ModelFormula:
    """Hierarchical model whose terms are the complete vertex subsets of the graph."""
    vertices = list(vertices)
    edge_set = {frozenset(e) for e in edges}
    terms = {INTERCEPT}
    for k in range(1, len(vertices) + 1):
        for s in combinations(vertices, k):
            if all(frozenset(p) in edge_set for p in combinations(s, 2)):
                terms.add(frozenset(s))
    return ModelFormula(frozenset(terms), role=role, outcome=outcome)


def model_edges(formula: ModelFormula) -> frozenset:
    """Edges (2-factor terms) of the interaction graph of ``formula``."""
    return frozenset(t for t in formula.terms if len(t) == 2)


def graphical_vertices(names: Sequence[str], role: str, outcome: str | None) -> list[str]:
    names = list(names)
    if role == "logistic":
        if outcome not in names:
            raise FormulaError(f"outcome {outcome!r} not among factors {names}")
        return [n for n in names if n != outcome]
    return names


def enumerate_graphical(names: Sequence[str], role: str = "loglinear",
                        outcome: str | None = None) -> Iterator[ModelFormula]:
    """Every graphical model on the factors (log-linear) or covariates (logistic).

    Models come out in order of the edge bitmask, edges indexed as in
    :func:`graph_edges`. In the logistic role every covariate main effect is
    present because every vertex lies in some clique.
    """
    vertices = graphical_vertices(names, role, outcome)
    if len(vertices) > MAX_GRAPHICAL_FACTORS:
        raise FormulaError(f"{len(vertices)} vertices exceed the limit of {MAX_GRAPHICAL_FACTORS}")
    edges = graph_edges(vertices)
    edge_bit = {frozenset(e): 1 << i for i, e in enumerate(edges)}
    subsets = []
    for k in range(1, len(vertices) + 1):
        for s in combinations(vertices, k):
            need = 0
            for p in combinations(s, 2):
                need |= edge_bit[frozenset(p)]
            subsets.append((frozenset(s), need))
    for mask in range(1 << len(edges)):
        terms = frozenset(s for s, need in subsets if need & ~mask == 0) | {INTERCEPT}
        yield ModelFormula(terms, role=role, outcome=outcome if role == "logistic" else None)


def count_graphical(n_vertices: int) -> int:
    return 2 ** (n_vertices * (n_vertices - 1) // 2)


def enumerate_hierarchical(names: Sequence[str], containing: Iterable = ()) -> Iterator[ModelFormula]:
    """Every hierarchical log-linear model on ``names`` containing the given terms."""
    names = list(names)
    all_terms = [frozenset(s) for k in range(1, len(names) + 1) for s in combinations(names, k)]
    required = [_as_term(t) for t in containing]

    def rec(i, chosen):
        if i == len(all_terms):
            if all(r in chosen for r in required):
                yield ModelFormula(frozenset(chosen))
            return
        t = all_terms[i]
        yield from rec(i + 1, chosen)
        if all(frozenset(s) in chosen for s in combinations(t, len(t) - 1)):
            yield from rec(i + 1, chosen | {t})

    yield from rec(0, frozenset({INTERCEPT}))


# ---------------------------------------------------------------------------
# Design matrices
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DesignMatrix:
    """Corner-point dummy design with one label per column.

    ``labels[j]`` is ``(factor names of the term, level tuple)``; the
    intercept is ``((), ())``. ``row_levels[i]`` are the levels of row ``i``
    over ``names``.
    """

    matrix: np.ndarray
    labels: tuple
    names: tuple[str, ...]
    row_levels: np.ndarray
    level_counts: tuple[int, ...]

    @property
    def n_rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_params(self) -> int:
        return self.matrix.shape[1]

    @property
    def terms(self) -> list[frozenset]:
        return [frozenset(t) for t, _ in self.labels]

    def label_strings(self) -> list[str]:
        lv = dict(zip(self.names, self.level_counts))
        out = []
        for term, levels in self.labels:
            if not term:
                out.append("Intercept")
                continue
            name = term_name(frozenset(term), self.names)
            if any(lv[f] > 2 for f in term):
                name += "[" + ",".join(str(l) for l in levels) + "]"
            out.append(name)
        return out

    def column_index(self, term: Iterable[str], levels: Sequence[int] | None = None) -> int:
        term = term_factors(_as_term(term), self.names)
        if levels is None:
            levels = (1,) * len(term)
        try:
            return self.labels.index((term, tuple(levels)))
        except ValueError:
            raise FormulaError(f"no column for term {term} at levels {tuple(levels)}") from None


def design_columns(formula: ModelFormula, names: Sequence[str], level_counts: Sequence[int]) -> list:
    lv = dict(zip(names, level_counts))
    labels = []
    for term in formula.sorted_terms(names):
        facs = term_factors(term, names)
        for levels in product(*(range(1, lv[f]) for f in facs)):
            labels.append((facs, tuple(levels)))
    return labels


def n_columns(formula: ModelFormula, level_counts: dict[str, int]) -> int:
    return sum(int(np.prod([level_counts[f] - 1 for f in t])) for t in formula.terms)


def design_matrix(data, formula: ModelFormula) -> DesignMatrix:
    """Corner-point design of ``formula`` over the rows of ``data``.

    ``data`` is a ContingencyTable (rows are cells) or BinomialData (rows
    are covariate combinations); anything with ``factors`` and
    ``level_tuples()`` works.
    """
    names = tuple(f.name for f in data.factors)
    level_counts = tuple(f.levels for f in data.factors)
    missing = formula.factors - set(names)
    if missing:
        raise FormulaError(f"formula uses factor(s) {sorted(missing)} absent from the data {list(names)}")
    if not formula.is_hierarchical():
        raise FormulaError("formula is not hierarchical")
    rows = data.level_tuples()
    labels = design_columns(formula, names, level_counts)
    pos = {n: i for i, n in enumerate(names)}
    M = np.empty((rows.shape[0], len(labels)))
    for j, (facs, levels) in enumerate(labels):
        if not facs:
            M[:, j] = 1.0
            continue
        idx = [pos[f] for f in facs]
        M[:, j] = np.all(rows[:, idx] == np.asarray(levels), axis=1)
    M.setflags(write=False)
    return DesignMatrix(M, tuple(labels), names, rows, level_counts)


# ---------------------------------------------------------------------------
# Log-linear <-> logistic
# ---------------------------------------------------------------------------

def _check_binary(outcome, factors):
    if factors is None:
        return
    for f in factors:
        if getattr(f, "name", None) == outcome and f.levels != 2:
            raise FormulaError(f"outcome {outcome!r} has {f.levels} levels; must be binary")


def loglinear_to_logistic(formula: ModelFormula, outcome: str, factors=None):
    """Logistic formula implied by a log-linear one for binary ``outcome``.

    Returns ``(logistic formula, term map)`` where the map sends each
    logistic term T to the log-linear term T ∪ {outcome}. Under corner-point
    coding the parameter of T at levels ℓ equals the log-linear parameter of
    T ∪ {outcome} at ℓ with the outcome at level 1.
    """
    if formula.role != "loglinear":
        raise FormulaError("expected a log-linear formula")
    if frozenset([outcome]) not in formula.terms:
        raise FormulaError(f"outcome {outcome!r} does not appear in the log-linear formula")
    _check_binary(outcome, factors)
    term_map = {t - {outcome}: t for t in formula.terms if outcome in t}
    logistic = ModelFormula(frozenset(term_map), role="logistic", outcome=outcome)
    return logistic, term_map


def logistic_to_loglinear_equivalent(formula: ModelFormula, outcome: str,
                                     names: Sequence[str]) -> ModelFormula:
    """Largest log-linear model implying ``formula``; it matches its deviance.

    All non-outcome factors interact fully, plus T ∪ {outcome} for each
    logistic term T.
    """
    names = list(names)
    if outcome not in names:
        raise FormulaError(f"outcome {outcome!r} not among factors {names}")
    if any(outcome in t for t in formula.terms):
        raise FormulaError("outcome appears among the covariates")
    unknown = formula.factors - set(names)
    if unknown:
        raise FormulaError(f"unknown factor(s) {sorted(unknown)}")
    covariates = frozenset(n for n in names if n != outcome)
    gens = [covariates] + [t | {outcome} for t in formula.terms]
    return close_hierarchical(gens)


def nonbijective_witness(formula: ModelFormula, outcome: str, names: Sequence[str]) -> ModelFormula | None:
    """A different log-linear model implying the same logistic model, if one exists.

    Candidates tried in turn: the deviance-equivalent (largest) model, the
    smallest model that keeps every main effect, and the smallest model.
    ``None`` only when the implied logistic model is saturated in all covariates.
    """
    logistic, _ = loglinear_to_logistic(formula, outcome)
    y_terms = [t | {outcome} for t in logistic.terms]
    candidates = [
        logistic_to_loglinear_equivalent(logistic, outcome, names),
        close_hierarchical(y_terms + [frozenset([n]) for n in names]),
        close_hierarchical(y_terms),
    ]
    for c in candidates:
        if c != formula:
            return c
    return None
