"""Contingency tables, their binomial collapse, and multinomial simulation.

Cells are stored in lexicographic order of their level tuples with the
last factor varying fastest, i.e. ``counts.reshape(table.shape)`` is the
natural C-ordered array.
"""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass
from typing import Iterable, Sequence, TextIO

import numpy as np


class TableError(ValueError):
    """Malformed table input or an invalid reshaping request."""


class DuplicateCellError(TableError):
    pass


@dataclass(frozen=True)
class FactorSpec:
    name: str
    levels: int

    def __post_init__(self):
        if not isinstance(self.name, str) or not self.name:
            raise TableError(f"factor name must be a non-empty string, got {self.name!r}")
        if int(self.levels) != self.levels or self.levels < 2:
            raise TableError(f"factor {self.name!r} needs at least 2 levels, got {self.levels}")


def _check_factors(factors: Sequence[FactorSpec]) -> tuple[FactorSpec, ...]:
    factors = tuple(factors)
    names = [f.name for f in factors]
    if len(set(names)) != len(names):
        raise TableError(f"duplicate factor names in {names}")
    return factors


def level_tuples(levels: Sequence[int]) -> np.ndarray:
    """All level combinations, last coordinate fastest, as an (n, k) int array."""
    levels = tuple(int(l) for l in levels)
    if not levels:
        return np.zeros((1, 0), dtype=np.int64)
    grids = np.indices(levels).reshape(len(levels), -1).T
    return np.ascontiguousarray(grids, dtype=np.int64)


def cell_permutation(levels: Sequence[int], first_fastest: bool = True) -> np.ndarray:
    """Indices that reorder our cells so the *first* factor varies fastest.

    ``rows[perm]`` lists cells in the alternative ordering. Used to compare
    matrices against hand-written layouts that cycle the first factor fastest.
    """
    tuples = level_tuples(levels)
    if not first_fastest:
        return np.arange(len(tuples))
    keys = tuple(tuples[:, j] for j in range(tuples.shape[1]))
    # np.lexsort sorts by the last key first, so pass columns in natural order
    return np.lexsort(keys)


@dataclass(frozen=True, eq=False)
class ContingencyTable:
    """A complete P-way table of non-negative integer counts."""

    factors: tuple[FactorSpec, ...]
    counts: np.ndarray

    def __post_init__(self):
        factors = _check_factors(self.factors)
        counts = np.asarray(self.counts)
        if counts.ndim != 1:
            counts = counts.reshape(-1)
        if counts.size and not np.all(np.equal(np.mod(counts, 1), 0)):
            raise TableError("counts must be integers")
        counts = counts.astype(np.int64)
        if np.any(counts < 0):
            raise TableError("counts must be non-negative")
        expected = int(np.prod([f.levels for f in factors])) if factors else 1
        if counts.size != expected:
            raise TableError(f"expected {expected} cell counts, got {counts.size}")
        counts.setflags(write=False)
        object.__setattr__(self, "factors", factors)
        object.__setattr__(self, "counts", counts)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.factors)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(f.levels for f in self.factors)

    @property
    def n_cells(self) -> int:
        return int(self.counts.size)

    @property
    def N(self) -> int:
        return int(self.counts.sum())

    @property
    def mean_count(self) -> float:
        return self.N / self.n_cells

    def factor(self, name: str) -> FactorSpec:
        for f in self.factors:
            if f.name == name:
                return f
        raise TableError(f"factor {name!r} not in table {self.names}")

    def index_of(self, name: str) -> int:
        return self.names.index(self.factor(name).name)

    def level_tuples(self) -> np.ndarray:
        return level_tuples(self.shape)

    def cell_index(self, levels: Sequence[int]) -> int:
        return int(np.ravel_multi_index(tuple(levels), self.shape))

    def cell_levels(self, index: int) -> tuple[int, ...]:
        return tuple(int(i) for i in np.unravel_index(index, self.shape))

    def as_array(self) -> np.ndarray:
        return self.counts.reshape(self.shape)

    def __eq__(self, other):
        if not isinstance(other, ContingencyTable):
            return NotImplemented
        return self.factors == other.factors and np.array_equal(self.counts, other.counts)

    def __hash__(self):
        return hash((self.factors, self.counts.tobytes()))

    def __repr__(self):
        dims = "x".join(str(l) for l in self.shape)
        return f"ContingencyTable({','.join(self.names)}; {dims}; N={self.N})"


@dataclass(frozen=True, eq=False)
class BinomialData:
    """Grouped binary-outcome data: one row per covariate level combination."""

    covariates: tuple[FactorSpec, ...]
    trials: np.ndarray
    successes: np.ndarray
    outcome: str = "Y"

    def __post_init__(self):
        covariates = _check_factors(self.covariates)
        t = np.asarray(self.trials, dtype=np.int64).reshape(-1)
        s = np.asarray(self.successes, dtype=np.int64).reshape(-1)
        if t.shape != s.shape:
            raise TableError("trials and successes differ in length")
        expected = int(np.prod([f.levels for f in covariates])) if covariates else 1
        if t.size != expected:
            raise TableError(f"expected {expected} rows, got {t.size}")
        if np.any(s < 0) or np.any(s > t):
            raise TableError("need 0 <= successes <= trials in every row")
        t.setflags(write=False)
        s.setflags(write=False)
        object.__setattr__(self, "covariates", covariates)
        object.__setattr__(self, "trials", t)
        object.__setattr__(self, "successes", s)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.covariates)

    @property
    def factors(self) -> tuple[FactorSpec, ...]:
        return self.covariates

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(f.levels for f in self.covariates)

    @property
    def n_rows(self) -> int:
        return int(self.trials.size)

    @property
    def N(self) -> int:
        return int(self.trials.sum())

    def level_tuples(self) -> np.ndarray:
        return level_tuples(self.shape)

    def __eq__(self, other):
        if not isinstance(other, BinomialData):
            return NotImplemented
        return (self.covariates == other.covariates and self.outcome == other.outcome
                and np.array_equal(self.trials, other.trials)
                and np.array_equal(self.successes, other.successes))

    def __repr__(self):
        return (f"BinomialData(outcome={self.outcome}; covariates={','.join(self.names) or '-'}; "
                f"n_lt={self.n_rows}; N={self.N})")


# ---------------------------------------------------------------------------
# I/O
# ---------------------------------------------------------------------------

def _open_text(source) -> tuple[TextIO, bool]:
    if isinstance(source, (str, os.PathLike)):
        return open(source, newline=""), True
    return source, False


def ingest_csv(source, levels: dict[str, int] | None = None) -> ContingencyTable:
    """Read a table from CSV: factor columns, then a final ``count`` column.

    Levels are 0-based integers. A factor's number of levels is taken from
    ``levels`` when given, otherwise as one more than the largest level seen.
    Cells absent from the file get count 0.
    """
    fh, close = _open_text(source)
    try:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise TableError("empty CSV input") from None
        if len(header) < 2 or header[-1] != "count":
            raise TableError(f"header must be factor columns followed by 'count', got {header}")
        names = header[:-1]
        if levels is not None:
            unknown = [n for n in names if n not in levels]
            if unknown:
                raise TableError(f"unknown column(s) {unknown}")
        rows: dict[tuple[int, ...], int] = {}
        for lineno, raw in enumerate(reader, start=2):
            if not raw or all(not c.strip() for c in raw):
                continue
            if len(raw) != len(header):
                raise TableError(f"line {lineno}: expected {len(header)} fields, got {len(raw)}")
            try:
                cell = tuple(int(c) for c in raw[:-1])
            except ValueError:
                raise TableError(f"line {lineno}: levels must be integers") from None
            if any(c < 0 for c in cell):
                raise TableError(f"line {lineno}: negative level")
            count = _parse_count(raw[-1], lineno)
            if cell in rows:
                raise DuplicateCellError(f"line {lineno}: cell {cell} listed twice")
            rows[cell] = count
    finally:
        if close:
            fh.close()

    if levels is None:
        seen = np.array(list(rows), dtype=np.int64).reshape(-1, len(names))
        sizes = [int(seen[:, j].max()) + 1 if len(seen) else 0 for j in range(len(names))]
        sizes = [max(s, 2) for s in sizes]
    else:
        sizes = [int(levels[n]) for n in names]
    factors = tuple(FactorSpec(n, s) for n, s in zip(names, sizes))
    counts = np.zeros(int(np.prod(sizes)), dtype=np.int64)
    for cell, c in rows.items():
        if any(l >= s for l, s in zip(cell, sizes)):
            raise TableError(f"cell {cell} outside declared levels {sizes}")
        counts[np.ravel_multi_index(cell, sizes)] = c
    return ContingencyTable(factors, counts)


def _parse_count(text: str, lineno: int) -> int:
    text = text.strip()
    try:
        value = int(text)
    except ValueError:
        try:
            f = float(text)
        except ValueError:
            raise TableError(f"line {lineno}: count {text!r} is not a number") from None
        if not f.is_integer():
            raise TableError(f"line {lineno}: count {text!r} is not an integer")
        value = int(f)
    if value < 0:
        raise TableError(f"line {lineno}: negative count {value}")
    return value


def emit_csv(table: ContingencyTable, dest=None) -> str:
    """Write ``table`` as CSV (every cell, lexicographic order); returns the text."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([*table.names, "count"])
    for cell, c in zip(table.level_tuples(), table.counts):
        writer.writerow([*cell.tolist(), int(c)])
    text = buf.getvalue()
    if dest is not None:
        if isinstance(dest, (str, os.PathLike)):
            with open(dest, "w", newline="") as fh:
                fh.write(text)
        else:
            dest.write(text)
    return text


def table_to_dict(table: ContingencyTable) -> dict:
    return {
        "factors": [{"name": f.name, "levels": f.levels} for f in table.factors],
        "counts": table.counts.tolist(),
    }


def table_from_dict(obj: dict) -> ContingencyTable:
    try:
        factors = tuple(FactorSpec(f["name"], int(f["levels"])) for f in obj["factors"])
        counts = obj["counts"]
    except (KeyError, TypeError) as exc:
        raise TableError(f"malformed table JSON: {exc}") from None
    return ContingencyTable(factors, np.asarray(counts))


def load_table(path) -> ContingencyTable:
    """Load a table from ``.json`` or CSV based on the file extension."""
    path = os.fspath(path)
    if path.endswith(".json"):
        with open(path) as fh:
            return table_from_dict(json.load(fh))
    return ingest_csv(path)


# ---------------------------------------------------------------------------
# Reshaping
# ---------------------------------------------------------------------------

def marginalize(table: ContingencyTable, keep: Iterable[str]) -> ContingencyTable:
    """Sum the table over every factor not in ``keep`` (table order preserved)."""
    keep = set(keep)
    for name in keep:
        table.factor(name)
    axes = tuple(i for i, n in enumerate(table.names) if n not in keep)
    arr = table.as_array().sum(axis=axes) if axes else table.as_array()
    factors = tuple(f for f in table.factors if f.name in keep)
    return ContingencyTable(factors, np.asarray(arr).reshape(-1))


def collapse_to_binomial(table: ContingencyTable, outcome: str,
                         retained: Iterable[str] | None = None) -> BinomialData:
    """Collapse a table to grouped binomial form for a binary ``outcome``.

    ``retained`` defaults to every other factor. Rows follow the retained
    covariates in table order, last fastest.
    """
    y = table.factor(outcome)
    if y.levels != 2:
        raise TableError(f"outcome {outcome!r} has {y.levels} levels; must be binary")
    if retained is None:
        retained = [n for n in table.names if n != outcome]
    retained = set(retained)
    if outcome in retained:
        raise TableError("retained covariates must not include the outcome")
    for name in retained:
        table.factor(name)
    keep = [n for n in table.names if n in retained or n == outcome]
    sub = marginalize(table, keep)
    arr = sub.as_array()
    y_axis = sub.names.index(outcome)
    arr = np.moveaxis(arr, y_axis, -1)
    trials = arr.sum(axis=-1).reshape(-1)
    successes = arr[..., 1].reshape(-1)
    covariates = tuple(f for f in sub.factors if f.name != outcome)
    return BinomialData(covariates, trials, successes, outcome=outcome)


def summarize_trials(data: BinomialData) -> dict[str, float]:
    """Min, quartiles (linear interpolation) and max of the trial counts."""
    t = np.asarray(data.trials, dtype=float)
    q = np.quantile(t, [0.0, 0.25, 0.5, 0.75, 1.0], method="linear")
    return dict(zip(("min", "q25", "median", "q75", "max"), (float(v) for v in q)))


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------

def cell_probabilities(X: np.ndarray, lam: np.ndarray) -> np.ndarray:
    eta = np.asarray(X, dtype=float) @ np.asarray(lam, dtype=float)
    eta = eta - eta.max()
    w = np.exp(eta)
    return w / w.sum()


def simulate_table(factors: Sequence[FactorSpec], model, lam, N: int,
                   seed=None) -> ContingencyTable:
    """Draw a multinomial table of ``N`` subjects with probabilities ∝ exp(X λ).

    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    from .models import design_matrix  # local import avoids a cycle

    factors = _check_factors(factors)
    if N < 1:
        raise TableError("N must be at least 1")
    skeleton = ContingencyTable(factors, np.zeros(int(np.prod([f.levels for f in factors])), dtype=np.int64))
    X = design_matrix(skeleton, model)
    lam = np.asarray(lam, dtype=float).reshape(-1)
    if lam.size != X.n_params:
        raise TableError(f"lambda has {lam.size} entries but the design has {X.n_params} columns")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    probs = cell_probabilities(X.matrix, lam)
    counts = rng.multinomial(int(N), probs)
    return ContingencyTable(factors, counts)


def uniform_table(factors: Sequence[FactorSpec], N: int) -> ContingencyTable:
    """Spread ``N`` as evenly as possible across cells (remainder to the first cells)."""
    factors = _check_factors(factors)
    n = int(np.prod([f.levels for f in factors]))
    counts = np.full(n, N // n, dtype=np.int64)
    counts[: N % n] += 1
    return ContingencyTable(factors, counts)


# ---------------------------------------------------------------------------
# Default six-factor scenario
# ---------------------------------------------------------------------------

SCENARIO_FACTORS = tuple(FactorSpec(n, 2) for n in "YABCDE")
SCENARIO_GENERATORS = ("YAB", "YCD", "YE")
SCENARIO_N = 1000
SCENARIO_SEED = 22
SCENARIO_TWO_WAY = {"YA": -1.2, "YB": 1.2, "YC": -1.2, "YD": 1.2, "YE": -1.2, "AB": 1.2, "CD": 1.2}


def scenario_lambda(labels: Sequence[str]) -> np.ndarray:
    """Documented λ for log(μ) = YAB+YCD+YE, keyed by design label.

    Intercept 0, main effects 0.3 except Y at 0.5, two-way interactions
    ±1.2 as in ``SCENARIO_TWO_WAY``, three-way interactions -1.1. These are
    configuration values chosen so that desk-scale model search recovers
    the generating model; they are not estimates of anything.
    """
    out = []
    for lab in labels:
        if lab == "Intercept":
            out.append(0.0)
        elif len(lab) == 1:
            out.append(0.5 if lab == "Y" else 0.3)
        elif len(lab) == 2:
            out.append(SCENARIO_TWO_WAY[lab])
        elif len(lab) == 3:
            out.append(-1.1)
        else:
            raise TableError(f"no documented value for term {lab!r}")
    return np.array(out)


def simulate_scenario(N: int = SCENARIO_N, seed=SCENARIO_SEED) -> ContingencyTable:
    """Table drawn from the documented scenario model and λ."""
    from .models import design_matrix, parse_formula

    names = [f.name for f in SCENARIO_FACTORS]
    model = parse_formula("+".join(SCENARIO_GENERATORS), names)
    skeleton = ContingencyTable(SCENARIO_FACTORS, np.zeros(2 ** len(names), dtype=np.int64))
    lam = scenario_lambda(design_matrix(skeleton, model).label_strings())
    return simulate_table(SCENARIO_FACTORS, model, lam, N, seed)
