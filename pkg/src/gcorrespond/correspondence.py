"""The β = Tλ map between a log-linear model and its implied logistic regression.

For a binary outcome Y and corner-point coding, each logistic parameter
equals the log-linear parameter of the matching Y-containing term with Y at
level 1. The g-prior on λ then implies a g-prior on β, which this module
computes and checks in several independent ways.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from itertools import product
from typing import Iterator, Sequence

import numpy as np

from .models import (ModelFormula, design_columns, design_matrix, enumerate_hierarchical,
                     loglinear_to_logistic, term_factors, term_name)
from .priors import Fixed, GPriorSpec, inverse_gram
from .tables import BinomialData, ContingencyTable, FactorSpec, level_tuples

REL_TOL = 1e-10


class CorrespondenceError(ValueError):
    pass


def _names_levels(factors) -> tuple[list[str], list[int]]:
    factors = list(factors)
    return [f.name for f in factors], [f.levels for f in factors]


def _rel_diff(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(float(np.max(np.abs(b))), np.finfo(float).tiny)
    return float(np.max(np.abs(a - b))) / scale


@dataclass(frozen=True, eq=False)
class LambdaBetaMap:
    """One-hot map from log-linear parameters λ to logistic parameters β.

    ``T`` is n_β × n_λ with rows in logistic design order. ``permutation``
    reorders λ so that the Y-containing parameters come first, giving
    ``T_r = T[:, permutation] = [I | 0]``.
    """

    loglinear: ModelFormula
    logistic: ModelFormula
    outcome: str
    factors: tuple[FactorSpec, ...]
    T: np.ndarray
    permutation: np.ndarray
    lambda_labels: tuple
    beta_labels: tuple
    retained: tuple[str, ...]
    dropped: tuple[str, ...]

    @property
    def n_beta(self) -> int:
        return self.T.shape[0]

    @property
    def n_lambda(self) -> int:
        return self.T.shape[1]

    @property
    def T_r(self) -> np.ndarray:
        return self.T[:, self.permutation]

    @property
    def selected(self) -> np.ndarray:
        """Index into λ of the parameter each β equals."""
        return np.argmax(self.T, axis=1)

    @property
    def level_product(self) -> int:
        lv = {f.name: f.levels for f in self.factors}
        return int(np.prod([lv[n] for n in self.dropped])) if self.dropped else 1

    @property
    def q(self) -> int:
        """Y plus the factors that vanish from the logistic model."""
        return 1 + len(self.dropped)

    @property
    def n_lt(self) -> int:
        lv = {f.name: f.levels for f in self.factors}
        return int(np.prod([lv[n] for n in self.retained])) if self.retained else 1

    @property
    def n_ll(self) -> int:
        return int(np.prod([f.levels for f in self.factors]))

    def label_strings(self, which: str = "lambda") -> list[str]:
        labels = self.lambda_labels if which == "lambda" else self.beta_labels
        names = [f.name for f in self.factors]
        lv = dict(zip(names, (f.levels for f in self.factors)))
        out = []
        for facs, levels in labels:
            if not facs:
                out.append("Intercept")
                continue
            s = term_name(frozenset(facs), names)
            if any(lv[f] > 2 for f in facs):
                s += "[" + ",".join(map(str, levels)) + "]"
            out.append(s)
        return out

    def pairs(self) -> list[tuple[str, str]]:
        """(λ label, β label) for every β."""
        lam = self.label_strings("lambda")
        beta = self.label_strings("beta")
        return [(lam[j], beta[i]) for i, j in enumerate(self.selected)]

    def logistic_design(self, covariates: Sequence[str] | None = None):
        """Logistic design over ``covariates`` (default: the retained ones)."""
        names = self.retained if covariates is None else tuple(covariates)
        lv = {f.name: f.levels for f in self.factors}
        covs = tuple(FactorSpec(n, lv[n]) for n in names)
        n = int(np.prod([c.levels for c in covs])) if covs else 1
        skeleton = BinomialData(covs, np.ones(n, dtype=np.int64), np.zeros(n, dtype=np.int64),
                                outcome=self.outcome)
        return design_matrix(skeleton, self.logistic)

    def to_dict(self) -> dict:
        names = [f.name for f in self.factors]
        return {
            "outcome": self.outcome,
            "loglinear": self.loglinear.describe(names),
            "logistic": self.logistic.describe(names),
            "retained": list(self.retained),
            "dropped": list(self.dropped),
            "q": self.q,
            "n_beta": self.n_beta,
            "n_lambda": self.n_lambda,
            "pairs": [{"beta": b, "lambda": l} for l, b in self.pairs()],
        }


def build_map(loglinear: ModelFormula, outcome: str, factors: Sequence[FactorSpec]) -> LambdaBetaMap:
    factors = tuple(factors)
    names, levels = _names_levels(factors)
    if outcome not in names:
        raise CorrespondenceError(f"outcome {outcome!r} not among factors {names}")
    if dict(zip(names, levels))[outcome] != 2:
        raise CorrespondenceError(f"outcome {outcome!r} must be binary")
    missing = loglinear.factors - set(names)
    if missing:
        raise CorrespondenceError(f"formula uses unknown factor(s) {sorted(missing)}")
    logistic, term_map = loglinear_to_logistic(loglinear, outcome, factors)
    lam_labels = tuple(design_columns(loglinear, names, levels))
    covariate_names = [n for n in names if n != outcome]
    beta_labels = tuple(design_columns(logistic, covariate_names,
                                       [l for n, l in zip(names, levels) if n != outcome]))
    index = {lab: j for j, lab in enumerate(lam_labels)}
    T = np.zeros((len(beta_labels), len(lam_labels)))
    for i, (facs, lv) in enumerate(beta_labels):
        target = term_map[frozenset(facs)]
        ll_facs = term_factors(target, names)
        level_of = dict(zip(facs, lv))
        level_of[outcome] = 1
        T[i, index[(ll_facs, tuple(level_of[f] for f in ll_facs))]] = 1.0
    selected = np.argmax(T, axis=1)
    rest = np.setdiff1d(np.arange(len(lam_labels)), selected)
    perm = np.concatenate([selected, rest])
    retained = tuple(n for n in covariate_names if n in logistic.factors)
    dropped = tuple(n for n in covariate_names if n not in logistic.factors)
    T.setflags(write=False)
    return LambdaBetaMap(loglinear, logistic, outcome, factors, T, perm, lam_labels, beta_labels,
                         retained, dropped)


@dataclass(frozen=True, eq=False)
class RearrangedSystem:
    """X_rll = [[X*, B], [0, B]] with Y=1 rows first.

    ``row_order`` and the map's ``permutation`` take X_ll to X_rll. Inside
    each half the dropped factors cycle slowest, so ``X_star`` is the
    logistic design stacked ``level_product`` times.
    """

    X_rll: np.ndarray
    row_order: np.ndarray
    map: LambdaBetaMap

    @property
    def n_beta(self) -> int:
        return self.map.n_beta

    @property
    def half(self) -> int:
        return self.X_rll.shape[0] // 2

    @property
    def X_star(self) -> np.ndarray:
        return self.X_rll[: self.half, : self.n_beta]

    @property
    def B(self) -> np.ndarray:
        return self.X_rll[: self.half, self.n_beta:]

    def square_block(self) -> bool:
        """Whether B is square and invertible.

        True exactly when the Y-free part of the log-linear model is
        saturated in the covariates; H = 2(X*ᵀX*)⁻¹ holds either way.
        """
        B = self.B
        return B.shape[0] == B.shape[1] and np.linalg.matrix_rank(B) == B.shape[0]


def _design_array(X) -> np.ndarray:
    return np.asarray(getattr(X, "matrix", X), dtype=float)


def canonical_row_order(m: LambdaBetaMap) -> np.ndarray:
    """Cell order: Y descending, then dropped factors, then retained ones (last fastest)."""
    names = [f.name for f in m.factors]
    rows = level_tuples([f.levels for f in m.factors])
    pos = {n: i for i, n in enumerate(names)}
    # lexsort takes the last key as primary
    keys = [rows[:, pos[n]] for n in reversed(m.retained)]
    keys += [rows[:, pos[n]] for n in reversed(m.dropped)]
    keys.append(-rows[:, pos[m.outcome]])
    return np.lexsort(keys)


def rearrange(X_ll, m: LambdaBetaMap) -> RearrangedSystem:
    """Permute rows and columns of the log-linear design into block form."""
    M = _design_array(X_ll)
    if M.shape != (m.n_ll, m.n_lambda):
        raise CorrespondenceError(f"design is {M.shape}, expected {(m.n_ll, m.n_lambda)}")
    order = canonical_row_order(m)
    R = M[order][:, m.permutation]
    half, nb = m.n_ll // 2, m.n_beta
    X_lt = _design_array(m.logistic_design())
    problems = []
    if np.any(R[half:, :nb] != 0):
        problems.append("Y=0 rows load on Y-containing columns")
    if not np.array_equal(R[:half, nb:], R[half:, nb:]):
        problems.append("the two halves differ outside the Y-containing columns")
    if not np.array_equal(R[:half, :nb], np.tile(X_lt, (m.level_product, 1))):
        problems.append("X* is not the logistic design stacked level_product times")
    if problems:
        raise CorrespondenceError("block structure unattainable: " + "; ".join(problems))
    R.setflags(write=False)
    return RearrangedSystem(R, order, m)


def implied_beta_prior(lambda_prior: GPriorSpec, m: LambdaBetaMap, g: float | None = None) -> GPriorSpec:
    """Prior on β implied by the log-linear g-prior: mean Tm, sigma TΣTᵀ.

    With ``g`` given the returned law is ``Fixed(g)``; otherwise the λ
    prior's law carries over.
    """
    if lambda_prior.intercept_flat:
        return implied_beta_prior_flat_intercept(lambda_prior, m, g)
    if lambda_prior.dim != m.n_lambda:
        raise CorrespondenceError(f"prior has {lambda_prior.dim} coordinates, map expects {m.n_lambda}")
    sel = m.selected
    mean = m.T @ lambda_prior.mean
    sigma = lambda_prior.sigma[np.ix_(sel, sel)]
    law = Fixed(g) if g is not None else lambda_prior.g_law
    return GPriorSpec(mean, sigma.copy(), law, labels=tuple(m.label_strings("beta")))


def implied_beta_prior_flat_intercept(lambda_prior_flat: GPriorSpec, m: LambdaBetaMap,
                                      g: float | None = None) -> GPriorSpec:
    """Implied β prior when the log-linear intercept is flat.

    The flat prior covers λ without its intercept, which T never selects,
    so the map simply shifts by one coordinate.
    """
    if not lambda_prior_flat.intercept_flat:
        raise CorrespondenceError("expected a flat-intercept log-linear prior")
    if lambda_prior_flat.dim != m.n_lambda - 1:
        raise CorrespondenceError(f"prior has {lambda_prior_flat.dim} coordinates, "
                                  f"map expects {m.n_lambda - 1}")
    sel = m.selected - 1
    if np.any(sel < 0):
        raise CorrespondenceError("the map selects the log-linear intercept")
    mean = lambda_prior_flat.mean[sel]
    sigma = lambda_prior_flat.sigma[np.ix_(sel, sel)]
    law = Fixed(g) if g is not None else lambda_prior_flat.g_law
    return GPriorSpec(mean, sigma.copy(), law, labels=tuple(m.label_strings("beta")))


def h_block_paths(system: RearrangedSystem) -> dict[str, np.ndarray]:
    """The leading n_β block H of (X_rllᵀX_rll)⁻¹ computed three ways.

    ``direct``: invert the full Gram matrix and slice. ``schur``: the
    partitioned-inverse formula (A − C D⁻¹ Cᵀ)⁻¹ with A = X*ᵀX*,
    C = X*ᵀB, D = 2BᵀB. ``analytic``: 2(level_product · X_ltᵀX_lt)⁻¹.
    The last two agree because every column of X* is also a column of B.
    """
    m = system.map
    nb = m.n_beta
    X_star, B = system.X_star, system.B
    direct = inverse_gram(system.X_rll)[:nb, :nb]
    A = X_star.T @ X_star
    C = X_star.T @ B
    D = 2.0 * (B.T @ B)
    schur = np.linalg.inv(A - C @ np.linalg.solve(D, C.T))
    X_lt = _design_array(m.logistic_design())
    analytic = 2.0 * inverse_gram(X_lt) / m.level_product
    return {"direct": direct, "schur": 0.5 * (schur + schur.T), "analytic": analytic}


def verify_implied_prior(loglinear: ModelFormula, factors: Sequence[FactorSpec], outcome: str,
                    N: int = 1000, g: float | None = None) -> dict:
    """Check implied β covariance = 4 g (n_lt/N)(X_ltᵀX_lt)⁻¹ along each path.

    Failures are reported in the returned dict, never raised, except for
    a formula that cannot be mapped at all.
    """
    factors = tuple(factors)
    names = [f.name for f in factors]
    g = float(N) if g is None else float(g)
    report = {"model": loglinear.describe(names), "outcome": outcome,
              "dims": [f.levels for f in factors], "N": N, "g": g}
    try:
        m = build_map(loglinear, outcome, factors)
        skeleton = ContingencyTable(factors, np.zeros(m.n_ll, dtype=np.int64))
        system = rearrange(design_matrix(skeleton, loglinear), m)
        paths = h_block_paths(system)
        X_lt = _design_array(m.logistic_design())
        target = g * 4.0 * (m.n_lt / N) * inverse_gram(X_lt)
        scale = g * m.n_ll / N
        diffs = {k: _rel_diff(scale * H, target) for k, H in paths.items()}
        abs_diff = max(float(np.max(np.abs(scale * H - target))) for H in paths.values())
    except Exception as exc:  # noqa: BLE001 - reported, not raised
        report.update({"max_abs_diff": None, "max_rel_diff": None, "pass": False, "error": str(exc)})
        return report
    worst = max(diffs.values())
    report.update({"q": m.q, "n_beta": m.n_beta, "n_lambda": m.n_lambda,
                   "rel_diff": diffs, "max_rel_diff": worst, "max_abs_diff": abs_diff,
                   "pass": bool(worst < REL_TOL)})
    return report


def projection_identity_check(X_star, c: float) -> float:
    """max |(cI − P)(I/c + P/(c(c−1))) − I| with P the projection onto col(X*)."""
    if c in (0, 1):
        raise ValueError("c must differ from 0 and 1")
    X = np.asarray(X_star, dtype=float)
    # orthonormal basis keeps P accurate when X'X is poorly conditioned
    Q, _ = np.linalg.qr(X)
    P = Q @ Q.T
    eye = np.eye(X.shape[0])
    R = (c * eye - P) @ (eye / c + P / (c * (c - 1))) - eye
    return float(np.max(np.abs(R)))


def linear_predictor_gap(m: LambdaBetaMap, lambdas: np.ndarray) -> float:
    """Largest |log μ(Y=1) − log μ(Y=0) − X_lt(Tλ)| over cells and columns of ``lambdas``.

    ``lambdas`` is n_λ × k. The logistic design here spans every non-outcome
    factor, so dropped factors are checked too.
    """
    names = [f.name for f in m.factors]
    lam = np.asarray(lambdas, dtype=float)
    if lam.ndim == 1:
        lam = lam[:, None]
    skeleton = ContingencyTable(m.factors, np.zeros(m.n_ll, dtype=np.int64))
    X_ll = design_matrix(skeleton, m.loglinear).matrix
    rows = level_tuples([f.levels for f in m.factors])
    y = names.index(m.outcome)
    covariates = [n for n in names if n != m.outcome]
    X_lt = _design_array(m.logistic_design(covariates))
    # cells with Y=1 and Y=0 sharing covariate levels, in logistic row order
    one = np.flatnonzero(rows[:, y] == 1)
    zero = np.flatnonzero(rows[:, y] == 0)
    log_mu = X_ll @ lam
    gap = log_mu[one] - log_mu[zero] - X_lt @ (m.T @ lam)
    return float(np.max(np.abs(gap))) if gap.size else 0.0


# ---------------------------------------------------------------------------
# Exhaustive sweep
# ---------------------------------------------------------------------------

def sweep_instances(max_factors: int = 4, max_levels: int = 3,
                    outcome: str = "Y") -> Iterator[tuple[ModelFormula, tuple[FactorSpec, ...]]]:
    """Every hierarchical model containing ``outcome`` on every small table.

    Tables have 1 to ``max_factors`` factors; the outcome is binary and
    takes every position, the others have 2 to ``max_levels`` levels.
    """
    others = "ABCDEFG"
    for P in range(1, max_factors + 1):
        covs = list(others[: P - 1])
        models_by_pos = {}
        for ypos in range(P):
            names = covs[:ypos] + [outcome] + covs[ypos:]
            if ypos not in models_by_pos:
                models_by_pos[ypos] = list(enumerate_hierarchical(names, containing=[outcome]))
            for lv in product(range(2, max_levels + 1), repeat=P - 1):
                levels = list(lv[:ypos]) + [2] + list(lv[ypos:])
                factors = tuple(FactorSpec(n, l) for n, l in zip(names, levels))
                for f in models_by_pos[ypos]:
                    yield f, factors


def run_sweep(max_factors: int = 4, max_levels: int = 3, N: int = 1000,
              g: float | None = None, outcome: str = "Y") -> dict:
    """Run :func:`verify_implied_prior` on every instance of :func:`sweep_instances`."""
    start = time.perf_counter()
    reports = [verify_implied_prior(f, facs, outcome, N, g)
               for f, facs in sweep_instances(max_factors, max_levels, outcome)]
    worst = max((r["max_rel_diff"] for r in reports if r["max_rel_diff"] is not None), default=0.0)
    return {"instances": len(reports),
            "failures": [r for r in reports if not r["pass"]],
            "max_rel_diff": worst,
            "seconds": time.perf_counter() - start,
            "pass": all(r["pass"] for r in reports)}
