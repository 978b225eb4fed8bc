"""Posterior summaries: means, batch-means MCSE and equal-tailed intervals."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MIN_KEPT = 1000


class SummaryError(ValueError):
    pass


def batch_means_mcse(draws: np.ndarray, n_batches: int | None = None) -> np.ndarray:
    """Monte Carlo standard error of the column means by non-overlapping batch means.

    Uses ``floor(sqrt(n))`` batches by default; trailing draws that do not
    fill a batch are dropped.
    """
    draws = np.asarray(draws, dtype=float)
    if draws.ndim == 1:
        draws = draws[:, None]
    n = draws.shape[0]
    nb = int(np.floor(np.sqrt(n))) if n_batches is None else int(n_batches)
    size = n // nb
    if nb < 2 or size < 1:
        raise SummaryError(f"too few draws ({n}) for batch means")
    means = draws[: nb * size].reshape(nb, size, -1).mean(axis=1)
    return means.std(axis=0, ddof=1) / np.sqrt(nb)


@dataclass
class PosteriorSummary:
    labels: list[str]
    mean: np.ndarray
    sd: np.ndarray
    mcse: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float = 0.95
    deviance_at_mean: float | None = None
    deviance_at_mle: float | None = None
    extra: dict = field(default_factory=dict)

    def index(self, label: str) -> int:
        return self.labels.index(label)

    def interval(self, label: str) -> tuple[float, float]:
        j = self.index(label)
        return float(self.lower[j]), float(self.upper[j])

    def to_dict(self) -> dict:
        return {
            "level": self.level,
            "parameters": [
                {"label": lab, "mean": float(m), "sd": float(s), "mcse": float(e),
                 "lower": float(lo), "upper": float(hi)}
                for lab, m, s, e, lo, hi in zip(self.labels, self.mean, self.sd, self.mcse,
                                                self.lower, self.upper)
            ],
            "deviance_at_mean": self.deviance_at_mean,
            "deviance_at_mle": self.deviance_at_mle,
            **self.extra,
        }

    def format_table(self, per_row: int = 8) -> str:
        """Rows of labels over rows of ``(lower,upper)`` intervals, two decimals."""
        cells = [(lab, f"({lo:.2f},{hi:.2f})") for lab, lo, hi in zip(self.labels, self.lower, self.upper)]
        lines = []
        for i in range(0, len(cells), per_row):
            chunk = cells[i:i + per_row]
            width = [max(len(a), len(b)) for a, b in chunk]
            lines.append("  ".join(a.center(w) for (a, _), w in zip(chunk, width)))
            lines.append("  ".join(b.center(w) for (_, b), w in zip(chunk, width)))
        return "\n".join(lines)


def summarize(chain, level: float = 0.95, labels=None) -> PosteriorSummary:
    """Summarize a Chain (or a plain draws matrix) with equal-tailed intervals."""
    draws = np.asarray(getattr(chain, "draws", chain), dtype=float)
    if draws.ndim == 1:
        draws = draws[:, None]
    if draws.shape[0] < MIN_KEPT:
        raise SummaryError(f"need at least {MIN_KEPT} kept draws, got {draws.shape[0]}")
    if not 0 < level < 1:
        raise SummaryError("level must lie in (0, 1)")
    if labels is None:
        labels = list(getattr(chain, "labels", [f"theta[{j}]" for j in range(draws.shape[1])]))
    alpha = (1 - level) / 2
    lo, hi = np.quantile(draws, [alpha, 1 - alpha], axis=0, method="linear")
    return PosteriorSummary(
        labels=list(labels),
        mean=draws.mean(axis=0),
        sd=draws.std(axis=0, ddof=1),
        mcse=batch_means_mcse(draws),
        lower=lo,
        upper=hi,
        level=level,
    )
