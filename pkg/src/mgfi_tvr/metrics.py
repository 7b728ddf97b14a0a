"""Retrieval metrics: R@K, median rank and mean rank."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

KS = (1, 5, 10)


def rank_of_truth(scores, truth: int) -> int:
    """1 + number of gallery entries scoring strictly above the truth.

    Ties resolve in favour of the truth, which keeps ranks deterministic.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1 or scores.size == 0:
        raise ValueError("scores must be a non-empty vector")
    return 1 + int(np.count_nonzero(scores > scores[truth]))


def ranks_from_matrix(scores: np.ndarray) -> np.ndarray:
    """Rank of the diagonal entry of every row."""
    scores = np.asarray(scores, dtype=np.float64)
    diag = np.diag(scores)[:, None]
    return 1 + np.count_nonzero(scores > diag, axis=1)


@dataclass
class RetrievalReport:
    direction: str
    r_at: dict
    mdr: float
    mnr: float
    ranks: list = field(repr=False)

    def as_record(self, **extra) -> str:
        """One line of ``key=value`` pairs."""
        fields = {**extra, "direction": self.direction}
        for k in KS:
            fields[f"R@{k}"] = f"{self.r_at[k]:.4f}"
        fields["MdR"] = f"{self.mdr:.1f}"
        fields["MnR"] = f"{self.mnr:.4f}"
        fields["queries"] = len(self.ranks)
        return " ".join(f"{k}={v}" for k, v in fields.items())

    def summary(self) -> str:
        r = "  ".join(f"R@{k} {self.r_at[k]:6.2f}" for k in KS)
        return f"{self.direction}: {r}  MdR {self.mdr:.1f}  MnR {self.mnr:.2f}"


def report_from_ranks(ranks, direction: str) -> RetrievalReport:
    ranks = np.asarray(ranks, dtype=np.int64)
    r_at = {k: 100.0 * float(np.mean(ranks <= k)) for k in KS}
    return RetrievalReport(
        direction=direction,
        r_at=r_at,
        mdr=float(np.median(ranks)),
        mnr=float(np.mean(ranks)),
        ranks=ranks.tolist(),
    )


def evaluate(m, direction: str = "t2v") -> RetrievalReport:
    """Score a square ``[video, text]`` matrix whose diagonal is the truth.

    ``t2v`` lets every caption (column) query all videos; ``v2t`` lets every
    video (row) query all captions.
    """
    fused = np.asarray(getattr(m, "fused", m), dtype=np.float64)
    if fused.ndim != 2 or fused.shape[0] != fused.shape[1]:
        raise ValueError(f"need a square score matrix, got {fused.shape}")
    if direction == "t2v":
        ranks = ranks_from_matrix(fused.T)
    elif direction == "v2t":
        ranks = ranks_from_matrix(fused)
    else:
        raise ValueError(f"direction must be t2v or v2t, got {direction!r}")
    return report_from_ranks(ranks, direction)
