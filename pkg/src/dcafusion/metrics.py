"""Agreement metrics between predicted and reference emotion tracks.

The concordance correlation coefficient (CCC) is the headline metric; it
penalizes both decorrelation and location/scale bias, unlike Pearson's r.
All moment estimators divide by N (biased form), which is the convention
in the affect-regression challenge literature.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["EmotionTrack", "ccc", "ccc_flagged", "pearson", "pearson_flagged", "evaluate"]

# Below this, variance + squared mean gap is treated as degenerate
# (both sequences constant with equal means).
_DEGENERATE_EPS = 1e-15


@dataclass(frozen=True)
class EmotionTrack:
    """Per-clip valence and arousal values for one sub-sequence."""

    valence: np.ndarray
    arousal: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.valence, dtype=np.float64)
        a = np.asarray(self.arousal, dtype=np.float64)
        if v.ndim != 1 or a.ndim != 1:
            raise ValueError("valence and arousal must be 1-D sequences")
        if v.shape != a.shape or v.size < 1:
            raise ValueError(
                f"valence/arousal lengths must match and be >= 1, got {v.size} and {a.size}"
            )
        object.__setattr__(self, "valence", v)
        object.__setattr__(self, "arousal", a)

    @property
    def length(self) -> int:
        return self.valence.size

    @classmethod
    def from_matrix(cls, pred) -> "EmotionTrack":
        """Build a track from a 2 x L prediction matrix (row 0 valence, row 1 arousal)."""
        data = np.asarray(pred.data if hasattr(pred, "data") else pred, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] != 2:
            raise ValueError(f"expected a 2 x L matrix, got shape {data.shape}")
        return cls(data[0].copy(), data[1].copy())


def _as_pair(pred, gold):
    x = np.asarray(pred, dtype=np.float64).ravel()
    y = np.asarray(gold, dtype=np.float64).ravel()
    if x.size != y.size:
        raise ValueError(f"sequence lengths differ: {x.size} vs {y.size}")
    if x.size < 2:
        raise ValueError(f"need at least 2 samples, got {x.size}")
    return x, y


def ccc_flagged(pred, gold) -> tuple[float, bool]:
    """Concordance correlation plus a flag marking degenerate input.

    Returns ``(0.0, True)`` when both sequences are constant with equal
    means (denominator below 1e-15), which can legitimately happen early
    in training.
    """
    x, y = _as_pair(pred, gold)
    mx, my = x.mean(), y.mean()
    xc, yc = x - mx, y - my
    sx2 = float(np.mean(xc * xc))
    sy2 = float(np.mean(yc * yc))
    sxy = float(np.mean(xc * yc))
    den = sx2 + sy2 + (mx - my) ** 2
    if den < _DEGENERATE_EPS:
        return 0.0, True
    return 2.0 * sxy / den, False


def ccc(pred, gold) -> float:
    """Concordance correlation coefficient, 2*cov / (var_x + var_y + (mean gap)^2)."""
    value, _ = ccc_flagged(pred, gold)
    return value


def pearson_flagged(pred, gold) -> tuple[float, bool]:
    """Pearson correlation plus a degenerate flag for constant inputs."""
    x, y = _as_pair(pred, gold)
    xc, yc = x - x.mean(), y - y.mean()
    sx2 = float(np.mean(xc * xc))
    sy2 = float(np.mean(yc * yc))
    if sx2 < _DEGENERATE_EPS or sy2 < _DEGENERATE_EPS:
        return 0.0, True
    return float(np.mean(xc * yc)) / np.sqrt(sx2 * sy2), False


def pearson(pred, gold) -> float:
    value, _ = pearson_flagged(pred, gold)
    return value


def evaluate(
    preds: list[EmotionTrack], golds: list[EmotionTrack], per_track: bool = False
) -> tuple[float, float]:
    """Score predicted tracks against references, one CCC per dimension.

    The default concatenates all tracks per dimension into one long
    sequence before scoring (challenge-evaluation convention). With
    ``per_track=True`` the mean of per-track CCCs is returned instead.
    """
    if len(preds) != len(golds):
        raise ValueError(f"track counts differ: {len(preds)} vs {len(golds)}")
    if not preds:
        raise ValueError("need at least one track")
    for p, g in zip(preds, golds):
        if p.length != g.length:
            raise ValueError(f"track lengths differ: {p.length} vs {g.length}")
    if per_track:
        vals = [ccc(p.valence, g.valence) for p, g in zip(preds, golds)]
        aros = [ccc(p.arousal, g.arousal) for p, g in zip(preds, golds)]
        return float(np.mean(vals)), float(np.mean(aros))
    pv = np.concatenate([p.valence for p in preds])
    gv = np.concatenate([g.valence for g in golds])
    pa = np.concatenate([p.arousal for p in preds])
    ga = np.concatenate([g.arousal for g in golds])
    return ccc(pv, gv), ccc(pa, ga)
