"""Popularity propensities and truncated per-instance sampling probabilities.

Propensity of an item is its observation count relative to the most frequent
item, raised to a power and clipped below at a floor. Instance sampling
probability is the max-normalized inverse propensity of its item, so the
rarest instance always gets probability 1. Probabilities at or above a
threshold epsilon are forced to 1 ("truncated"); the rest are kept as-is.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import ValidationError

DEFAULT_GAMMA = 0.5
DEFAULT_FLOOR = 0.01


@dataclass(frozen=True)
class PropensityTable:
    """Per-item propensities in (0,1] together with the estimator settings."""

    per_item_propensity: np.ndarray
    gamma: float
    floor: float

    def __post_init__(self):
        values = np.asarray(self.per_item_propensity, dtype=np.float64)
        object.__setattr__(self, "per_item_propensity", values)
        if values.ndim != 1 or len(values) == 0:
            raise ValidationError("propensity table must be a nonempty vector")
        if self.gamma < 0:
            raise ValidationError("gamma must be >= 0")
        if not 0.0 < self.floor <= 1.0:
            raise ValidationError("floor must lie in (0,1]")
        if values.min() < self.floor or values.max() > 1.0:
            raise ValidationError("propensities must lie in [floor, 1]")
        if values.max() != 1.0:
            raise ValidationError("the most frequent item must have propensity 1")


@dataclass(frozen=True)
class SampleProbTable:
    """Per-instance sampling probabilities after truncation at epsilon."""

    per_instance_prob: np.ndarray
    epsilon: float
    truncated: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.per_instance_prob, dtype=np.float64)
        flags = np.asarray(self.truncated, dtype=bool)
        object.__setattr__(self, "per_instance_prob", probs)
        object.__setattr__(self, "truncated", flags)
        if probs.shape != flags.shape:
            raise ValidationError("probabilities and flags must align")
        if len(probs) and (probs.min() <= 0.0 or probs.max() > 1.0):
            raise ValidationError("probabilities must lie in (0,1]")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValidationError("epsilon must lie in [0,1]")
        if len(probs) and not np.all(probs[flags] == 1.0):
            raise ValidationError("truncated entries must equal 1")


def estimate_popularity_propensity(
    d: Dataset, gamma: float = DEFAULT_GAMMA, floor: float = DEFAULT_FLOOR
) -> PropensityTable:
    """Propensity(v) = (count(v) / max_count)^gamma, clipped below at floor.

    Items never observed in ``d`` get the floor value.
    """
    if len(d) == 0:
        raise ValidationError("cannot estimate propensities on an empty dataset")
    if gamma < 0:
        raise ValidationError("gamma must be >= 0")
    if not 0.0 < floor <= 1.0:
        raise ValidationError("floor must lie in (0,1]")
    counts = np.bincount(d.items, minlength=d.n_items).astype(np.float64)
    values = np.power(counts / counts.max(), gamma)
    values[counts == 0] = floor
    np.clip(values, floor, 1.0, out=values)
    return PropensityTable(per_item_propensity=values, gamma=gamma, floor=floor)


def sampling_probabilities(d: Dataset, t: PropensityTable) -> np.ndarray:
    """Max-normalized inverse propensity per instance, in (0,1].

    The instance whose item has the lowest propensity gets probability 1;
    more exposed instances get proportionally smaller probabilities.
    """
    if len(d) and d.items.max() >= len(t.per_item_propensity):
        raise ValidationError(
            f"table covers {len(t.per_item_propensity)} items, "
            f"dataset references item {int(d.items.max())}"
        )
    inverse = 1.0 / t.per_item_propensity[d.items]
    if len(inverse) == 0:
        return inverse
    return inverse / inverse.max()


def truncate(p: np.ndarray, epsilon: float) -> SampleProbTable:
    """Force probabilities >= epsilon to 1, keep the rest unchanged."""
    p = np.asarray(p, dtype=np.float64)
    if len(p) and (p.min() <= 0.0 or p.max() > 1.0):
        raise ValidationError("probabilities must lie in (0,1]")
    if not 0.0 <= epsilon <= 1.0:
        raise ValidationError(f"epsilon must lie in [0,1], got {epsilon}")
    truncated = p >= epsilon
    return SampleProbTable(
        per_instance_prob=np.where(truncated, 1.0, p),
        epsilon=epsilon,
        truncated=truncated,
    )


def save_table(t: PropensityTable, path) -> None:
    """Write item<TAB>propensity lines."""
    with open(path, "w", encoding="utf-8") as handle:
        for item, value in enumerate(t.per_item_propensity):
            handle.write(f"{item}\t{float(value)!r}\n")
