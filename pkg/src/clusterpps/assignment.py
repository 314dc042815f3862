"""Symmetric treatment assignment over sampled clusters.

Only fixed-count complete randomization is implemented: given the sampled
clusters, each of the possible arm labelings with exactly ``n_treated``
treated clusters is equally likely. Stratified assignment randomizes
independently within each stratum. Treated counts are design constants,
never random.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class TreatmentAssignment:
    """Arm labels for sampled clusters: 1 = treated, 0 = control."""

    arms: tuple[tuple[int, int], ...]
    treated_by_stratum: tuple[tuple[str, int], ...] | None = None

    def __post_init__(self):
        seen = set()
        for c, t in self.arms:
            if t not in (0, 1):
                raise ValidationError(f"arm for cluster {c} must be 0 or 1")
            if c in seen:
                raise ValidationError(f"cluster {c} assigned twice")
            seen.add(c)

    def arm_of(self, c: int) -> int:
        for idx, t in self.arms:
            if idx == c:
                return t
        raise ValidationError(f"cluster {c} is not in the sample")

    def as_dict(self) -> dict[int, int]:
        return dict(self.arms)

    def arm_indices(self, t: int) -> tuple[int, ...]:
        return tuple(c for c, arm in self.arms if arm == t)

    def count(self, t: int) -> int:
        return sum(1 for _, arm in self.arms if arm == t)


def assign_completely_random(
    sampled: Sequence[int], n_treated: int, rng: np.random.Generator
) -> TreatmentAssignment:
    """Uniformly choose which ``n_treated`` of the sampled clusters get treatment.

    Both arms must be nonempty: every estimator divides by the arm counts.
    """
    s = len(sampled)
    if not 1 <= n_treated <= s - 1:
        raise ValidationError(
            f"n_treated={n_treated} must lie in [1, {s - 1}] so both arms "
            "are nonempty"
        )
    treated_pos = set(int(i) for i in rng.choice(s, size=n_treated, replace=False))
    arms = tuple(
        (int(c), 1 if pos in treated_pos else 0) for pos, c in enumerate(sampled)
    )
    return TreatmentAssignment(arms)


def assign_stratified(
    samples_by_stratum: Mapping[str, Sequence[int]],
    treated_by_stratum: Mapping[str, int] | int,
    rng: np.random.Generator,
) -> TreatmentAssignment:
    """Independent complete randomization within each stratum.

    ``treated_by_stratum`` may be a single count applied to every stratum.
    Strata are processed in mapping order so a fixed RNG state yields a
    fixed assignment.
    """
    arms: list[tuple[int, int]] = []
    counts: list[tuple[str, int]] = []
    for label, sampled in samples_by_stratum.items():
        if isinstance(treated_by_stratum, int):
            k = treated_by_stratum
        else:
            if label not in treated_by_stratum:
                raise ValidationError(f"no treated count for stratum {label!r}")
            k = treated_by_stratum[label]
        if len(sampled) < 2:
            raise ValidationError(
                f"stratum {label!r} has {len(sampled)} sampled clusters; "
                "need at least 2 for both arms"
            )
        sub = assign_completely_random(sampled, k, rng)
        arms.extend(sub.arms)
        counts.append((label, k))
    return TreatmentAssignment(tuple(arms), treated_by_stratum=tuple(counts))
