"""Finite-population potential-outcomes data model.

A population is a fixed set of clusters; every unit carries both potential
outcomes (response under treatment and under control), so population-level
quantities such as the average treatment effect and its variance components
can be computed exactly. Populations are immutable after construction and
safe to share across replicate workers.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from math import isfinite
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ValidationError

FRAME_HEADER = ["cluster_id", "stratum", "unit_stratum", "y1", "y0"]


@dataclass(frozen=True)
class Cluster:
    """One cluster: an ordered list of units with both potential outcomes.

    Parameters
    ----------
    cid : str
        Opaque cluster identifier (unique within a population).
    y1, y0 : array-like of float
        Potential outcomes under treatment and control, one entry per unit.
    stratum : str, optional
        Cluster-level stratum label.
    unit_strata : sequence of str, optional
        Per-unit stratum labels for unit-stratified designs. When present,
        there must be one label per unit.
    """

    cid: str
    y1: np.ndarray
    y0: np.ndarray
    stratum: str | None = None
    unit_strata: tuple[str, ...] | None = None

    def __post_init__(self):
        y1 = np.asarray(self.y1, dtype=float)
        y0 = np.asarray(self.y0, dtype=float)
        y1.setflags(write=False)
        y0.setflags(write=False)
        object.__setattr__(self, "y1", y1)
        object.__setattr__(self, "y0", y0)
        if y1.ndim != 1 or y0.ndim != 1:
            raise ValidationError(f"cluster {self.cid!r}: outcomes must be 1-D")
        if len(y1) != len(y0):
            raise ValidationError(
                f"cluster {self.cid!r}: y1 has {len(y1)} units, y0 has {len(y0)}"
            )
        if len(y1) == 0:
            raise ValidationError(f"cluster {self.cid!r}: empty cluster")
        if not (np.isfinite(y1).all() and np.isfinite(y0).all()):
            raise ValidationError(f"cluster {self.cid!r}: non-finite outcome")
        if self.unit_strata is not None:
            labels = tuple(str(v) for v in self.unit_strata)
            if len(labels) != len(y1):
                raise ValidationError(
                    f"cluster {self.cid!r}: {len(labels)} unit-stratum labels "
                    f"for {len(y1)} units"
                )
            if any(lab == "" for lab in labels):
                raise ValidationError(
                    f"cluster {self.cid!r}: blank unit-stratum label; either "
                    "all units carry a label or none do"
                )
            object.__setattr__(self, "unit_strata", labels)

    @property
    def size(self) -> int:
        return len(self.y1)

    def outcomes(self, t: int) -> np.ndarray:
        """Potential-outcome vector for arm ``t`` (0 or 1)."""
        if t not in (0, 1):
            raise ValidationError(f"treatment arm must be 0 or 1, got {t!r}")
        return self.y1 if t == 1 else self.y0

    def unit_stratum_sizes(self) -> dict[str, int]:
        """Unit counts per unit-stratum label (empty dict when unstratified)."""
        if self.unit_strata is None:
            return {}
        sizes: dict[str, int] = {}
        for lab in self.unit_strata:
            sizes[lab] = sizes.get(lab, 0) + 1
        return sizes


class Population:
    """Immutable finite population of clusters.

    File order defines the canonical cluster index ``c = 0..n_clusters-1``.
    """

    def __init__(self, clusters: Sequence[Cluster]):
        clusters = tuple(clusters)
        if len(clusters) < 1:
            raise ValidationError("population needs at least one cluster")
        seen: set[str] = set()
        for cl in clusters:
            if cl.cid in seen:
                raise ValidationError(f"duplicate cluster id {cl.cid!r}")
            seen.add(cl.cid)
        self._clusters = clusters
        self._sizes = np.array([cl.size for cl in clusters], dtype=np.int64)
        self._sizes.setflags(write=False)

    # ------------------------------------------------------------------
    # Structure
    # ------------------------------------------------------------------

    @property
    def clusters(self) -> tuple[Cluster, ...]:
        return self._clusters

    @property
    def n_clusters(self) -> int:
        return len(self._clusters)

    @property
    def n_units(self) -> int:
        return int(self._sizes.sum())

    @property
    def sizes(self) -> np.ndarray:
        """Cluster sizes ``n_c`` as a read-only integer vector."""
        return self._sizes

    def __len__(self) -> int:
        return self.n_clusters

    def __getitem__(self, c: int) -> Cluster:
        return self._clusters[c]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Population):
            return NotImplemented
        if self.n_clusters != other.n_clusters:
            return False
        for a, b in zip(self._clusters, other._clusters):
            if a.cid != b.cid or a.stratum != b.stratum:
                return False
            if a.unit_strata != b.unit_strata:
                return False
            if not (np.array_equal(a.y1, b.y1) and np.array_equal(a.y0, b.y0)):
                return False
        return True

    # ------------------------------------------------------------------
    # Strata
    # ------------------------------------------------------------------

    @property
    def cluster_strata(self) -> tuple[str | None, ...]:
        return tuple(cl.stratum for cl in self._clusters)

    def strata_labels(self) -> list[str]:
        """Distinct cluster-stratum labels, in order of first appearance."""
        labels: list[str] = []
        for cl in self._clusters:
            if cl.stratum is not None and cl.stratum not in labels:
                labels.append(cl.stratum)
        return labels

    def is_stratified(self) -> bool:
        return any(cl.stratum is not None for cl in self._clusters)

    def stratum_indices(self, label: str) -> list[int]:
        return [c for c, cl in enumerate(self._clusters) if cl.stratum == label]

    def stratum_view(self, label: str) -> tuple[list[int], "Population"]:
        """The clusters of one stratum as a standalone population.

        Returns the original cluster indices and a population over just those
        clusters (stratum-local index order = frame order).
        """
        idx = self.stratum_indices(label)
        if not idx:
            raise ValidationError(f"no clusters in stratum {label!r}")
        return idx, Population([self._clusters[c] for c in idx])

    def stratum_unit_counts(self) -> dict[str, int]:
        """Total unit count ``n_u`` per cluster stratum."""
        counts: dict[str, int] = {}
        for cl in self._clusters:
            if cl.stratum is None:
                raise ValidationError(
                    f"cluster {cl.cid!r} has no stratum label; cannot form strata"
                )
            counts[cl.stratum] = counts.get(cl.stratum, 0) + cl.size
        return counts

    # ------------------------------------------------------------------
    # Exact population quantities
    # ------------------------------------------------------------------

    def cluster_means(self, t: int) -> np.ndarray:
        """Within-cluster means of arm-``t`` potential outcomes."""
        return np.array([cl.outcomes(t).mean() for cl in self._clusters])

    def mean(self, t: int) -> float:
        """Population mean of arm-``t`` potential outcomes."""
        total = sum(float(cl.outcomes(t).sum()) for cl in self._clusters)
        return total / self.n_units

    def pate(self) -> float:
        """Population average treatment effect: mean of unit-level contrasts."""
        total = 0.0
        for cl in self._clusters:
            total += float((cl.y1 - cl.y0).sum())
        return total / self.n_units

    def within_variances(self, t: int) -> np.ndarray:
        """Per-cluster variance of arm-``t`` outcomes (denominator n_c - 1).

        Singleton clusters report 0: they contribute no within-cluster
        sampling variance because any sample of them is a census.
        """
        out = np.zeros(self.n_clusters)
        for c, cl in enumerate(self._clusters):
            if cl.size >= 2:
                out[c] = float(np.var(cl.outcomes(t), ddof=1))
        return out

    def between_variance(self, t: int) -> float:
        """Size-weighted across-cluster variance of arm-``t`` cluster means."""
        mu_ct = self.cluster_means(t)
        mu_t = self.mean(t)
        w = self._sizes / self.n_units
        return float(np.sum(w * (mu_ct - mu_t) ** 2))

    # ------------------------------------------------------------------
    # Transformations
    # ------------------------------------------------------------------

    def shift(self, a: float) -> "Population":
        """Location shift: every potential outcome becomes ``a + y``."""
        return Population(
            [
                Cluster(cl.cid, a + cl.y1, a + cl.y0, cl.stratum, cl.unit_strata)
                for cl in self._clusters
            ]
        )


# ----------------------------------------------------------------------
# Cluster-frame file I/O
# ----------------------------------------------------------------------


def load_population(source) -> Population:
    """Parse a cluster-frame file into a population.

    The frame is comma-separated text with header
    ``cluster_id,stratum,unit_stratum,y1,y0``, one row per unit. Rows for
    the same cluster must be contiguous; ``stratum`` and ``unit_stratum``
    may be empty. Errors name the offending file line.

    Parameters
    ----------
    source : path-like or text file object
    """
    if hasattr(source, "read"):
        return _parse_frame(source)
    with open(source, "r", newline="") as fh:
        return _parse_frame(fh)


def _parse_frame(fh) -> Population:
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise ValidationError("empty cluster frame") from None
    header = [h.strip() for h in header]
    if header != FRAME_HEADER:
        raise ValidationError(
            f"line 1: expected header {','.join(FRAME_HEADER)!r}, "
            f"got {','.join(header)!r}"
        )

    clusters: list[Cluster] = []
    finished: set[str] = set()
    cur_id: str | None = None
    cur_stratum: str | None = None
    cur_y1: list[float] = []
    cur_y0: list[float] = []
    cur_units: list[str] = []

    def flush():
        nonlocal cur_id
        if cur_id is None:
            return
        labels = tuple(cur_units) if any(u != "" for u in cur_units) else None
        if labels is not None and any(u == "" for u in cur_units):
            raise ValidationError(
                f"cluster {cur_id!r}: some units have a unit_stratum label "
                "and others do not"
            )
        clusters.append(Cluster(cur_id, cur_y1, cur_y0, cur_stratum, labels))
        finished.add(cur_id)
        cur_id = None

    for lineno, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and row[0].strip() == ""):
            continue
        if len(row) != 5:
            raise ValidationError(f"line {lineno}: expected 5 fields, got {len(row)}")
        cid, stratum, unit_stratum, y1s, y0s = (f.strip() for f in row)
        if cid == "":
            raise ValidationError(f"line {lineno}: empty cluster_id")
        if y1s == "":
            raise ValidationError(f"line {lineno}: missing y1 value")
        if y0s == "":
            raise ValidationError(f"line {lineno}: missing y0 value")
        try:
            y1 = float(y1s)
            y0 = float(y0s)
        except ValueError:
            raise ValidationError(f"line {lineno}: malformed outcome value") from None
        if not (isfinite(y1) and isfinite(y0)):
            raise ValidationError(f"line {lineno}: non-finite outcome value")
        if cid != cur_id:
            if cid in finished:
                raise ValidationError(
                    f"line {lineno}: rows for cluster {cid!r} are not contiguous"
                )
            flush()
            cur_id = cid
            cur_stratum = stratum or None
            cur_y1, cur_y0, cur_units = [], [], []
        elif (stratum or None) != cur_stratum:
            raise ValidationError(
                f"line {lineno}: cluster {cid!r} changes stratum mid-block"
            )
        cur_y1.append(y1)
        cur_y0.append(y0)
        cur_units.append(unit_stratum)

    flush()
    if not clusters:
        raise ValidationError("cluster frame contains no data rows")
    return Population(clusters)


def save_population(pop: Population, target) -> None:
    """Write a population in the cluster-frame format.

    Outcomes are written with ``repr`` so that a load/save round trip
    preserves every float bit-for-bit.
    """
    if hasattr(target, "write"):
        _write_frame(pop, target)
    else:
        with open(target, "w", newline="") as fh:
            _write_frame(pop, fh)


def _write_frame(pop: Population, fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(FRAME_HEADER)
    for cl in pop.clusters:
        for k in range(cl.size):
            unit_lab = cl.unit_strata[k] if cl.unit_strata is not None else ""
            writer.writerow(
                [
                    cl.cid,
                    cl.stratum or "",
                    unit_lab,
                    repr(float(cl.y1[k])),
                    repr(float(cl.y0[k])),
                ]
            )


def frame_to_string(pop: Population) -> str:
    buf = io.StringIO()
    _write_frame(pop, buf)
    return buf.getvalue()


# ----------------------------------------------------------------------
# Synthetic populations
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a deterministic synthetic population.

    Cluster sizes are drawn uniformly on ``[size_min, size_max]`` unless
    ``sizes`` is given. Control outcomes are
    ``baseline + baseline_size_slope * n_c + noise`` and the unit-level
    treatment effect is ``effect + effect_size_slope * n_c``, so a nonzero
    ``effect_size_slope`` makes effects strictly monotone in cluster size
    (the regime in which pooled-mean estimators are biased).

    When ``target_s`` is supplied, generated sizes are checked against the
    proportional-sampling feasibility constraint ``n_c <= n / target_s``.
    ``clip`` optionally bounds outcomes to an interval after generation,
    for bounded (e.g. proportion-like) responses.
    """

    n_clusters: int
    size_min: int
    size_max: int
    seed: int
    baseline: float = 0.0
    baseline_size_slope: float = 0.0
    effect: float = 0.0
    effect_size_slope: float = 0.0
    noise_sd: float = 0.0
    target_s: int | None = None
    sizes: tuple[int, ...] | None = None
    clip: tuple[float, float] | None = None

    def __post_init__(self):
        if self.sizes is None:
            if self.n_clusters < 1:
                raise ValidationError("n_clusters must be >= 1")
            if not (1 <= self.size_min <= self.size_max):
                raise ValidationError("need 1 <= size_min <= size_max")
        else:
            object.__setattr__(self, "sizes", tuple(int(v) for v in self.sizes))
            if len(self.sizes) != self.n_clusters:
                raise ValidationError("sizes length must equal n_clusters")
            if min(self.sizes) < 1:
                raise ValidationError("explicit sizes must be >= 1")
        if self.noise_sd < 0:
            raise ValidationError("noise_sd must be >= 0")
        if self.target_s is not None and self.target_s < 1:
            raise ValidationError("target_s must be >= 1")


def generate_synthetic(spec: SyntheticSpec) -> Population:
    """Generate a population from a spec; identical seeds give identical data."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(spec.seed)))
    if spec.sizes is not None:
        sizes = np.array(spec.sizes, dtype=np.int64)
    else:
        sizes = rng.integers(spec.size_min, spec.size_max + 1, size=spec.n_clusters)
    if spec.target_s is not None:
        n = int(sizes.sum())
        if sizes.max() * spec.target_s > n:
            raise ValidationError(
                f"infeasible sizes for target_s={spec.target_s}: largest cluster "
                f"has {int(sizes.max())} units but n/s = {n / spec.target_s:.3f}"
            )
    clusters = []
    for c, n_c in enumerate(sizes):
        n_c = int(n_c)
        noise = rng.normal(0.0, spec.noise_sd, n_c) if spec.noise_sd > 0 else 0.0
        y0 = spec.baseline + spec.baseline_size_slope * n_c + noise
        y0 = np.broadcast_to(np.asarray(y0, dtype=float), (n_c,)).copy()
        y1 = y0 + spec.effect + spec.effect_size_slope * n_c
        if spec.clip is not None:
            lo, hi = spec.clip
            y0 = np.clip(y0, lo, hi)
            y1 = np.clip(y1, lo, hi)
        clusters.append(Cluster(f"c{c + 1}", y1, y0))
    return Population(clusters)
