"""Per-sample symmetry pseudo-labels from latent-space neighborhoods.

For each sample: find its k nearest neighbors in the invariant latent space
(Euclidean distance, self excluded, ties broken by ascending id), collect the
neighbors' estimated rotation angles, and apply a closed-form estimator for the
configured symmetry family.

Estimators:
  uniform   method of moments on |angles|: 2 * mean, after 2-sigma trimming
  gaussian  half-normal first moment inverted: mean(|angles|) * sqrt(pi/2)
            (a paper-literal variant, std / (1 - 2/pi), is kept as an opt-in
            mode; it is biased and reported as such)
  cyclic    KL divergence between the 360-bin angle histogram and smoothed
            cyclic-group templates, minimized over orders 1..8
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .angles import CYCLIC, GAUSSIAN, UNIFORM, cyclic_elements
from .persist import write_manifest
from .training import EmbeddingTable

DEFAULT_NEIGHBORS = {UNIFORM: 45, GAUSSIAN: 45, CYCLIC: 150}
DEFAULT_ORDER_RANGE = tuple(range(1, 9))
KL_SMOOTHING = 1e-4


@dataclass
class NeighborIndex:
    """Brute-force nearest-neighbor index over invariant embeddings."""

    ids: np.ndarray       # (N,) int sample ids
    latents: np.ndarray   # (N, d) float
    metric: str = "euclidean"

    def __post_init__(self) -> None:
        if len(self.ids) != len(self.latents):
            raise ValueError("ids and latent rows must have equal length")
        order = np.argsort(self.ids, kind="stable")
        self.ids = np.asarray(self.ids)[order]
        self.latents = np.asarray(self.latents, dtype=np.float64)[order]
        self._row_of = {int(s): i for i, s in enumerate(self.ids)}

    def __len__(self) -> int:
        return len(self.ids)

    def query(self, sample_id: int, k: int) -> np.ndarray:
        """Ids of the k nearest neighbors of `sample_id`, excluding itself."""
        if k >= len(self):
            raise ValueError(f"k={k} must be smaller than the index size {len(self)}")
        row = self._row_of[int(sample_id)]
        deltas = self.latents - self.latents[row]
        dists = np.sqrt(np.sum(deltas * deltas, axis=1))
        dists[row] = np.inf  # never return the query itself
        order = np.lexsort((self.ids, dists))
        return self.ids[order[:k]].copy()


def knn(index: NeighborIndex, sample_id: int, k: int) -> np.ndarray:
    return index.query(sample_id, k)


def filter_outliers(abs_angles) -> np.ndarray:
    """Drop values more than two population standard deviations from the mean.

    Never empties the input: if everything would be dropped (or the spread is
    zero), the input is returned unchanged.
    """
    values = np.asarray(abs_angles, dtype=np.float64)
    if values.size == 0:
        raise ValueError("cannot filter an empty sample")
    mean = values.mean()
    std = values.std()
    if std == 0.0:
        return values.copy()
    kept = values[np.abs(values - mean) <= 2.0 * std]
    if kept.size == 0:
        return values.copy()
    return kept


def estimate_uniform(abs_angles) -> float:
    """Method-of-moments half-width: two times the trimmed mean, in [0, 180]."""
    values = np.asarray(abs_angles, dtype=np.float64)
    if values.size == 0:
        raise ValueError("cannot estimate from an empty sample")
    theta = 2.0 * filter_outliers(values).mean()
    return float(np.clip(theta, 0.0, 180.0))


def estimate_gaussian(abs_angles, literal: bool = False) -> float:
    """Standard deviation of the underlying centered normal from |angles|.

    Default mode inverts the half-normal first moment: mean * sqrt(pi/2).
    The literal mode divides the sample standard deviation by (1 - 2/pi); for
    a half-normal sample its expectation is sigma / sqrt(1 - 2/pi), roughly a
    +66% bias, and it exists only for side-by-side comparison.
    """
    values = np.asarray(abs_angles, dtype=np.float64)
    if values.size == 0:
        raise ValueError("cannot estimate from an empty sample")
    if literal:
        return float(values.std() / (1.0 - 2.0 / math.pi))
    return float(values.mean() * math.sqrt(math.pi / 2.0))


def angle_bin(angle: float) -> int:
    """1-degree bin index over (-180, 180]: bin i covers (i - 180, i - 179]."""
    idx = int(math.ceil(angle)) + 179
    return min(max(idx, 0), 359)


def _cyclic_template(n: int) -> np.ndarray:
    q = np.full(360, KL_SMOOTHING, dtype=np.float64)
    for element in cyclic_elements(n):
        q[angle_bin(element)] += 1.0 / n
    return q / q.sum()


def estimate_cyclic(angles, order_range=DEFAULT_ORDER_RANGE) -> int:
    """Order of the cyclic group whose smoothed template is KL-closest.

    The sample histogram uses 360 one-degree bins over (-180, 180]; templates
    place mass 1/n on the bins holding the group elements plus a uniform
    smoothing floor. Ties resolve to the smallest order.
    """
    values = np.asarray(angles, dtype=np.float64)
    if values.size == 0:
        raise ValueError("cannot estimate from an empty sample")
    max_order = max(order_range)
    if values.size < 2 * max_order:
        warnings.warn(
            f"cyclic estimation from only {values.size} angles "
            f"(recommended at least {2 * max_order})",
            stacklevel=2,
        )
    hist = np.zeros(360, dtype=np.float64)
    for a in values:
        hist[angle_bin(a)] += 1.0
    p = hist / hist.sum()
    support = p > 0
    best_n, best_div = None, np.inf
    for n in sorted(order_range):
        q = _cyclic_template(n)
        div = float(np.sum(p[support] * np.log(p[support] / q[support])))
        if div < best_div - 1e-12:
            best_div = div
            best_n = n
    return int(best_n)


@dataclass(frozen=True)
class Estimate:
    sample_id: int
    family: str
    value: float          # theta-hat / sigma-hat in degrees, or the cyclic order
    neighbors_used: int   # post-filter count


def pseudolabels_for_dataset(
    table: EmbeddingTable,
    family: str,
    k: int | None = None,
    gaussian_literal: bool = False,
    order_range=DEFAULT_ORDER_RANGE,
) -> list[Estimate]:
    """One symmetry-level estimate per sample from its latent neighborhood."""
    if family not in DEFAULT_NEIGHBORS:
        raise ValueError(f"unknown family {family!r}")
    if k is None:
        k = DEFAULT_NEIGHBORS[family]
    index = NeighborIndex(ids=table.sample_ids, latents=table.latents)
    angle_of = {int(s): float(a) for s, a in zip(table.sample_ids, table.angles)}
    if family == CYCLIC and k < 2 * max(order_range):
        warnings.warn(
            f"k={k} neighbors is small for cyclic estimation "
            f"(recommended at least {2 * max(order_range)})",
            stacklevel=2,
        )
    estimates = []
    for sample_id in table.sample_ids:
        neighbor_ids = index.query(int(sample_id), k)
        neighbor_angles = np.array([angle_of[int(j)] for j in neighbor_ids])
        if family == CYCLIC:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                value = float(estimate_cyclic(neighbor_angles, order_range))
            used = len(neighbor_angles)
        else:
            abs_angles = np.abs(neighbor_angles)
            if family == UNIFORM:
                kept = filter_outliers(abs_angles)
                value = float(np.clip(2.0 * kept.mean(), 0.0, 180.0))
            else:
                # half-normal inversion is unbiased without trimming; trimming a
                # half-normal tail at 2 sigma would bias sigma-hat ~9% low
                kept = abs_angles
                value = estimate_gaussian(kept, literal=gaussian_literal)
            used = len(kept)
        estimates.append(Estimate(int(sample_id), family, value, used))
    return estimates


def save_estimates(estimates: list[Estimate], path) -> None:
    write_manifest(
        path,
        ("sample_id", "family", "value"),
        [(e.sample_id, e.family, repr(float(e.value))) for e in estimates],
    )


def load_estimates(path) -> dict[int, float]:
    from .persist import read_manifest

    rows = read_manifest(path, ("sample_id", "family", "value"))
    return {int(r[0]): float(r[2]) for r in rows}
