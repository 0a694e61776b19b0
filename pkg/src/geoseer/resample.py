"""SMOTE oversampling of the minority class in fused feature space.

Synthetic samples are linear interpolations between a minority point and one
of its k nearest minority neighbors. Source points are taken round-robin in
dataset order, which pins the synthetic count exactly regardless of the RNG;
the neighbor choice and the interpolation parameter come from a seeded
generator, so identical inputs give identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset import (
    IMAGE_DIM,
    TEXT_DIM,
    WEATHER_DIM,
    Dataset,
    FeatureVector,
    ModalityMask,
    Sample,
    fuse_features,
)


@dataclass(frozen=True)
class SmoteParams:
    """k_neighbors defaults to the method's canonical 5; target_count=None balances classes."""

    k_neighbors: int = 5
    seed: int = 42
    target_count: int | None = None

    def __post_init__(self) -> None:
        if self.k_neighbors < 1:
            raise ValueError("k_neighbors must be at least 1")


@dataclass(frozen=True)
class NeighborTable:
    """Per minority point: indices of its nearest minority neighbors, distance-ascending."""

    neighbors: tuple[tuple[int, ...], ...]


def _as_matrix(points: Sequence[FeatureVector] | np.ndarray) -> np.ndarray:
    if isinstance(points, np.ndarray):
        mat = np.asarray(points, dtype=np.float64)
    else:
        mat = np.stack([np.asarray(p.values, dtype=np.float64) for p in points])
    if mat.ndim != 2:
        raise ValueError("points must form a 2-d matrix")
    return mat


def knn_minority(points: Sequence[FeatureVector] | np.ndarray, k: int) -> NeighborTable:
    """Exact k nearest neighbors under Euclidean distance.

    Ties break toward the lower point index; a point is never its own
    neighbor; k is clamped to n - 1. Requires at least 2 points.
    """
    mat = _as_matrix(points)
    n = mat.shape[0]
    if n < 2:
        raise ValueError("need at least 2 points for neighbor search")
    if k < 1:
        raise ValueError("k must be at least 1")
    k = min(k, n - 1)
    # Squared distances order identically to Euclidean ones.
    sq = np.sum(mat * mat, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (mat @ mat.T)
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, np.inf)
    rows = []
    for i in range(n):
        order = np.argsort(d2[i], kind="stable")  # stable: ties fall to lower index
        rows.append(tuple(int(j) for j in order[:k]))
    return NeighborTable(tuple(rows))


def _split_by_modality(point: np.ndarray, mask: ModalityMask) -> dict[str, np.ndarray]:
    parts: dict[str, np.ndarray] = {}
    offset = 0
    for name, dim in (("weather", WEATHER_DIM), ("text", TEXT_DIM), ("image", IMAGE_DIM)):
        if getattr(mask, name):
            parts[name] = point[offset:offset + dim]
            offset += dim
    return parts


def _fresh_id(existing: set[str], counter: int) -> tuple[str, int]:
    while True:
        candidate = f"smote-{counter:05d}"
        counter += 1
        if candidate not in existing:
            existing.add(candidate)
            return candidate, counter


def smote_oversample(ds: Dataset, mask: ModalityMask, params: SmoteParams) -> Dataset:
    """Oversample the minority class by segment interpolation in fused space.

    For each synthetic sample: source point round-robin over minority points,
    neighbor seeded-uniform among its k nearest minority neighbors, and
    lambda ~ Uniform[0, 1); the sample is ``x_src + lambda * (x_nb - x_src)``.
    With target_count=None the synthetic count is exactly
    ``|majority| - |minority|``. Originals are preserved verbatim and come
    first in the output.
    """
    labels = np.array([s.label for s in ds.samples])
    n_pos = int(np.sum(labels == 1))
    n_neg = len(labels) - n_pos
    # Tie on counts: treat the positive class as minority (the paper's setting).
    minority_label = 1 if n_pos <= n_neg else 0
    n_min = min(n_pos, n_neg)
    n_maj = max(n_pos, n_neg)

    if params.target_count is None:
        n_synthetic = n_maj - n_min
    else:
        if params.target_count < n_min:
            raise ValueError(f"target_count {params.target_count} below current minority count {n_min}")
        n_synthetic = params.target_count - n_min
    if n_synthetic == 0:
        return ds

    minority_samples = [s for s in ds.samples if s.label == minority_label]
    if len(minority_samples) < 2:
        raise ValueError("SMOTE needs at least 2 minority samples")
    fused = np.stack([fuse_features(s, mask).values for s in minority_samples])
    table = knn_minority(fused, params.k_neighbors)

    rng = np.random.default_rng(params.seed)
    existing_ids = {s.sample_id for s in ds.samples}
    counter = 1
    synthetic: list[Sample] = []
    for j in range(n_synthetic):
        src = j % len(minority_samples)
        neighbors = table.neighbors[src]
        nb = neighbors[int(rng.integers(0, len(neighbors)))]
        lam = float(rng.random())
        point = fused[src] + lam * (fused[nb] - fused[src])
        parts = _split_by_modality(point, mask)
        sample_id, counter = _fresh_id(existing_ids, counter)
        synthetic.append(
            Sample(
                sample_id=sample_id,
                city=minority_samples[src].city,
                label=minority_label,
                weather=parts.get("weather"),
                text_emb=parts.get("text"),
                image_emb=parts.get("image"),
                synthetic=True,
            )
        )
    return Dataset(ds.samples + tuple(synthetic), ds.disaster_type)
