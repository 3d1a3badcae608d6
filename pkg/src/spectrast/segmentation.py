"""Multi-level SLIC segmentation of spectrograms into occlusion units.

Segments are grown by localized k-means in (frame, bin, intensity) space.
Intensities are min-max normalized per utterance before clustering, so the
compactness parameter is comparable across utterances. Everything is
deterministic: grid-based initialization, no RNG, and ties in cluster
assignment resolve to the lowest cluster index.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter
from skimage.measure import label as _connected_components
from sklearn.base import BaseEstimator

from .core import Spectrogram
from .errors import SegmentationError

DEFAULT_LEVEL_TARGETS = (2000, 2500, 3000)
DEFAULT_FRAME_THRESHOLD = 750


@dataclass(frozen=True)
class SegmentationConfig:
    """Parameters for multi-level segmentation.

    ``level_targets`` are the per-level segment counts for inputs at or above
    ``frame_threshold`` frames; shorter inputs scale the counts linearly with
    duration. ``smoothing_sigma`` of 0 means no pre-smoothing.
    """

    level_targets: tuple[int, ...] = DEFAULT_LEVEL_TARGETS
    frame_threshold: int = DEFAULT_FRAME_THRESHOLD
    compactness: float = 0.1
    max_iterations: int = 10
    smoothing_sigma: float = 0.0

    def __post_init__(self):
        targets = tuple(int(t) for t in self.level_targets)
        object.__setattr__(self, "level_targets", targets)
        if not targets or any(t < 1 for t in targets):
            raise ValueError("level_targets must be non-empty and strictly positive")
        if self.frame_threshold < 1:
            raise ValueError("frame_threshold must be >= 1")
        if not (self.compactness > 0):
            raise ValueError("compactness must be > 0")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.smoothing_sigma < 0:
            raise ValueError("smoothing_sigma must be >= 0")


@dataclass(frozen=True)
class SegmentMap:
    """Per-cell segment labels from one segmentation granularity level."""

    labels: np.ndarray
    n_segments: int

    def __post_init__(self):
        arr = np.ascontiguousarray(self.labels, dtype=np.int32)
        if arr.ndim != 2:
            raise ValueError(f"labels must be 2-D, got shape {arr.shape}")
        if arr.min() < 0 or arr.max() >= self.n_segments:
            raise ValueError("labels out of range [0, n_segments)")
        arr.setflags(write=False)
        object.__setattr__(self, "labels", arr)

    @property
    def n_frames(self) -> int:
        return self.labels.shape[0]

    @property
    def n_bins(self) -> int:
        return self.labels.shape[1]

    @property
    def n_cells(self) -> int:
        return self.labels.size

    def segment_sizes(self) -> np.ndarray:
        return np.bincount(self.labels.ravel(), minlength=self.n_segments)


def effective_segment_count(n_frames: int, base_count: int, frame_threshold: int) -> int:
    """Duration-scaled segment count: linear below the frame threshold, capped above.

    Ties at .5 round up.
    """
    if n_frames < 1 or base_count < 1 or frame_threshold < 1:
        raise ValueError("all arguments must be >= 1")
    scaled = base_count * min(n_frames, frame_threshold) / frame_threshold
    return max(1, int(np.floor(scaled + 0.5)))


def _normalize_intensity(data: np.ndarray) -> np.ndarray:
    data = np.asarray(data, dtype=np.float64)
    lo = data.min()
    hi = data.max()
    if hi > lo:
        return (data - lo) / (hi - lo)
    return np.zeros_like(data)


def _grid_dims(n_segments: int, n_frames: int, n_bins: int) -> tuple[int, int]:
    # gf * gb ~= n_segments with spacing roughly equal along both axes
    gf = int(np.floor(np.sqrt(n_segments * n_frames / n_bins) + 0.5))
    gf = min(max(gf, 1), n_frames)
    gb = int(np.floor(n_segments / gf + 0.5))
    gb = min(max(gb, 1), n_bins)
    return gf, gb


def slic_segment(spec: Spectrogram, n_segments: int, config: SegmentationConfig) -> SegmentMap:
    """Segment one spectrogram into approximately ``n_segments`` regions."""
    n_frames, n_bins = spec.n_frames, spec.n_bins
    n_cells = n_frames * n_bins
    if n_segments < 1:
        raise SegmentationError("n_segments must be >= 1")
    if n_segments > n_cells:
        raise SegmentationError(
            f"requested {n_segments} segments but the spectrogram has only {n_cells} cells"
        )

    intensity = _normalize_intensity(spec.data)
    if config.smoothing_sigma > 0:
        intensity = gaussian_filter(intensity, sigma=config.smoothing_sigma)

    grid_step = np.sqrt(n_cells / n_segments)
    spatial_weight = (config.compactness / grid_step) ** 2

    gf, gb = _grid_dims(n_segments, n_frames, n_bins)
    step_f = n_frames / gf
    step_b = n_bins / gb
    centers_f = (np.arange(gf, dtype=np.float64) + 0.5) * step_f - 0.5
    centers_b = (np.arange(gb, dtype=np.float64) + 0.5) * step_b - 0.5
    cf = np.repeat(centers_f, gb)
    cb = np.tile(centers_b, gf)
    sample_f = np.clip(np.rint(cf).astype(int), 0, n_frames - 1)
    sample_b = np.clip(np.rint(cb).astype(int), 0, n_bins - 1)
    ci = intensity[sample_f, sample_b].astype(np.float64)
    n_clusters = gf * gb

    frame_coord = np.arange(n_frames, dtype=np.float64)[:, None]
    bin_coord = np.arange(n_bins, dtype=np.float64)[None, :]
    win_f = max(1, int(np.ceil(step_f)))
    win_b = max(1, int(np.ceil(step_b)))

    labels = np.full((n_frames, n_bins), -1, dtype=np.int32)
    for _ in range(config.max_iterations):
        best = np.full((n_frames, n_bins), np.inf, dtype=np.float64)
        new_labels = np.full((n_frames, n_bins), -1, dtype=np.int32)
        for c in range(n_clusters):
            f0 = max(0, int(np.floor(cf[c])) - win_f)
            f1 = min(n_frames, int(np.ceil(cf[c])) + win_f + 1)
            b0 = max(0, int(np.floor(cb[c])) - win_b)
            b1 = min(n_bins, int(np.ceil(cb[c])) + win_b + 1)
            d_int = intensity[f0:f1, b0:b1] - ci[c]
            d_sp = (frame_coord[f0:f1] - cf[c]) ** 2 + (bin_coord[:, b0:b1] - cb[c]) ** 2
            dist = d_int * d_int + spatial_weight * d_sp
            window_best = best[f0:f1, b0:b1]
            closer = dist < window_best
            window_best[closer] = dist[closer]
            new_labels[f0:f1, b0:b1][closer] = c

        unassigned = new_labels < 0
        if unassigned.any():
            uf, ub = np.nonzero(unassigned)
            for f, b in zip(uf, ub):
                d = (intensity[f, b] - ci) ** 2 + spatial_weight * ((f - cf) ** 2 + (b - cb) ** 2)
                new_labels[f, b] = int(np.argmin(d))

        if np.array_equal(new_labels, labels):
            break
        labels = new_labels

        flat = labels.ravel()
        counts = np.bincount(flat, minlength=n_clusters).astype(np.float64)
        sum_f = np.bincount(flat, weights=np.broadcast_to(frame_coord, intensity.shape).ravel(),
                            minlength=n_clusters)
        sum_b = np.bincount(flat, weights=np.broadcast_to(bin_coord, intensity.shape).ravel(),
                            minlength=n_clusters)
        sum_i = np.bincount(flat, weights=intensity.ravel(), minlength=n_clusters)
        occupied = counts > 0
        cf = np.where(occupied, sum_f / np.maximum(counts, 1), cf)
        cb = np.where(occupied, sum_b / np.maximum(counts, 1), cb)
        ci = np.where(occupied, sum_i / np.maximum(counts, 1), ci)

    return _enforce_connectivity(labels, n_segments)


def _enforce_connectivity(labels: np.ndarray, n_segments_requested: int) -> SegmentMap:
    """Split disconnected clusters into components and absorb small orphans.

    Components smaller than cells / (4 * requested segments) merge into the
    largest adjacent segment; remaining components are relabeled compactly.
    """
    n_cells = labels.size
    comps = _connected_components(labels, connectivity=1, background=-1) - 1
    n_comps = int(comps.max()) + 1
    sizes = np.bincount(comps.ravel(), minlength=n_comps).astype(np.int64)
    threshold = n_cells / (4.0 * n_segments_requested)

    # component adjacency from 4-neighbor cell pairs with differing components
    pairs = []
    horiz = np.stack([comps[:, :-1].ravel(), comps[:, 1:].ravel()], axis=1)
    vert = np.stack([comps[:-1, :].ravel(), comps[1:, :].ravel()], axis=1)
    for block in (horiz, vert):
        diff = block[block[:, 0] != block[:, 1]]
        if len(diff):
            pairs.append(diff)
            pairs.append(diff[:, ::-1])
    if pairs:
        all_pairs = np.unique(np.concatenate(pairs), axis=0)
    else:
        all_pairs = np.empty((0, 2), dtype=np.int64)

    neighbors: list[list[int]] = [[] for _ in range(n_comps)]
    for a, b in all_pairs:
        neighbors[a].append(int(b))

    parent = np.arange(n_comps)
    blob_size = sizes.copy()

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for c in range(n_comps):
        if sizes[c] >= threshold or not neighbors[c]:
            continue
        roots = {find(n) for n in neighbors[c]}
        roots.discard(find(c))
        if not roots:
            continue
        target = min(roots, key=lambda r: (-blob_size[r], r))
        root_c = find(c)
        parent[root_c] = target
        blob_size[target] += blob_size[root_c]

    roots = np.array([find(c) for c in range(n_comps)])
    final = roots[comps]
    _, compact = np.unique(final, return_inverse=True)
    compact = compact.reshape(labels.shape)
    return SegmentMap(labels=compact.astype(np.int32), n_segments=int(compact.max()) + 1)


def multi_level_segment(spec: Spectrogram, config: SegmentationConfig) -> list[SegmentMap]:
    """One SegmentMap per level target, each duration-scaled and clamped to the cell count."""
    maps = []
    for base in config.level_targets:
        target = effective_segment_count(spec.n_frames, base, config.frame_threshold)
        target = min(target, spec.n_cells)
        maps.append(slic_segment(spec, target, config))
    return maps


def save_segment_labels_csv(seg: SegmentMap, path) -> None:
    """Debug export of the label matrix as integer CSV."""
    with Path(path).open("w", encoding="utf-8") as stream:
        for row in seg.labels:
            stream.write(",".join(str(int(v)) for v in row))
            stream.write("\n")


class SlicSegmenter(BaseEstimator):
    """Stateless transformer from one Spectrogram to its segmentation levels."""

    def __init__(self, level_targets=DEFAULT_LEVEL_TARGETS,
                 frame_threshold=DEFAULT_FRAME_THRESHOLD, compactness=0.1,
                 max_iterations=10, smoothing_sigma=0.0):
        self.level_targets = level_targets
        self.frame_threshold = frame_threshold
        self.compactness = compactness
        self.max_iterations = max_iterations
        self.smoothing_sigma = smoothing_sigma

    def config(self) -> SegmentationConfig:
        return SegmentationConfig(
            level_targets=tuple(self.level_targets),
            frame_threshold=self.frame_threshold,
            compactness=self.compactness,
            max_iterations=self.max_iterations,
            smoothing_sigma=self.smoothing_sigma,
        )

    def fit(self, X=None, y=None):
        return self

    def transform(self, X) -> list[SegmentMap]:
        spec = X if isinstance(X, Spectrogram) else Spectrogram(np.asarray(X))
        return multi_level_segment(spec, self.config())
