"""Seeded occlusion-mask sampling over segments, and mask application.

Mask draws come from a counter-based generator keyed by
(seed, level, mask index, redraw attempt, segment label), so the sequence is
a pure function of the plan and can be generated in any order or in
parallel without changing the result.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import Spectrogram
from .errors import MaskSamplingError
from .segmentation import SegmentMap
from .validation import check_shape_match

_U64 = np.uint64
_GOLDEN = _U64(0x9E3779B97F4A7C15)
_MIX1 = _U64(0xBF58476D1CE4E5B9)
_MIX2 = _U64(0x94D049BB133111EB)
_MAX_REDRAWS = 100
_RUN_CAP = 0xFFFFFFFF


def _mix64(x: np.ndarray) -> np.ndarray:
    # splitmix64 finalizer
    x = (x + _GOLDEN).astype(_U64)
    x = (x ^ (x >> _U64(30))) * _MIX1
    x = (x ^ (x >> _U64(27))) * _MIX2
    return x ^ (x >> _U64(31))


def _uniform_draws(seed: int, level: int, mask_indices: np.ndarray,
                   segment_labels: np.ndarray, attempt: int) -> np.ndarray:
    """Uniform [0,1) draws, shape (len(mask_indices), len(segment_labels))."""
    with np.errstate(over="ignore"):
        h = _mix64(np.array(seed & 0xFFFFFFFFFFFFFFFF, dtype=_U64))
        h = _mix64(h ^ _U64(level))
        h = _mix64(h ^ _U64(attempt))
        row = _mix64(h ^ mask_indices.astype(_U64))
        grid = _mix64(row[:, None] ^ segment_labels.astype(_U64)[None, :])
    return (grid >> _U64(11)).astype(np.float64) * (2.0 ** -53)


@dataclass(frozen=True)
class PerturbationMask:
    """One occlusion pass: the segments of one level that get zeroed."""

    level_index: int
    masked_segments: frozenset[int]
    cached_cell_mask: Optional[np.ndarray] = field(default=None, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "masked_segments",
                           frozenset(int(s) for s in self.masked_segments))


@dataclass(frozen=True)
class PerturbationPlan:
    """How many masks to draw, at what per-segment probability, from which seed."""

    n_masks_total: int = 20000
    mask_probability: float = 0.5
    seed: int = 0
    masks_per_level: Optional[tuple[int, ...]] = None

    def __post_init__(self):
        if self.n_masks_total < 1:
            raise ValueError("n_masks_total must be >= 1")
        if not (0.0 < self.mask_probability < 1.0):
            raise ValueError("mask_probability must be in (0, 1)")
        if self.masks_per_level is not None:
            counts = tuple(int(c) for c in self.masks_per_level)
            object.__setattr__(self, "masks_per_level", counts)
            if any(c < 0 for c in counts):
                raise ValueError("masks_per_level entries must be >= 0")
            if sum(counts) != self.n_masks_total:
                raise ValueError("masks_per_level must sum to n_masks_total")

    def level_counts(self, n_levels: int) -> tuple[int, ...]:
        """Resolved per-level mask counts; defaults to an even split with the
        remainder going to the earliest levels."""
        if n_levels < 1:
            raise ValueError("need at least one level")
        if self.masks_per_level is not None:
            if len(self.masks_per_level) != n_levels:
                raise ValueError(
                    f"masks_per_level has {len(self.masks_per_level)} entries "
                    f"for {n_levels} levels"
                )
            return self.masks_per_level
        base = self.n_masks_total // n_levels
        remainder = self.n_masks_total - base * n_levels
        return tuple(base + (1 if i < remainder else 0) for i in range(n_levels))


def sample_mask_matrix(levels: list[SegmentMap], plan: PerturbationPlan) -> list[np.ndarray]:
    """Boolean membership matrices, one per level, shape (masks, segments).

    Each segment enters each mask independently with the plan probability;
    all-empty rows are re-drawn (bounded) so every mask occludes >= 1 segment.
    """
    if not levels:
        raise ValueError("levels must be non-empty")
    counts = plan.level_counts(len(levels))
    matrices = []
    for level_index, (seg, n_masks) in enumerate(zip(levels, counts)):
        segment_labels = np.arange(seg.n_segments, dtype=np.int64)
        mask_indices = np.arange(n_masks, dtype=np.int64)
        draws = _uniform_draws(plan.seed, level_index, mask_indices, segment_labels, attempt=0)
        members = draws < plan.mask_probability
        empty = ~members.any(axis=1)
        attempt = 0
        while empty.any():
            attempt += 1
            if attempt > _MAX_REDRAWS:
                raise MaskSamplingError(
                    f"level {level_index}: empty-mask re-draws exhausted "
                    f"after {_MAX_REDRAWS} attempts"
                )
            redo = np.flatnonzero(empty)
            draws = _uniform_draws(plan.seed, level_index, mask_indices[redo],
                                   segment_labels, attempt=attempt)
            members[redo] = draws < plan.mask_probability
            empty[redo] = ~members[redo].any(axis=1)
        matrices.append(members)
    return matrices


def sample_masks(levels: list[SegmentMap], plan: PerturbationPlan) -> list[PerturbationMask]:
    """Flat list of masks over all levels, in (level, mask index) order."""
    matrices = sample_mask_matrix(levels, plan)
    masks = []
    for level_index, members in enumerate(matrices):
        for row in members:
            masks.append(PerturbationMask(
                level_index=level_index,
                masked_segments=frozenset(np.flatnonzero(row).tolist()),
            ))
    return masks


def segment_member_vector(seg: SegmentMap, mask: PerturbationMask) -> np.ndarray:
    members = np.zeros(seg.n_segments, dtype=bool)
    if mask.masked_segments:
        idx = np.fromiter(mask.masked_segments, dtype=np.int64)
        if idx.min() < 0 or idx.max() >= seg.n_segments:
            raise ValueError("mask references segments not present in this level")
        members[idx] = True
    return members


def mask_cell_vector(seg: SegmentMap, mask: PerturbationMask) -> np.ndarray:
    """Flat boolean vector over row-major cells: True where the cell is zeroed."""
    return segment_member_vector(seg, mask)[seg.labels].ravel()


def apply_mask(spec: Spectrogram, seg: SegmentMap, mask: PerturbationMask) -> Spectrogram:
    """Zero all cells of the masked segments; the input is left untouched."""
    check_shape_match(spec.data.shape, seg.labels.shape, "spectrogram and segment map")
    out = spec.data.copy()
    out[segment_member_vector(seg, mask)[seg.labels]] = 0.0
    return Spectrogram(out)


def cells_to_runs(cell_mask: np.ndarray) -> list[tuple[int, int]]:
    """Run-length encode a flat boolean cell vector as (bit, run length) pairs.

    Runs alternate and cover every cell; run lengths are capped at the 32-bit
    unsigned maximum (longer runs are split).
    """
    bits = np.asarray(cell_mask, dtype=bool).ravel()
    if bits.size == 0:
        return []
    changes = np.flatnonzero(np.diff(bits)) + 1
    starts = np.concatenate(([0], changes))
    ends = np.concatenate((changes, [bits.size]))
    runs = []
    for start, end in zip(starts, ends):
        bit = int(bits[start])
        length = int(end - start)
        while length > _RUN_CAP:
            runs.append((bit, _RUN_CAP))
            length -= _RUN_CAP
        runs.append((bit, length))
    return runs


def runs_to_cells(runs: list[tuple[int, int]], n_cells: int) -> np.ndarray:
    """Decode (bit, run length) pairs back into a flat boolean cell vector."""
    out = np.zeros(n_cells, dtype=bool)
    pos = 0
    for bit, length in runs:
        if bit not in (0, 1):
            raise ValueError(f"RLE bit must be 0 or 1, got {bit}")
        if not (1 <= length <= _RUN_CAP):
            raise ValueError(f"RLE run length out of range: {length}")
        if pos + length > n_cells:
            raise ValueError("RLE runs exceed the cell count")
        if bit:
            out[pos:pos + length] = True
        pos += length
    if pos != n_cells:
        raise ValueError(f"RLE runs cover {pos} cells, expected {n_cells}")
    return out


def encode_mask_cells(seg: SegmentMap, mask: PerturbationMask) -> list[tuple[int, int]]:
    """Wire form of a mask: RLE bitset over flattened row-major cells."""
    return cells_to_runs(mask_cell_vector(seg, mask))


def masked_intervals(cell_mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Half-open [start, end) intervals of masked cells in a flat bool vector."""
    bits = np.asarray(cell_mask, dtype=bool).ravel()
    if bits.size == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    padded = np.concatenate(([False], bits, [False]))
    delta = np.diff(padded.astype(np.int8))
    starts = np.flatnonzero(delta == 1)
    ends = np.flatnonzero(delta == -1)
    return starts.astype(np.int64), ends.astype(np.int64)


def intervals_to_runs(starts: np.ndarray, ends: np.ndarray,
                      n_cells: int) -> list[tuple[int, int]]:
    """RLE (bit, run) pairs from sorted, disjoint masked [start, end) intervals."""
    starts = np.asarray(starts, dtype=np.int64)
    ends = np.asarray(ends, dtype=np.int64)
    if n_cells > _RUN_CAP:
        raise ValueError("cell count exceeds the 32-bit run-length cap")
    if len(starts) == 0:
        return [(0, n_cells)] if n_cells else []
    bounds = np.concatenate(([0], np.stack([starts, ends], axis=1).ravel(), [n_cells]))
    lengths = np.diff(bounds)
    bits = np.arange(len(lengths)) % 2
    keep = lengths > 0
    return list(zip(bits[keep].tolist(), lengths[keep].tolist()))
