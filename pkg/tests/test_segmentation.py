"""Segmentation: duration scaling, clustering behavior, partition invariants."""

from collections import deque

import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from spectrast.core import Spectrogram
from spectrast.errors import SegmentationError
from spectrast.segmentation import (
    SegmentationConfig,
    SlicSegmenter,
    effective_segment_count,
    multi_level_segment,
    slic_segment,
)


def bfs_component_count(labels: np.ndarray) -> int:
    """Independent connectivity oracle: 4-neighbor flood fill."""
    n_frames, n_bins = labels.shape
    seen = np.zeros_like(labels, dtype=bool)
    components = 0
    for f in range(n_frames):
        for b in range(n_bins):
            if seen[f, b]:
                continue
            components += 1
            value = labels[f, b]
            q = deque([(f, b)])
            seen[f, b] = True
            while q:
                x, y = q.popleft()
                for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                    nx, ny = x + dx, y + dy
                    if (0 <= nx < n_frames and 0 <= ny < n_bins
                            and not seen[nx, ny] and labels[nx, ny] == value):
                        seen[nx, ny] = True
                        q.append((nx, ny))
    return components


def assert_valid_partition(seg):
    sizes = np.bincount(seg.labels.ravel(), minlength=seg.n_segments)
    assert sizes.sum() == seg.n_cells
    assert (sizes > 0).all()
    assert bfs_component_count(seg.labels) == seg.n_segments


def smooth_random_spectrogram(rng, n_frames, n_bins=80) -> Spectrogram:
    data = gaussian_filter(rng.random((n_frames, n_bins)), sigma=2.0)
    return Spectrogram(data.astype(np.float32))


class TestEffectiveSegmentCount:
    def test_at_threshold_identity(self):
        assert effective_segment_count(750, 2000, 750) == 2000

    def test_above_threshold_capped(self):
        assert effective_segment_count(1500, 2000, 750) == 2000

    def test_linear_scaling_below_threshold(self):
        assert effective_segment_count(375, 2000, 750) == 1000

    def test_floor_of_one(self):
        assert effective_segment_count(1, 2, 750) == 1

    def test_rejects_non_positive(self):
        with pytest.raises(ValueError):
            effective_segment_count(0, 2000, 750)


class TestSlicSegment:
    def test_uniform_single_cluster(self):
        spec = Spectrogram(np.full((2, 2), 3.5, dtype=np.float32))
        seg = slic_segment(spec, 1, SegmentationConfig())
        assert seg.n_segments == 1
        assert (seg.labels == 0).all()

    def test_two_block_boundary_recovered(self):
        data = np.zeros((8, 8), dtype=np.float32)
        data[:, 4:] = 1.0
        seg = slic_segment(Spectrogram(data), 2, SegmentationConfig(compactness=0.01))
        assert seg.n_segments == 2
        left = seg.labels[:, :4]
        right = seg.labels[:, 4:]
        assert len(np.unique(left)) == 1 and len(np.unique(right)) == 1
        assert left[0, 0] != right[0, 0]

    def test_too_many_segments_is_error(self):
        spec = Spectrogram(np.ones((4, 4), dtype=np.float32))
        with pytest.raises(SegmentationError):
            slic_segment(spec, 100, SegmentationConfig())

    def test_each_cell_own_segment(self):
        rng = np.random.default_rng(0)
        spec = Spectrogram(rng.random((3, 4)).astype(np.float32))
        seg = slic_segment(spec, 12, SegmentationConfig())
        assert seg.n_segments == 12
        assert_valid_partition(seg)

    def test_partition_connectivity_determinism(self):
        rng = np.random.default_rng(7)
        for trial in range(3):
            spec = smooth_random_spectrogram(rng, int(rng.integers(60, 160)), 40)
            target = int(rng.integers(40, 180))
            seg_a = slic_segment(spec, target, SegmentationConfig())
            seg_b = slic_segment(spec, target, SegmentationConfig())
            assert np.array_equal(seg_a.labels, seg_b.labels)
            assert_valid_partition(seg_a)
            assert 0.8 * target <= seg_a.n_segments <= 1.2 * target


class TestMultiLevel:
    def test_default_levels_at_threshold(self):
        rng = np.random.default_rng(3)
        spec = smooth_random_spectrogram(rng, 750, 80)
        maps = multi_level_segment(spec, SegmentationConfig())
        for seg, target in zip(maps, (2000, 2500, 3000)):
            assert 0.8 * target <= seg.n_segments <= 1.2 * target
            assert_valid_partition(seg)

    def test_duration_scaled_targets(self):
        cfg = SegmentationConfig()
        targets = [effective_segment_count(375, base, cfg.frame_threshold)
                   for base in cfg.level_targets]
        assert targets == [1000, 1250, 1500]

    def test_single_target_of_one(self):
        spec = Spectrogram(np.ones((5, 4), dtype=np.float32))
        maps = multi_level_segment(spec, SegmentationConfig(level_targets=(1,)))
        assert len(maps) == 1
        assert maps[0].n_segments == 1
        assert (maps[0].labels == 0).all()


class TestConfig:
    def test_invariants(self):
        with pytest.raises(ValueError):
            SegmentationConfig(level_targets=())
        with pytest.raises(ValueError):
            SegmentationConfig(level_targets=(0,))
        with pytest.raises(ValueError):
            SegmentationConfig(max_iterations=0)
        with pytest.raises(ValueError):
            SegmentationConfig(compactness=0.0)
        with pytest.raises(ValueError):
            SegmentationConfig(smoothing_sigma=-1.0)


class TestEstimator:
    def test_get_params_round_trip(self):
        est = SlicSegmenter(level_targets=(10, 20), compactness=0.25)
        params = est.get_params()
        assert params["level_targets"] == (10, 20)
        clone = SlicSegmenter(**params)
        assert clone.get_params() == params

    def test_transform_returns_levels(self):
        rng = np.random.default_rng(11)
        spec = smooth_random_spectrogram(rng, 60, 20)
        est = SlicSegmenter(level_targets=(12, 20), frame_threshold=60)
        maps = est.fit(None).transform(spec)
        assert len(maps) == 2
        for seg in maps:
            assert_valid_partition(seg)
