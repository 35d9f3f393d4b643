"""Thresholding, connected components, and Variation of Information."""

import itertools
import math

import numpy as np
import pytest

from icontrain.errors import PairingError, ShapeError
from icontrain.segmetrics import (
    LabelMap,
    ProbabilityMap,
    connected_components,
    default_threshold_grid,
    gray_baseline_curve,
    threshold_map,
    variation_of_information,
    vi_curve,
)


def flood_fill_components(membrane):
    """Independent oracle: BFS flood fill over interior pixels."""
    h, w = membrane.shape
    labels = np.zeros((h, w), dtype=int)
    nxt = 0
    for sy in range(h):
        for sx in range(w):
            if membrane[sy, sx] or labels[sy, sx]:
                continue
            nxt += 1
            stack = [(sy, sx)]
            labels[sy, sx] = nxt
            while stack:
                y, x = stack.pop()
                for ny, nx_ in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)):
                    if 0 <= ny < h and 0 <= nx_ < w and not membrane[ny, nx_] \
                            and not labels[ny, nx_]:
                        labels[ny, nx_] = nxt
                        stack.append((ny, nx_))
    return labels, nxt


def vi_oracle(a, b, base=2.0):
    """Joint-entropy VI straight from the definition."""
    a, b = a.ravel(), b.ravel()
    n = len(a)
    joint = {}
    for x, y in zip(a.tolist(), b.tolist()):
        joint[(x, y)] = joint.get((x, y), 0) + 1
    pa, pb = {}, {}
    for (x, y), c in joint.items():
        pa[x] = pa.get(x, 0) + c
        pb[y] = pb.get(y, 0) + c
    h_joint = -sum(c / n * math.log(c / n, base) for c in joint.values())
    h_a = -sum(c / n * math.log(c / n, base) for c in pa.values())
    h_b = -sum(c / n * math.log(c / n, base) for c in pb.values())
    return (h_joint - h_b) + (h_joint - h_a)  # split + merge


class TestThreshold:
    def test_zero_threshold_all_membrane(self):
        values = np.random.default_rng(0).uniform(0, 1, (8, 8))
        assert threshold_map(values, 0.0).all()

    def test_one_threshold_only_exact_ones(self):
        values = np.array([[1.0, 0.999], [0.5, 1.0]])
        np.testing.assert_array_equal(
            threshold_map(values, 1.0), [[True, False], [False, True]]
        )

    def test_tie_counts_as_membrane(self):
        assert threshold_map(np.array([[0.5]]), 0.5)[0, 0]

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            threshold_map(np.zeros((2, 2)), 1.5)

    def test_membrane_set_shrinks_monotonically(self):
        # membrane = value >= t, so raising t never converts an
        # interior pixel to membrane
        values = np.random.default_rng(1).uniform(0, 1, (16, 16))
        prev = None
        for t in default_threshold_grid():
            membrane = threshold_map(values, t)
            if prev is not None:
                assert not (membrane & ~prev).any()
            prev = membrane


class TestConnectedComponents:
    def test_all_membrane_no_components(self):
        _, count = connected_components(np.ones((5, 5), dtype=bool))
        assert count == 0

    def test_diagonal_pixels_are_two_components(self):
        membrane = np.ones((3, 3), dtype=bool)
        membrane[0, 0] = membrane[1, 1] = False
        lmap, count = connected_components(membrane)
        assert count == 2
        assert lmap.labels[0, 0] != lmap.labels[1, 1]

    def test_plus_shape_single_component(self):
        membrane = np.ones((3, 3), dtype=bool)
        membrane[1, :] = False
        membrane[:, 1] = False
        _, count = connected_components(membrane)
        assert count == 1

    def test_labels_in_raster_order(self):
        membrane = np.ones((3, 5), dtype=bool)
        membrane[0, 4] = False   # encountered first
        membrane[1, 0] = False   # second
        membrane[2, 2] = False   # third
        lmap, count = connected_components(membrane)
        assert count == 3
        assert lmap.labels[0, 4] == 1
        assert lmap.labels[1, 0] == 2
        assert lmap.labels[2, 2] == 3

    def test_matches_flood_fill_on_random_images(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            membrane = rng.uniform(size=(8, 8)) < 0.45
            lmap, count = connected_components(membrane)
            oracle, ocount = flood_fill_components(membrane)
            assert count == ocount
            np.testing.assert_array_equal(lmap.labels, oracle)


class TestVariationOfInformation:
    def test_identical_partitions_are_zero(self):
        labels = np.random.default_rng(3).integers(1, 5, (8, 8))
        vi = variation_of_information(LabelMap("a", labels), LabelMap("a", labels))
        assert vi.vi_total == pytest.approx(0.0, abs=1e-12)

    def test_even_split_is_one_bit(self):
        truth = LabelMap("a", np.ones((2, 2), dtype=int))
        pred = LabelMap("a", np.array([[1, 1], [2, 2]]))
        vi = variation_of_information(pred, truth)
        assert vi.vi_merge == pytest.approx(0.0, abs=1e-12)
        assert vi.vi_split == pytest.approx(1.0, abs=1e-12)
        assert vi.vi_total == pytest.approx(1.0, abs=1e-12)

    def test_symmetry_swaps_components(self):
        rng = np.random.default_rng(4)
        a = LabelMap("a", rng.integers(1, 4, (8, 8)))
        b = LabelMap("a", rng.integers(1, 4, (8, 8)))
        ab = variation_of_information(a, b)
        ba = variation_of_information(b, a)
        assert ab.vi_total == pytest.approx(ba.vi_total, abs=1e-12)
        assert ab.vi_split == pytest.approx(ba.vi_merge, abs=1e-12)
        assert ab.vi_merge == pytest.approx(ba.vi_split, abs=1e-12)

    def test_relabeling_invariance(self):
        rng = np.random.default_rng(5)
        a = rng.integers(1, 5, (8, 8))
        b = rng.integers(1, 5, (8, 8))
        perm = {1: 17, 2: 3, 3: 41, 4: 8}
        a2 = np.vectorize(perm.get)(a)
        vi1 = variation_of_information(LabelMap("x", a), LabelMap("x", b))
        vi2 = variation_of_information(LabelMap("x", a2), LabelMap("x", b))
        assert vi1.vi_total == pytest.approx(vi2.vi_total, abs=1e-12)

    def test_matches_entropy_oracle(self):
        rng = np.random.default_rng(6)
        for _ in range(25):
            a = rng.integers(1, 5, (8, 8))
            b = rng.integers(1, 5, (8, 8))
            vi = variation_of_information(LabelMap("x", a), LabelMap("x", b))
            assert vi.vi_total == pytest.approx(vi_oracle(a, b), abs=1e-9)

    def test_ignore_zero_excludes_boundary_pixels(self):
        a = np.array([[0, 1], [1, 1]])
        b = np.array([[2, 2], [0, 2]])
        # only the two pixels nonzero in both maps are counted; in both
        # they form a single cluster, so VI is 0
        vi = variation_of_information(LabelMap("x", a), LabelMap("x", b))
        assert vi.vi_total == 0.0

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            variation_of_information(
                LabelMap("x", np.ones((2, 2), int)), LabelMap("x", np.ones((3, 3), int))
            )

    def test_no_counted_pixels_rejected(self):
        z = LabelMap("x", np.zeros((2, 2), int))
        with pytest.raises(ValueError):
            variation_of_information(z, z)


class TestCurves:
    def _pmap(self, image_id, seed):
        values = np.random.default_rng(seed).uniform(0, 1, (16, 16))
        return ProbabilityMap(image_id, values)

    def _truth(self, image_id, seed):
        membrane = np.random.default_rng(seed + 100).uniform(size=(16, 16)) < 0.3
        lmap, _ = connected_components(membrane, image_id)
        return lmap

    def test_default_grid_has_19_points(self):
        grid = default_threshold_grid()
        assert len(grid) == 19
        assert grid[0] == pytest.approx(0.05)
        assert grid[-1] == pytest.approx(0.95)

    def test_single_image_curve_is_its_own_vi(self):
        pmap, truth = self._pmap("a", 7), self._truth("a", 7)
        curve = vi_curve([pmap], [truth], [0.3, 0.6])
        for r in curve:
            lmap, _ = connected_components(threshold_map(pmap, r.threshold), "a")
            direct = variation_of_information(lmap, truth)
            assert r.vi_total == pytest.approx(direct.vi_total, abs=1e-12)

    def test_curve_averages_across_images(self):
        maps = [self._pmap("a", 8), self._pmap("b", 9)]
        truths = [self._truth("a", 8), self._truth("b", 9)]
        combined = vi_curve(maps, truths, [0.5])
        singles = [vi_curve([m], [t], [0.5])[0] for m, t in zip(maps, truths)]
        expect = np.mean([s.vi_total for s in singles])
        assert combined[0].vi_total == pytest.approx(expect, abs=1e-12)
        assert combined[0].vi_total == pytest.approx(
            combined[0].vi_split + combined[0].vi_merge, abs=1e-9
        )

    def test_unpaired_image_rejected(self):
        with pytest.raises(PairingError):
            vi_curve([self._pmap("a", 10)], [self._truth("b", 10)], [0.5])

    def test_gray_baseline_constant_image_single_region(self):
        image = np.full((16, 16), 200, dtype=np.uint8)
        truth = self._truth("a", 11)
        # 200/255 <= 1 - 0.5 is false everywhere: zero membrane, one region
        curve = gray_baseline_curve({"a": image}, [truth], [0.5])
        membrane = threshold_map(1.0 - image / 255.0, 0.5)
        assert not membrane.any()
        # single predicted region: no split information, VI = H(truth)
        assert curve[0].vi_split == pytest.approx(0.0, abs=1e-12)

    def test_gray_baseline_perfect_proxy_is_zero(self):
        truth = self._truth("a", 12)
        image = np.where(truth.labels == 0, 0, 255).astype(np.uint8)
        curve = gray_baseline_curve({"a": image}, [truth], [0.5])
        assert curve[0].vi_total == pytest.approx(0.0, abs=1e-12)
