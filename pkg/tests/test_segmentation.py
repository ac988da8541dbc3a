import sys
import os
from collections import deque
import numpy as np
import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from rgbdg.core.scene_model import ActivationHeatmap
from rgbdg.core.segmentation import (
    BinaryMask,
    RegionCountConfig,
    connected_components,
    count_regions,
    label_active,
)

NEIGHBOURS_8 = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dy, dx) != (0, 0)]
NEIGHBOURS_4 = [(-1, 0), (1, 0), (0, -1), (0, 1)]


def flood_fill_partition(mask, neighbours=NEIGHBOURS_8):
    """Reference labelling: BFS from every unvisited set pixel in row-major order."""
    h, w = mask.shape
    seen = np.zeros_like(mask, dtype=bool)
    parts = []
    for y in range(h):
        for x in range(w):
            if not mask[y, x] or seen[y, x]:
                continue
            seen[y, x] = True
            queue, members = deque([(y, x)]), []
            while queue:
                cy, cx = queue.popleft()
                members.append(cy * w + cx)
                for dy, dx in neighbours:
                    ny, nx = cy + dy, cx + dx
                    if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and not seen[ny, nx]:
                        seen[ny, nx] = True
                        queue.append((ny, nx))
            parts.append(sorted(members))
    return parts


def _mask_with_blobs(sizes, shape=(64, 64)):
    mask = np.zeros(shape, dtype=bool)
    x = 0
    for size in sizes:
        cols = 10
        rows = size // cols
        mask[0:rows, x:x + cols] = True
        rest = size - rows * cols
        mask[rows, x:x + rest] = True
        x += cols + 2
    return mask


# ---------------- label_active -----------------

@pytest.mark.parametrize("rgb,expected", [
    ((0.95, 0.10, 0.00), True),
    ((0.50, 0.50, 0.00), False),
    ((0.00, 0.00, 1.00), False),
    ((0.10, 0.91, 0.00), True),
])
def test_label_active_pixel(rgb, expected):
    hm = ActivationHeatmap(pixels=np.array([[rgb]]))
    assert bool(label_active(hm).labels[0, 0]) is expected


# ---------------- connected_components -----------------

def test_empty_mask_has_no_components():
    assert connected_components(BinaryMask(labels=np.zeros((10, 10)))) == []


def test_diagonal_pixels_join_under_8_connectivity():
    mask = np.zeros((3, 3), dtype=bool)
    mask[0, 0] = mask[1, 1] = True
    comps = connected_components(BinaryMask(labels=mask))
    assert len(comps) == 1
    assert comps[0].tolist() == [0, 4]
    assert len(connected_components(BinaryMask(labels=mask), connectivity=4)) == 2


def test_components_ordered_by_first_index():
    mask = np.zeros((4, 6), dtype=bool)
    mask[2, 0] = True
    mask[0, 5] = True
    comps = connected_components(BinaryMask(labels=mask))
    assert [c.tolist() for c in comps] == [[5], [12]]


def test_partition_matches_flood_fill_oracle():
    rng = np.random.default_rng(7)
    for i in range(500):
        density = 0.1 + 0.8 * (i % 9) / 8
        mask = rng.random((64, 64)) < density
        ours = [c.tolist() for c in connected_components(BinaryMask(labels=mask))]
        assert ours == flood_fill_partition(mask)


def test_partition_matches_oracle_with_4_connectivity():
    rng = np.random.default_rng(8)
    for _ in range(50):
        mask = rng.random((32, 32)) < 0.5
        ours = [c.tolist() for c in connected_components(BinaryMask(labels=mask), connectivity=4)]
        assert ours == flood_fill_partition(mask, NEIGHBOURS_4)


# ---------------- count_regions -----------------

def test_all_zero_mask_counts_background_only():
    assert count_regions(BinaryMask(labels=np.zeros((50, 50)))) == 1


def test_two_large_blobs_plus_background():
    assert count_regions(BinaryMask(labels=_mask_with_blobs([200, 200]))) == 3


def test_small_blob_is_not_counted():
    assert count_regions(BinaryMask(labels=_mask_with_blobs([100]))) == 1


def test_without_background_empty_mask_still_needs_one_cluster():
    cfg = RegionCountConfig(count_background=False)
    assert count_regions(BinaryMask(labels=np.zeros((8, 8))), cfg) == 1
    assert count_regions(BinaryMask(labels=_mask_with_blobs([200, 200])), cfg) == 2


def test_count_matches_oracle_on_random_masks():
    rng = np.random.default_rng(9)
    cfg = RegionCountConfig(min_region_area=5)
    for _ in range(100):
        mask = rng.random((64, 64)) < rng.uniform(0.1, 0.9)
        expected = sum(1 for p in flood_fill_partition(mask) if len(p) >= 5) + 1
        assert count_regions(BinaryMask(labels=mask), cfg) == expected
