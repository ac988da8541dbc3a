import sys
import os
import itertools
import logging
import numpy as np
import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from rgbdg.core.clustering import (
    ClusteringConfig,
    ProposalSet,
    RegionProposal,
    extract_features,
    gaussian_kernel_2d,
    gaussian_smooth,
    kmeans,
    rank_and_box,
    refine_clusters,
    score_clusters,
)
from rgbdg.core.scene_model import ActivationHeatmap, BoundingBox, Cluster, DepthMap, Mode
from rgbdg.utils.errors import InvalidKernelError, MissingInputError


def _heatmap(arr):
    return ActivationHeatmap(pixels=np.asarray(arr, dtype=np.float64))


def direct_convolution(pixels, kernel, y, x):
    half = kernel.shape[0] // 2
    out = np.zeros(3)
    for dy in range(-half, half + 1):
        for dx in range(-half, half + 1):
            out += kernel[dy + half, dx + half] * pixels[y + dy, x + dx]
    return out


# ---------------- Smoothing -----------------

def test_constant_heatmap_is_unchanged():
    hm = ActivationHeatmap.filled(30, 20, (0.4, 0.2, 0.1))
    out = gaussian_smooth(hm)
    assert np.allclose(out.pixels, hm.pixels, atol=1e-12)


def test_impulse_response_matches_kernel():
    field = np.zeros((21, 21, 3))
    field[10, 10, 0] = 1.0
    out = gaussian_smooth(_heatmap(field)).pixels
    kernel = gaussian_kernel_2d(11, 2.0)
    assert out[10, 10, 0] == pytest.approx(kernel[5, 5], abs=1e-12)
    assert out[..., 0].sum() == pytest.approx(1.0, abs=1e-9)
    assert np.allclose(out[5:16, 5:16, 0], kernel, atol=1e-12)


def test_even_kernel_is_rejected():
    with pytest.raises(InvalidKernelError):
        ClusteringConfig(kernel_size=10)


def test_smoothing_matches_direct_convolution_on_interior():
    rng = np.random.default_rng(3)
    kernel = gaussian_kernel_2d(11, 2.0)
    for _ in range(100):
        pixels = rng.random((32, 32, 3))
        out = gaussian_smooth(_heatmap(pixels)).pixels
        for y in range(5, 27, 3):
            for x in range(5, 27, 3):
                assert np.allclose(out[y, x], direct_convolution(pixels, kernel, y, x), atol=1e-9)


# ---------------- Features -----------------

def test_feature_vector_of_active_pixel():
    pixels = np.zeros((100, 100, 3))
    pixels[..., 2] = 1.0
    pixels[0, 0] = (0.8, 0.3, 0.1)
    depth = DepthMap(values=np.full((100, 100), 0.5))
    feats = extract_features(_heatmap(pixels), depth, ClusteringConfig())
    assert feats.shape == (100, 100, 6)
    assert feats[0, 0].tolist() == pytest.approx([0.0, 0.0, 0.5, 0.8, 0.3, 0.1])


def test_inactive_pixel_gets_zero_vector():
    pixels = np.zeros((4, 4, 3))
    pixels[...] = (0.2, 0.2, 0.9)
    feats = extract_features(_heatmap(pixels), DepthMap(values=np.zeros((4, 4))), ClusteringConfig())
    assert not feats.any()


def test_rgb_mode_drops_depth_feature():
    pixels = np.zeros((100, 100, 3))
    pixels[0, 0] = (0.8, 0.3, 0.1)
    pixels[99, 99] = (0.9, 0.0, 0.1)
    feats = extract_features(_heatmap(pixels), None, ClusteringConfig(mode=Mode.RGB))
    assert feats.shape == (100, 100, 5)
    assert feats[0, 0].tolist() == pytest.approx([0.0, 0.0, 0.8, 0.3, 0.1])
    assert feats[99, 99].tolist() == pytest.approx([1.0, 1.0, 0.9, 0.0, 0.1])


def test_rgbd_features_need_depth():
    with pytest.raises(MissingInputError):
        extract_features(ActivationHeatmap.filled(4, 4, (1.0, 0.0, 0.0)), None, ClusteringConfig())


def test_red_blue_activity_rule():
    hm = ActivationHeatmap.filled(2, 2, (0.1, 0.1, 0.9))
    cfg = ClusteringConfig(mode=Mode.RGB, active_channels="red_blue")
    assert extract_features(hm, None, cfg).any()


# ---------------- K-means -----------------

def best_two_partition_sse(points):
    best = np.inf
    m = len(points)
    for bits in itertools.product([0, 1], repeat=m - 1):
        labels = np.array((0,) + bits)
        if labels.all() or not labels.any():
            continue
        sse = 0.0
        for j in (0, 1):
            group = points[labels == j]
            sse += float(((group - group.mean(axis=0)) ** 2).sum())
        best = min(best, sse)
    return best


def test_sse_never_increases():
    rng = np.random.default_rng(11)
    for i in range(200):
        pts = rng.random((60, 4))
        res = kmeans(pts, n=1 + i % 5, cfg=ClusteringConfig(kmeans_seed=i))
        hist = res.inertia_history
        assert all(b <= a * (1 + 1e-9) + 1e-12 for a, b in zip(hist, hist[1:]))


def test_two_separated_groups_reach_optimal_partition():
    rng = np.random.default_rng(5)
    for trial in range(20):
        m = int(rng.integers(4, 13))
        split = int(rng.integers(1, m))
        a = rng.normal(0.0, 0.1, size=(split, 4))
        b = rng.normal(0.0, 0.1, size=(m - split, 4)) + 5.0
        pts = np.vstack([a, b])
        res = kmeans(pts, n=2, cfg=ClusteringConfig(kmeans_seed=trial))
        assert len(set(res.labels[:split].tolist())) == 1
        assert len(set(res.labels[split:].tolist())) == 1
        assert res.labels[0] != res.labels[-1]
        assert res.inertia == pytest.approx(best_two_partition_sse(pts), rel=1e-9, abs=1e-9)


def test_single_cluster_centroid_is_mean():
    pts = np.array([[0.0, 1.0], [2.0, 3.0], [4.0, 5.0], [4.0, 5.0]])
    res = kmeans(pts, n=1)
    assert res.labels.tolist() == [0, 0, 0, 0]
    assert res.centroids[0].tolist() == pytest.approx([2.5, 3.5])


def test_too_few_distinct_vectors_reduces_k(caplog):
    pts = np.array([[1.0, 0.0]] * 5 + [[0.0, 1.0]] * 5 + [[0.0, 0.0]] * 3)
    with caplog.at_level(logging.WARNING):
        res = kmeans(pts, n=5, scene_id="tiny")
    assert res.n_clusters == 3
    assert len(set(res.labels.tolist())) == 3
    assert "tiny" in caplog.text


def test_kmeans_is_deterministic():
    rng = np.random.default_rng(0)
    feats = rng.random((40, 30, 6))
    a = kmeans(feats, n=4)
    b = kmeans(feats, n=4)
    assert a.labels.shape == (40, 30)
    assert np.array_equal(a.labels, b.labels)
    assert a.labels.tobytes() == b.labels.tobytes()


def test_final_assignment_is_nearest_centroid():
    rng = np.random.default_rng(21)
    for i in range(50):
        feats = rng.random((12, 15, 5))
        feats[rng.random((12, 15)) < 0.4] = 0.0
        res = kmeans(feats, n=1 + i % 6, cfg=ClusteringConfig(kmeans_seed=i))
        pts = feats.reshape(-1, 5)
        d2 = ((pts[:, None, :] - res.centroids[None, :, :]) ** 2).sum(axis=-1)
        own = d2[np.arange(pts.shape[0]), res.labels.reshape(-1)]
        assert np.all(own <= d2.min(axis=1) + 1e-12)


# ---------------- Refinement -----------------

def _two_blob_labels():
    labels = np.zeros((60, 60), dtype=np.int64)
    features = np.zeros((60, 60, 6))
    labels[0:20, 0:10] = 1
    labels[0:20, 30:40] = 1
    features[labels == 1] = 0.5
    return labels, features


def test_disconnected_cluster_splits_in_two():
    labels, features = _two_blob_labels()
    clusters = refine_clusters(labels, features)
    assert [c.pixel_count for c in clusters] == [200, 200]
    assert [c.box.as_list() for c in clusters] == [[0, 0, 9, 19], [30, 0, 39, 19]]


def test_piece_below_min_area_is_dropped():
    labels = np.zeros((30, 30), dtype=np.int64)
    features = np.zeros((30, 30, 6))
    labels[0:10, 0:15] = 1
    labels[9, 14] = 0
    features[labels == 1] = 0.5
    assert int((labels == 1).sum()) == 149
    assert refine_clusters(labels, features) == []


def test_exactly_min_area_is_kept():
    labels = np.zeros((30, 30), dtype=np.int64)
    features = np.zeros((30, 30, 6))
    labels[0:15, 0:10] = 1
    features[labels == 1] = 0.5
    assert [c.pixel_count for c in refine_clusters(labels, features)] == [150]


def test_background_region_is_dropped():
    assert refine_clusters(np.zeros((100, 100), dtype=np.int64), np.zeros((100, 100, 6))) == []


def test_active_pixels_sharing_the_background_label_are_boxed_alone():
    labels = np.zeros((100, 100), dtype=np.int64)
    features = np.zeros((100, 100, 6))
    features[20:35, 40:55] = 0.5
    clusters = refine_clusters(labels, features)
    assert [c.pixel_count for c in clusters] == [225]
    assert clusters[0].box.as_list() == [40, 20, 54, 34]


def test_inactive_pixels_are_cut_from_a_cluster():
    labels = np.zeros((40, 40), dtype=np.int64)
    features = np.zeros((40, 40, 6))
    labels[0:20, 0:20] = 1
    features[5:20, 5:15] = 0.5
    clusters = refine_clusters(labels, features)
    assert [c.pixel_count for c in clusters] == [150]
    assert clusters[0].box.as_list() == [5, 5, 14, 19]


# ---------------- Scoring and ranking -----------------

def _cluster_at(coords, width=10):
    return Cluster.from_flat(np.array([y * width + x for x, y in coords]), width)


def test_activation_scores():
    pixels = np.zeros((1, 10, 3))
    pixels[0, 0] = (1.0, 1.0, 0.0)
    pixels[0, 1] = (1.0, 1.0, 0.0)
    pixels[0, 2] = (0.5, 0.5, 0.2)
    pixels[0, 3] = (1.0, 0.0, 0.0)
    pixels[0, 4] = (0.0, 1.0, 0.0)
    hm = _heatmap(pixels)
    clusters = [_cluster_at([(0, 0), (1, 0)]), _cluster_at([(2, 0)]), _cluster_at([(3, 0), (4, 0)])]
    scored = score_clusters(clusters, hm, ClusteringConfig())
    assert [c.activation for c in scored] == pytest.approx([1.0, 0.5, 0.5])


def test_weights_must_sum_to_one():
    with pytest.raises(ValueError):
        ClusteringConfig(w_r=0.5, w_g=0.3)


def test_rank_by_activation():
    clusters = [
        _cluster_at([(0, 0)]).with_activation(0.3),
        _cluster_at([(1, 0)]).with_activation(0.9),
        _cluster_at([(2, 0)]).with_activation(0.6),
    ]
    ps = rank_and_box(clusters, scene_id="s", mode=Mode.RGBD)
    assert [p.activation for p in ps.proposals] == [0.9, 0.6, 0.3]
    assert [p.rank for p in ps.proposals] == [1, 2, 3]
    assert ps.proposals[0].box.as_list() == [1, 0, 1, 0]


def test_box_is_minimal_cover():
    ps = rank_and_box([_cluster_at([(2, 3), (4, 7)]).with_activation(0.5)], scene_id="s")
    assert ps.proposals[0].box.as_list() == [2, 3, 4, 7]
    assert ps.proposals[0].pixel_count == 2


def test_equal_activation_prefers_larger_cluster():
    small = Cluster.from_flat(np.arange(200), 100).with_activation(0.5)
    large = Cluster.from_flat(np.arange(1000, 1300), 100).with_activation(0.5)
    ps = rank_and_box([small, large], scene_id="s")
    assert [p.pixel_count for p in ps.proposals] == [300, 200]


def test_equal_activation_and_size_prefers_earlier_start():
    a = Cluster.from_flat(np.arange(500, 700), 100).with_activation(0.5)
    b = Cluster.from_flat(np.arange(0, 200), 100).with_activation(0.5)
    ps = rank_and_box([a, b], scene_id="s")
    assert ps.proposals[0].box.y_min == 0


def test_proposal_set_rejects_rank_gaps():
    box = BoundingBox.from_list([0, 0, 1, 1])
    with pytest.raises(ValueError):
        ProposalSet(scene_id="s", mode=Mode.RGB, proposals=[
            RegionProposal(rank=2, box=box, activation=0.5, pixel_count=4),
        ])


def test_proposal_set_rejects_increasing_activation():
    box = BoundingBox.from_list([0, 0, 1, 1])
    with pytest.raises(ValueError):
        ProposalSet(scene_id="s", mode=Mode.RGB, proposals=[
            RegionProposal(rank=1, box=box, activation=0.4, pixel_count=4),
            RegionProposal(rank=2, box=box, activation=0.5, pixel_count=4),
        ])
