import sys
import os
import numpy as np
import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from rgbdg.core.clustering import ClusteringConfig
from rgbdg.core.orchestrator import Orchestrator, propose
from rgbdg.core.scene_model import ActivationHeatmap, BoundingBox, DepthMap, Mode, Scene
from rgbdg.core.synth import depth_critical_preset, generate
from rgbdg.utils.errors import MissingInputError

W, H = 100, 100
CX, CY, R = 50, 40, 12.6


def _disk():
    yy, xx = np.mgrid[0:H, 0:W]
    return (xx - CX) ** 2 + (yy - CY) ** 2 <= R ** 2


def _disk_heatmap(mask):
    px = np.zeros((H, W, 3))
    px[..., 2] = 1.0
    px[mask] = (1.0, 0.0, 0.0)
    return ActivationHeatmap(pixels=px)


def _disk_scene(with_depth=True, depth_mask=None):
    mask = _disk()
    ys, xs = np.nonzero(mask)
    return Scene(
        id="disk",
        rgb_heatmap=_disk_heatmap(mask),
        depth_heatmap=_disk_heatmap(mask if depth_mask is None else depth_mask) if with_depth else None,
        depth_map=DepthMap(values=np.full((H, W), 0.5)) if with_depth else None,
        ground_truth=BoundingBox.from_pixels(xs, ys),
    )


def test_disk_fixture_is_about_500_pixels():
    assert 450 <= int(_disk().sum()) <= 550


def test_single_agreeing_blob_gives_one_proposal():
    scene = _disk_scene()
    ps = propose(scene)
    assert len(ps.proposals) == 1
    top = ps.proposals[0]
    assert top.rank == 1
    assert top.box.contains(CX, CY)
    gt = scene.ground_truth
    for got, want in zip(top.box.as_list(), gt.as_list()):
        assert abs(got - want) <= 2
    assert ps.boxes_within(W, H)


def test_rgb_mode_needs_no_depth():
    scene = _disk_scene(with_depth=False)
    ps = propose(scene, cluster_cfg=ClusteringConfig(mode=Mode.RGB))
    assert ps.mode == Mode.RGB
    assert len(ps.proposals) == 1
    assert ps.proposals[0].box.contains(CX, CY)


def test_rgbd_mode_without_depth_fails():
    with pytest.raises(MissingInputError):
        propose(_disk_scene(with_depth=False))


def test_disjoint_activity_gives_no_proposals():
    shifted = np.roll(_disk(), 40, axis=1)
    ps = propose(_disk_scene(depth_mask=shifted))
    assert ps.proposals == []
    assert ps.scene_id == "disk"


def test_all_background_gives_no_proposals():
    scene = Scene(
        id="empty",
        rgb_heatmap=ActivationHeatmap.filled(W, H, (0.0, 0.0, 1.0)),
        depth_heatmap=ActivationHeatmap.filled(W, H, (0.0, 0.0, 1.0)),
        depth_map=DepthMap(values=np.ones((H, W))),
        ground_truth=BoundingBox.from_list([0, 0, W - 1, H - 1]),
    )
    assert propose(scene).proposals == []


def test_run_records_every_stage():
    result = Orchestrator().run(_disk_scene())
    assert [s.name for s in result.steps] == [
        "fuse", "count_regions", "smooth", "features", "kmeans", "refine", "score_rank",
    ]
    counted = next(s for s in result.steps if s.name == "count_regions")
    assert counted.output["n"] == 2
    assert result.kmeans.n_clusters == 2
    assert len(result.clusters) == 1


def test_propose_is_deterministic():
    a = propose(_disk_scene())
    b = propose(_disk_scene())
    assert a == b


# ---------------- background never becomes a proposal -----------------

def _full_frame(scene):
    return BoundingBox.from_list([0, 0, scene.width - 1, scene.height - 1])


def test_single_region_scene_boxes_the_object_not_the_frame():
    # red 0.8 stays under the high-activity threshold, so N = 1
    mask = _disk()
    px = np.zeros((H, W, 3))
    px[..., 2] = 1.0
    px[mask] = (0.8, 0.4, 0.2)
    ys, xs = np.nonzero(mask)
    scene = Scene(
        id="dim-disk",
        rgb_heatmap=ActivationHeatmap(pixels=px),
        depth_heatmap=ActivationHeatmap(pixels=px),
        depth_map=DepthMap(values=np.full((H, W), 0.5)),
        ground_truth=BoundingBox.from_pixels(xs, ys),
    )
    result = Orchestrator().run(scene)
    assert result.kmeans.n_clusters == 1
    assert len(result.proposals.proposals) == 1
    box = result.proposals.proposals[0].box
    assert box != _full_frame(scene)
    assert box.contains(CX, CY)
    assert box.area < W * H / 4


def test_small_preset_proposal_sits_on_the_target():
    scene = generate(depth_critical_preset(1, width=160, height=120))
    result = Orchestrator().run(scene)
    counted = next(s for s in result.steps if s.name == "count_regions")
    assert counted.output["n"] == 1
    ps = result.proposals
    assert len(ps.proposals) == 1
    assert ps.proposals[0].pixel_count < scene.width * scene.height
    assert ps.proposals[0].box != _full_frame(scene)
    tx, ty = scene.ground_truth.center
    assert ps.proposals[0].box.contains(int(tx), int(ty))


@pytest.mark.parametrize("seed", [1, 2, 3])
@pytest.mark.parametrize("mode", [Mode.RGBD, Mode.RGB])
def test_preset_proposals_never_cover_the_frame(seed, mode):
    for size in ((160, 120), (320, 240)):
        scene = generate(depth_critical_preset(seed, width=size[0], height=size[1]))
        ps = propose(scene, cluster_cfg=ClusteringConfig(mode=mode))
        assert ps.proposals
        assert all(p.box != _full_frame(scene) for p in ps.proposals)


# ---------------- cluster shape -----------------

def _eight_connected(pixels):
    """Flood fill over a set of (x, y) pixels."""
    start = next(iter(pixels))
    seen, stack = {start}, [start]
    while stack:
        x, y = stack.pop()
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                nb = (x + dx, y + dy)
                if nb in pixels and nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
    return len(seen) == len(pixels)


@pytest.mark.parametrize("seed", [1, 2, 3])
@pytest.mark.parametrize("mode", [Mode.RGBD, Mode.RGB])
def test_clusters_are_connected_large_and_tightly_boxed(seed, mode):
    cfg = ClusteringConfig(mode=mode)
    result = Orchestrator(cluster_cfg=cfg).run(generate(depth_critical_preset(seed)))
    assert result.clusters
    for c in result.clusters:
        pixels = c.pixel_set()
        assert c.pixel_count >= cfg.min_cluster_area
        assert _eight_connected(pixels)
        xs, ys = c.coordinates()
        # every side of the box touches a member pixel, so shrinking it drops one
        assert c.box.as_list() == [int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max())]
    boxes = sorted(p.box.as_list() for p in result.proposals.proposals)
    assert boxes == sorted(c.box.as_list() for c in result.clusters)
