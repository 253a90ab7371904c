import math

import numpy as np
import pytest

from conftest import basis
from vsgm import spatial_map as sm
from vsgm.feature_bank import ATTRIBUTE_DIM
from vsgm.semantic_graphs import Detection

CAMERA = sm.CameraConfig()


def flat_depth(metres, shape=(300, 300)):
    return sm.DepthImage(np.full(shape, metres))


def oracle_cell(u, v, d, pose, camera=CAMERA, s=10, cell=0.25):
    """Pinhole back-projection with explicit rotation matrices."""
    f = (camera.width / 2) / math.tan(math.radians(camera.fov) / 2)
    p_cam = np.array(
        [(u + 0.5 - camera.width / 2) * d / f, (v + 0.5 - camera.height / 2) * d / f, d]
    )
    p = math.radians(pose.camera_pitch)
    r_pitch = np.array(
        [[1, 0, 0], [0, math.cos(p), math.sin(p)], [0, -math.sin(p), math.cos(p)]]
    )
    y = math.radians(pose.yaw)
    r_yaw = np.array(
        [[math.cos(y), 0, math.sin(y)], [0, 1, 0], [-math.sin(y), 0, math.cos(y)]]
    )
    world = r_yaw @ (r_pitch @ p_cam) + np.array([pose.x, 0.0, pose.z])
    i = s // 2 + math.floor(world[0] / cell)
    j = s // 2 + math.floor(world[2] / cell)
    return (i, j) if 0 <= i < s and 0 <= j < s else None


# -----------------------------------------------------------------------------
# Grid graph
# -----------------------------------------------------------------------------
def test_default_map_has_10600_nodes():
    m = sm.init_map(10, 106, 0.25)
    assert m.num_nodes == 10600
    assert m.graph.number_of_nodes() == 10600
    assert m.anchor == (5, 5)
    assert m.occupied_count == 0


@pytest.mark.parametrize(
    "s, c, neighbor, vertical",
    [(2, 1, 4, 0), (1, 2, 0, 1), (10, 106, 2 * 10 * 9, 100 * 105), (3, 4, 12, 27)],
)
def test_grid_edge_counts(s, c, neighbor, vertical):
    g = sm.grid_graph(s, c)
    assert sm.edge_counts(g) == {"neighbor": neighbor, "vertical": vertical}


def test_neighbor_edges_only_on_layer_zero():
    g = sm.grid_graph(3, 3)
    for a, b, kind in g.edges(data="kind"):
        if kind == "neighbor":
            assert a[2] == b[2] == 0
        else:
            assert a[:2] == b[:2] and abs(a[2] - b[2]) == 1


@pytest.mark.parametrize("s, c", [(0, 5), (5, 0), (-1, 1)])
def test_nonpositive_dimensions_rejected(s, c):
    with pytest.raises(ValueError, match="positive"):
        sm.init_map(s, c, 0.25)


# -----------------------------------------------------------------------------
# Projection
# -----------------------------------------------------------------------------
def test_centre_pixel_at_one_metre():
    cells = sm.project_detection(
        flat_depth(1.0), sm.BoundingBox(150, 150, 151, 151), sm.AgentPose(), CAMERA, 10, 0.25
    )
    assert cells == [(5, 9)]


def test_zero_depth_lands_on_agent_cell():
    cells = sm.project_detection(
        flat_depth(0.0), sm.BoundingBox(100, 100, 200, 200), sm.AgentPose(), CAMERA, 10, 0.25
    )
    assert cells == [(5, 5)]


def test_far_projection_is_discarded():
    cells = sm.project_detection(
        flat_depth(10.0), sm.BoundingBox(140, 140, 160, 160), sm.AgentPose(), CAMERA, 10, 0.25
    )
    assert cells == []


def test_yaw_ninety_faces_positive_x():
    cells = sm.project_detection(
        flat_depth(1.0),
        sm.BoundingBox(150, 150, 151, 151),
        sm.AgentPose(yaw=90.0),
        CAMERA,
        10,
        0.25,
    )
    assert cells == [(9, 4)]


def test_relative_pose_of_origin_is_identity():
    origin = sm.AgentPose(x=2.0, z=-3.0, yaw=90.0, camera_pitch=30.0)
    rel = origin.relative_to(origin)
    assert (rel.x, rel.z, rel.yaw) == (0.0, 0.0, 0.0)
    assert rel.camera_pitch == 30.0


def test_relative_pose_rotates_into_start_heading():
    """Facing +x at the start, a step to world +z is a step to the left."""
    origin = sm.AgentPose(x=1.0, z=1.0, yaw=90.0)
    rel = sm.AgentPose(x=1.0, z=3.0, yaw=180.0).relative_to(origin)
    assert rel.x == pytest.approx(-2.0)
    assert rel.z == pytest.approx(0.0, abs=1e-12)
    assert rel.yaw == pytest.approx(90.0)
    ahead = sm.AgentPose(x=1.5, z=1.0, yaw=90.0).relative_to(origin)
    assert ahead.z == pytest.approx(0.5)
    assert ahead.x == pytest.approx(0.0, abs=1e-12)


def test_relative_yaw_wraps_into_range():
    rel = sm.AgentPose(yaw=10.0).relative_to(sm.AgentPose(yaw=350.0))
    assert rel.yaw == pytest.approx(20.0)


def test_map_is_anchored_at_translated_start_pose(zero_bank):
    """Zero depth at the start pose lands on the anchor cell wherever the start is."""
    start = sm.AgentPose(x=2.0, z=-3.0)
    m = sm.update_map(
        sm.init_map(), [centre_detection(7)], flat_depth(0.0), start, zero_bank, CAMERA, origin=start
    )
    assert list(m.occupancy) == [(5, 5, 7)]


def test_map_is_anchored_at_rotated_start_pose(zero_bank):
    """The start heading is map +j, whatever its absolute yaw."""
    start = sm.AgentPose(yaw=90.0)
    m = sm.update_map(
        sm.init_map(), [centre_detection(7)], flat_depth(1.0), start, zero_bank, CAMERA, origin=start
    )
    assert list(m.occupancy) == [(5, 9, 7)]


def test_degenerate_box_projects_nothing():
    assert sm.project_detection(
        flat_depth(1.0), sm.BoundingBox(10, 10, 10, 20), sm.AgentPose(), CAMERA, 10, 0.25
    ) == []


def test_bbox_out_of_bounds():
    with pytest.raises(ValueError, match="bbox out of bounds"):
        sm.project_detection(
            flat_depth(1.0), sm.BoundingBox(290, 0, 301, 10), sm.AgentPose(), CAMERA, 10, 0.25
        )


def test_depth_size_must_match_camera():
    with pytest.raises(ValueError, match="camera expects"):
        sm.project_detection(
            flat_depth(1.0, shape=(10, 10)), sm.BoundingBox(0, 0, 1, 1), sm.AgentPose(), CAMERA, 10, 0.25
        )


def test_zero_size_depth_image():
    with pytest.raises(ValueError, match="zero-size"):
        sm.DepthImage(np.zeros((0, 0)))


def test_cells_are_sorted_and_unique():
    cells = sm.project_detection(
        flat_depth(1.0), sm.BoundingBox(0, 0, 300, 300), sm.AgentPose(), CAMERA, 10, 0.25
    )
    assert cells == sorted(set(cells))
    assert len(cells) > 1


def test_projection_matches_rotation_oracle():
    """Back-projection agrees with explicit pitch and yaw rotation matrices."""
    rng = np.random.default_rng(7)
    hits = 0
    for _ in range(100):
        u, v = int(rng.integers(0, 300)), int(rng.integers(0, 300))
        d = float(rng.uniform(0.0, 1.5))
        pose = sm.AgentPose(
            x=float(rng.uniform(-1, 1)),
            z=float(rng.uniform(-1, 1)),
            yaw=float(rng.uniform(0, 360)),
            camera_pitch=float(rng.uniform(-30, 60)),
        )
        depth = sm.DepthImage(np.full((300, 300), d))
        got = sm.project_detection(depth, sm.BoundingBox(u, v, u + 1, v + 1), pose, CAMERA, 10, 0.25)
        expected = oracle_cell(u, v, d, pose)
        assert got == ([expected] if expected is not None else [])
        hits += expected is not None
    assert hits > 30


def test_translation_by_one_cell_shifts_column():
    rng = np.random.default_rng(11)
    checked = 0
    for _ in range(100):
        u, v = int(rng.integers(0, 300)), int(rng.integers(0, 300))
        depth = sm.DepthImage(np.full((300, 300), float(rng.uniform(0.1, 2.0))))
        pose = sm.AgentPose(
            x=float(rng.uniform(-0.5, 0.5)),
            z=float(rng.uniform(-0.5, 0.5)),
            yaw=float(rng.uniform(0, 360)),
            camera_pitch=float(rng.uniform(0, 45)),
        )
        moved = sm.AgentPose(x=pose.x + 0.25, z=pose.z, yaw=pose.yaw, camera_pitch=pose.camera_pitch)
        box = sm.BoundingBox(u, v, u + 1, v + 1)
        before = sm.project_detection(depth, box, pose, CAMERA, 10, 0.25)
        after = sm.project_detection(depth, box, moved, CAMERA, 10, 0.25)
        if before and after:
            assert after == [(before[0][0] + 1, before[0][1])]
            checked += 1
    assert checked > 30


def test_stride_subsamples_pixels():
    depth = flat_depth(1.0)
    box = sm.BoundingBox(0, 0, 300, 300)
    full = set(sm.project_detection(depth, box, sm.AgentPose(), CAMERA, 10, 0.25))
    sparse = set(sm.project_detection(depth, box, sm.AgentPose(), CAMERA, 10, 0.25, stride=7))
    assert sparse <= full


# -----------------------------------------------------------------------------
# Map updates
# -----------------------------------------------------------------------------
def centre_detection(class_id=12, k=0):
    return Detection(
        class_id=class_id,
        visual=basis(k),
        attributes=np.zeros(ATTRIBUTE_DIM),
        bbox=(150, 150, 151, 151),
    )


def test_update_map_writes_layer_of_class(zero_bank):
    m = sm.init_map()
    m = sm.update_map(m, [centre_detection()], flat_depth(1.0), sm.AgentPose(), zero_bank, CAMERA)
    assert list(m.occupancy) == [(5, 9, 12)]


def test_update_map_overwrites_revisited_cell(zero_bank):
    m = sm.init_map()
    m = sm.update_map(m, [centre_detection(k=0)], flat_depth(1.0), sm.AgentPose(), zero_bank, CAMERA)
    m = sm.update_map(m, [centre_detection(k=1)], flat_depth(1.0), sm.AgentPose(), zero_bank, CAMERA)
    assert m.occupied_count == 1
    assert m.occupancy[(5, 9, 12)][1] == 1.0


def test_update_map_without_detections_is_noop(zero_bank):
    m = sm.init_map()
    assert sm.update_map(m, [], flat_depth(1.0), sm.AgentPose(), zero_bank, CAMERA) is m


def test_update_map_rejects_class_beyond_layers(zero_bank):
    m = sm.init_map(10, 5, 0.25)
    with pytest.raises(ValueError, match="unknown class 12"):
        sm.update_map(m, [centre_detection()], flat_depth(1.0), sm.AgentPose(), zero_bank, CAMERA)


def test_occupancy_never_shrinks(zero_bank):
    """Map updates only add or overwrite cells."""
    m = sm.init_map()
    counts = []
    for d in (1.0, 0.5, 1.0, 1.5):
        m = sm.update_map(m, [centre_detection()], flat_depth(d), sm.AgentPose(), zero_bank, CAMERA)
        counts.append(m.occupied_count)
    assert counts == sorted(counts)
    assert counts[-1] <= 10 * 10 * 106


def test_active_nodes_sorted_row_major(zero_bank):
    m = sm.init_map()
    far = Detection(class_id=3, visual=basis(1), attributes=np.zeros(ATTRIBUTE_DIM), bbox=(150, 150, 151, 151))
    m = sm.update_map(m, [centre_detection(12)], flat_depth(1.0), sm.AgentPose(), zero_bank, CAMERA)
    m = sm.update_map(m, [far], flat_depth(0.0), sm.AgentPose(), zero_bank, CAMERA)
    nodes = sm.active_nodes(m)
    assert [(i, j, k) for i, j, k, _ in nodes] == [(5, 5, 3), (5, 9, 12)]


def test_active_nodes_empty():
    assert sm.active_nodes(sm.init_map()) == []


def test_active_node_graph_uses_grid_edges(zero_bank):
    m = sm.init_map()
    box = Detection(class_id=0, visual=basis(0), attributes=np.zeros(ATTRIBUTE_DIM), bbox=(0, 0, 300, 300))
    m = sm.update_map(m, [box], flat_depth(1.0), sm.AgentPose(), zero_bank, CAMERA)
    features, adjacency = sm.active_node_graph(m)
    assert features.shape == (m.occupied_count, 2371)
    assert np.array_equal(adjacency, adjacency.T)
    assert adjacency.sum() > 0
    assert np.all(np.diag(adjacency) == 0)
