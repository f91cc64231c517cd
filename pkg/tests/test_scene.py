import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smerf.scene import (
    Ray,
    SceneLayout,
    assign_submodel,
    cell_distance,
    contract,
    contract_direction_scale,
    neighbor_cells,
    normalize_cameras,
    submodel_to_world,
    world_to_submodel,
)


def make_layout(K, active=None, prescale=1.0):
    if active is None:
        active = [(u, v, w) for u in range(K) for v in range(K) for w in range(K)]
    return SceneLayout(
        grid_size=K,
        scale=1.0,
        center=(0.0, 0.0, 0.0),
        contraction_prescale=prescale,
        active_cells=tuple(sorted(active)),
    )


class TestNormalizeCameras:
    def test_single_camera_centers_origin(self):
        layout = normalize_cameras([[3.0, -2.0, 7.0]], grid_size=1)
        np.testing.assert_allclose(layout.world_to_normalized([3.0, -2.0, 7.0]), 0.0)
        assert layout.scale == 1.0
        assert layout.active_cells == ((0, 0, 0),)

    def test_longest_side_maps_to_grid_size(self):
        layout = normalize_cameras([[0, 0, 0], [10, 0, 0]], grid_size=2)
        a = layout.world_to_normalized([0, 0, 0])
        b = layout.world_to_normalized([10, 0, 0])
        np.testing.assert_allclose(a, [-1, 0, 0])
        np.testing.assert_allclose(b, [1, 0, 0])

    def test_cube_corners_activate_octants(self):
        corners = [[u, v, w] for u in (0, 1) for v in (0, 1) for w in (0, 1)]
        layout = normalize_cameras(corners, grid_size=2)
        assert len(layout.active_cells) == 8

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            normalize_cameras(np.zeros((0, 3)), grid_size=1)

    def test_default_prescale_by_tiling(self):
        assert normalize_cameras([[0, 0, 0]], 1).contraction_prescale == 2.5
        assert normalize_cameras([[0, 0, 0], [4, 4, 4]], 2).contraction_prescale == 0.8

    def test_cameras_end_up_in_their_own_cells(self):
        rng = np.random.default_rng(7)
        pts = rng.uniform(-5, 5, size=(40, 3))
        layout = normalize_cameras(pts, grid_size=3)
        for p in pts:
            pn = layout.world_to_normalized(p)
            assert np.all(np.abs(pn) <= 1.5 + 1e-12)
            assert assign_submodel(pn, layout) == layout.cell_of_point(pn)


class TestContract:
    def test_identity_inside(self):
        np.testing.assert_allclose(contract([0.5, 0.0, 0.0]), [0.5, 0.0, 0.0])

    def test_max_coordinate_case(self):
        np.testing.assert_allclose(contract([2.0, 0.0, 0.0]), [1.5, 0.0, 0.0])

    def test_mixed_case(self):
        np.testing.assert_allclose(contract([2.0, 1.0, 0.0]), [1.5, 0.5, 0.0])

    def test_negative_max(self):
        np.testing.assert_allclose(contract([-4.0, 2.0, 0.0]), [-1.75, 0.5, 0.0])

    @given(
        st.lists(st.floats(-1.0, 1.0, allow_nan=False), min_size=3, max_size=3)
    )
    def test_identity_on_unit_ball(self, xs):
        np.testing.assert_array_equal(contract(xs), np.asarray(xs))

    @given(
        st.lists(
            st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False),
            min_size=3,
            max_size=3,
        )
    )
    @settings(max_examples=300)
    def test_range(self, xs):
        y = contract(xs)
        assert np.all(np.abs(y) <= 2.0)

    def test_continuity_across_unit_boundary(self):
        rng = np.random.default_rng(0)
        d = rng.normal(size=(2000, 3))
        d /= np.abs(d).max(axis=1, keepdims=True)  # on the unit-inf sphere
        eps = 1e-7
        inner = contract(d * (1 - eps))
        outer = contract(d * (1 + eps))
        assert np.max(np.abs(inner - outer)) < 1e-5

    def test_batched_matches_single(self):
        rng = np.random.default_rng(1)
        pts = rng.uniform(-5, 5, size=(100, 3))
        batch = contract(pts)
        for p, y in zip(pts, batch):
            np.testing.assert_allclose(contract(p), y)


class TestDirectionScale:
    def test_identity_region(self):
        s = contract_direction_scale([[0.2, 0.1, 0.0]], [0.0, 1.0, 0.0])
        np.testing.assert_allclose(s, [1.0])

    def test_matches_finite_difference(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            z = rng.uniform(-3, 3, size=3)
            if abs(np.abs(z).max() - 1.0) < 1e-2:
                continue
            # stay away from argmax ties, where the map is not differentiable
            a = np.sort(np.abs(z))
            if np.abs(z).max() > 1 and a[-1] - a[-2] < 1e-2:
                continue
            d = rng.normal(size=3)
            d /= np.linalg.norm(d)
            h = 1e-6
            fd = (contract(z + h * d) - contract(z - h * d)) / (2 * h)
            s = contract_direction_scale(z[None], d)[0]
            assert abs(s - np.linalg.norm(fd)) < 1e-4


class TestAssignSubmodel:
    def test_interior_point(self):
        layout = make_layout(2)
        assert assign_submodel([0.5, 0.5, 0.5], layout) == (1, 1, 1)
        assert cell_distance([0.5, 0.5, 0.5], (1, 1, 1), layout) == 0.0

    def test_single_candidate(self):
        layout = make_layout(3, active=[(0, 0, 0)])
        assert assign_submodel([1.4, 1.4, 1.4], layout) == (0, 0, 0)

    def test_tie_breaks_lexicographic(self):
        layout = make_layout(2)
        # the exact center of the scene touches all eight cells
        assert assign_submodel([0.0, 0.0, 0.0], layout) == (0, 0, 0)

    def test_enumeration_order_invariance(self):
        rng = np.random.default_rng(5)
        cells = [(u, v, w) for u in range(3) for v in range(3) for w in range(3)]
        rng.shuffle(cells)
        shuffled = make_layout(3, active=cells[:14])
        sorted_layout = make_layout(3, active=sorted(cells[:14]))
        for _ in range(200):
            p = rng.uniform(-1.5, 1.5, size=3)
            assert assign_submodel(p, shuffled) == assign_submodel(p, sorted_layout)

    def test_containing_cell_wins_when_active(self):
        rng = np.random.default_rng(6)
        layout = make_layout(3)
        for _ in range(300):
            p = rng.uniform(-1.5, 1.5, size=3)
            assert assign_submodel(p, layout) == layout.cell_of_point(p)


class TestWorldToSubmodel:
    def test_cell_center_maps_to_origin(self):
        layout = make_layout(2)
        c = layout.cell_center((1, 0, 1))
        np.testing.assert_allclose(world_to_submodel(c, (1, 0, 1), layout), 0.0)

    def test_cell_corner_maps_to_unit_corner(self):
        layout = make_layout(2)
        corner = np.array([0.0, -1.0, 0.0])  # low corner of cell (1, 0, 1)
        np.testing.assert_allclose(
            world_to_submodel(corner, (1, 0, 1), layout), [-1, -1, -1]
        )

    def test_single_cell_doubles(self):
        layout = make_layout(1)
        np.testing.assert_allclose(
            world_to_submodel([0.5, -0.25, 0.0], (0, 0, 0), layout), [1.0, -0.5, 0.0]
        )

    def test_roundtrip(self):
        layout = make_layout(3)
        p = np.array([0.3, -1.2, 0.9])
        local = world_to_submodel(p, (2, 0, 1), layout)
        np.testing.assert_allclose(submodel_to_world(local, (2, 0, 1), layout), p)

    def test_inactive_rejected(self):
        layout = make_layout(2, active=[(0, 0, 0)])
        with pytest.raises(ValueError):
            world_to_submodel([0, 0, 0], (1, 1, 1), layout)


class TestRay:
    def test_unit_direction_enforced(self):
        with pytest.raises(ValueError):
            Ray(origin=[0, 0, 0], direction=[1, 1, 0])

    def test_valid(self):
        r = Ray(origin=[0, 0, 0], direction=[0, 0, 1], exposure=0.0)
        assert r.exposure == 0.0


class TestNeighborCells:
    def test_within_two_units(self):
        layout = make_layout(3)
        near = neighbor_cells([0.0, 0.0, 0.0], layout, max_center_dist=2.0)
        assert (1, 1, 1) in near
        assert (0, 0, 0) not in near or np.linalg.norm(layout.cell_center((0, 0, 0))) <= 2.0
        far = neighbor_cells([10.0, 0.0, 0.0], layout, max_center_dist=2.0)
        assert far == []
