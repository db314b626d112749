import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from _oracles import shoelace
from pannid.errors import InvertedDeformationError, MeshError
from pannid.kinematics import (
    Dataset,
    KinematicMode,
    build_mesh,
    deformation_gradient,
    element_areas,
    load_dataset,
    load_mesh,
    precompute_quadrature,
)

UNIT_SQUARE = {
    "nodes": [[0, 0], [1, 0], [1, 1], [0, 1]],
    "elements": {"kind": "quad4", "connectivity": [[0, 1, 2, 3]]},
    "node_sets": {"bottom": [0, 1], "top": [2, 3]},
    "thickness": 1.0,
}


def _doc(**changes):
    d = json.loads(json.dumps(UNIT_SQUARE))
    d.update(changes)
    return json.dumps(d).encode()


def _grid(nx, ny, w=2.0, h=3.0, jitter=0.0, rng=None):
    xs, ys = np.meshgrid(np.linspace(0, w, nx + 1), np.linspace(0, h, ny + 1))
    nodes = np.column_stack([xs.ravel(), ys.ravel()])
    if jitter:
        inner = (nodes[:, 0] > 0) & (nodes[:, 0] < w) & (nodes[:, 1] > 0) & (nodes[:, 1] < h)
        nodes[inner] += jitter * rng.uniform(-1, 1, (inner.sum(), 2)) * min(w / nx, h / ny)
    conn = []
    for j in range(ny):
        for i in range(nx):
            a = j * (nx + 1) + i
            conn.append([a, a + 1, a + nx + 2, a + nx + 1])
    return build_mesh(nodes, conn)


class TestLoadMesh:
    def test_unit_square(self):
        mesh = load_mesh(_doc())
        assert mesh.n_nodes == 4 and mesh.n_elements == 1
        assert mesh.kind == "quad4"

    def test_file_object_and_path(self, tmp_path):
        p = tmp_path / "m.json"
        p.write_bytes(_doc())
        assert load_mesh(str(p)).n_nodes == 4
        assert load_mesh(io.BytesIO(_doc())).n_elements == 1

    def test_clockwise_is_reordered(self):
        mesh = load_mesh(_doc(elements={"kind": "quad4", "connectivity": [[0, 3, 2, 1]]}))
        assert element_areas(mesh)[0] == pytest.approx(1.0)
        assert sorted(mesh.elements[0].tolist()) == [0, 1, 2, 3]

    def test_clockwise_triangle_is_reversed(self):
        mesh = build_mesh([[0, 0], [1, 0], [0, 1]], [[0, 2, 1]], kind="tri3")
        assert element_areas(mesh)[0] == pytest.approx(0.5)

    def test_dangling_node_set(self):
        with pytest.raises(MeshError, match="dangling node-set index"):
            load_mesh(_doc(node_sets={"grip": [0, 7]}))

    def test_repeated_node(self):
        with pytest.raises(MeshError, match="repeated node"):
            load_mesh(_doc(elements={"kind": "quad4", "connectivity": [[0, 1, 1, 3]]}))

    def test_index_out_of_range(self):
        with pytest.raises(MeshError, match="out of range"):
            load_mesh(_doc(elements={"kind": "quad4", "connectivity": [[0, 1, 2, 9]]}))

    def test_self_intersecting_quad_reports_element(self):
        # bow-tie: zero signed area, Jacobian changes sign inside
        with pytest.raises(MeshError, match="inverted element 0") as err:
            load_mesh(_doc(elements={"kind": "quad4", "connectivity": [[0, 2, 1, 3]]}))
        assert err.value.element == 0

    @pytest.mark.parametrize("payload", [b"{not json", b'{"nodes": [[0, 0]]}'])
    def test_parse_errors(self, payload):
        with pytest.raises(MeshError, match="parse error"):
            load_mesh(payload)

    def test_node_sets_sorted_unique(self):
        mesh = load_mesh(_doc(node_sets={"g": [3, 0, 3]}))
        assert mesh.node_sets["g"].tolist() == [0, 3]

    def test_round_trip(self):
        mesh = load_mesh(_doc())
        again = load_mesh(json.dumps(mesh.to_dict()).encode())
        assert_allclose(again.nodes, mesh.nodes)
        assert again.elements.tolist() == mesh.elements.tolist()


class TestQuadrature:
    def test_unit_square_thick(self):
        mesh = load_mesh(_doc(thickness=2.0))
        q = precompute_quadrature(mesh)
        assert len(q) == 4
        assert q.weight.sum() == pytest.approx(2.0, rel=1e-12)

    def test_triangle_centroid(self):
        mesh = build_mesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]], kind="tri3")
        q = precompute_quadrature(mesh)
        assert len(q) == 1
        assert q[0].weight == pytest.approx(0.5, rel=1e-12)

    def test_distorted_quad_matches_shoelace(self):
        xy = [[0, 0], [2, 0], [2.2, 1.1], [0, 1]]
        mesh = build_mesh(xy, [[0, 1, 2, 3]], thickness=1.5)
        q = precompute_quadrature(mesh)
        assert q.weight.sum() == pytest.approx(shoelace(xy) * 1.5, rel=1e-12)

    def test_jittered_grid_volume_and_gradient_identity(self, rng):
        mesh = _grid(5, 4, jitter=0.3, rng=rng)
        q = precompute_quadrature(mesh)
        assert np.all(q.weight > 0)
        assert q.weight.sum() == pytest.approx(2.0 * 3.0, rel=1e-12)
        scale = np.abs(q.dNdX).max()
        assert np.abs(q.dNdX.sum(axis=1)).max() < 1e-12 * scale

    def test_iteration_yields_points(self):
        q = precompute_quadrature(load_mesh(_doc()))
        pts = list(q)
        assert [p.element for p in pts] == [0, 0, 0, 0]
        assert pts[0].dNdX.shape == (4, 2)


class TestDeformationGradient:
    def test_zero_displacement(self):
        mesh = _grid(2, 2)
        F = deformation_gradient(mesh, precompute_quadrature(mesh), np.zeros((9, 2)))
        assert_allclose(F, np.broadcast_to(np.eye(3), F.shape), atol=0)

    def test_affine_plane_strain(self):
        mesh = _grid(3, 2)
        A = np.array([[0.1, 0.0], [0.0, -0.05]])
        F = deformation_gradient(mesh, precompute_quadrature(mesh), mesh.nodes @ A.T)
        assert_allclose(F, np.broadcast_to(np.diag([1.1, 0.95, 1.0]), F.shape), rtol=1e-12, atol=1e-14)

    def test_affine_plane_stress(self):
        mesh = _grid(3, 2)
        A = np.array([[0.1, 0.0], [0.0, -0.05]])
        F = deformation_gradient(
            mesh, precompute_quadrature(mesh), mesh.nodes @ A.T, KinematicMode.INCOMPRESSIBLE_PLANE_STRESS
        )
        assert_allclose(F[:, 2, 2], 0.9569377990430622, rtol=1e-12)
        assert_allclose(F[:, :2, 2], 0.0)
        assert_allclose(F[:, 2, :2], 0.0)

    def test_translation_is_exact(self):
        mesh = _grid(2, 3)
        u = np.tile([0.37, -1.2], (mesh.n_nodes, 1))
        F = deformation_gradient(mesh, precompute_quadrature(mesh), u)
        assert np.array_equal(F, np.broadcast_to(np.eye(3), F.shape))

    def test_wrong_length(self):
        mesh = _grid(1, 1)
        with pytest.raises(MeshError):
            deformation_gradient(mesh, precompute_quadrature(mesh), np.zeros((3, 2)))

    def test_inverted_reports_element(self):
        mesh = _grid(2, 1)
        u = np.zeros((mesh.n_nodes, 2))
        # collapse the right element through itself
        u[[2, 5], 0] = -3.0
        with pytest.raises(InvertedDeformationError, match="locally inverted deformation in element 1") as err:
            deformation_gradient(mesh, precompute_quadrature(mesh), u, step_id=7)
        assert err.value.element == 1 and err.value.step_id == 7

    @settings(max_examples=40, deadline=None)
    @given(
        a=st.lists(st.floats(-0.4, 0.4), min_size=4, max_size=4),
        seed=st.integers(0, 2**16),
    )
    def test_affine_reproduction_property(self, a, seed):
        A = np.array(a).reshape(2, 2)
        if np.linalg.det(np.eye(2) + A) <= 0.05:
            return
        mesh = _grid(3, 3, jitter=0.25, rng=np.random.default_rng(seed))
        F = deformation_gradient(mesh, precompute_quadrature(mesh), mesh.nodes @ A.T)
        assert_allclose(F[:, :2, :2], np.broadcast_to(np.eye(2) + A, (len(F), 2, 2)), rtol=1e-12, atol=1e-12)


class TestDataset:
    @pytest.fixture
    def mesh(self):
        return load_mesh(_doc())

    def _ds(self, **step):
        base = {"step_id": 0, "displacements": [[0, 0]] * 4,
                "reactions": {"top": {"force": [0, 1.5], "mask": [False, True]}}}
        base.update(step)
        return json.dumps({"steps": [base]}).encode()

    def test_load(self, mesh):
        ds = load_dataset(self._ds(), mesh)
        assert len(ds) == 1
        r = ds.steps[0].reactions["top"]
        assert r.force.tolist() == [0, 1.5] and r.mask.tolist() == [False, True]

    def test_length_mismatch(self, mesh):
        with pytest.raises(MeshError, match="displacements"):
            load_dataset(self._ds(displacements=[[0, 0]] * 3), mesh)

    def test_unknown_reaction_set(self, mesh):
        with pytest.raises(MeshError, match="unknown reaction set"):
            load_dataset(self._ds(reactions={"grip": {"force": [0, 0]}}), mesh)

    def test_all_false_mask(self, mesh):
        with pytest.raises(MeshError, match="all-false mask"):
            load_dataset(self._ds(reactions={"top": {"force": [0, 0], "mask": [False, False]}}), mesh)

    def test_round_trip(self, mesh):
        ds = load_dataset(self._ds(), mesh)
        again = load_dataset(json.dumps(ds.to_dict()).encode(), mesh)
        assert isinstance(again, Dataset)
        assert again.to_dict() == ds.to_dict()
