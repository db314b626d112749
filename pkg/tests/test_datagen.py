import numpy as np
import pytest
from numpy.testing import assert_allclose

from _oracles import central_diff, nh_uniaxial_plane_strain, random_F
from pannid import datagen
from pannid.datagen import (
    LoadProgram,
    MooneyRivlin,
    NeoHookean,
    NoiseSpec,
    NotchedStrip,
    Strip,
    add_noise,
    forward_solve,
    generate_mesh,
)
from pannid.equilibrium import DofPartition, equilibrium_loss
from pannid.errors import ConfigError, MeshError, SolverError
from pannid.kinematics import KinematicMode, deformation_gradient, precompute_quadrature

PS = KinematicMode.PLANE_STRAIN
IPS = KinematicMode.INCOMPRESSIBLE_PLANE_STRESS


class TestMaterials:
    @pytest.mark.parametrize("mode", [PS, IPS])
    def test_mooney_rivlin_stress_free_reference(self, mode):
        m = MooneyRivlin(0.1, 0.2, 1.0, mode)
        assert float(m.energy(np.eye(3))) == 0.0
        assert np.abs(m.stress(np.eye(3))).max() < 1e-15

    def test_mooney_rivlin_log_coefficient(self):
        # P(I) = 2 c10 I + 2 c01 (3I - I) + c_ln I = 0  =>  c_ln = -2 (c10 + 2 c01)
        c10, c01 = 0.3, 0.7
        P = MooneyRivlin(c10, c01, 0.0).stress_3d(np.eye(3))
        assert_allclose(P, (2 * c10 + 4 * c01 - 2 * (c10 + 2 * c01)) * np.eye(3), atol=1e-15)

    @pytest.mark.parametrize("material", [MooneyRivlin(0.1, 0.2, 1.0), NeoHookean(0.4, 4.0)])
    def test_stress_matches_energy(self, material, rng):
        for _ in range(10):
            F = random_F(rng)
            fd = central_diff(lambda G: float(material.energy(G)), F, h=1e-6)
            assert_allclose(material.stress(F), fd, rtol=1e-7, atol=1e-8)

    @pytest.mark.parametrize("bad", [dict(kind="neo_hookean", mu=-1, lam=1), dict(kind="gent"), dict(kind="mooney_rivlin", c10=1)])
    def test_material_from_dict_errors(self, bad):
        with pytest.raises(ConfigError):
            datagen.material_from_dict(bad)

    def test_material_from_dict(self):
        m = datagen.material_from_dict({"kind": "mooney_rivlin", "c10": 0.1, "c01": 0.2, "lam": 1.0})
        assert m.to_dict() == {"kind": "mooney_rivlin", "c10": 0.1, "c01": 0.2, "lam": 1.0}


class TestMesh:
    def test_strip_counts(self):
        mesh = generate_mesh(Strip(10, 30, 2, 6))
        assert mesh.n_nodes == 21 and mesh.n_elements == 12
        assert mesh.node_sets["bottom"].tolist() == [0, 1, 2]
        assert len(mesh.node_sets["top"]) == 3

    def test_unit_square(self):
        mesh = generate_mesh(Strip(1, 1, 1, 1))
        assert mesh.n_elements == 1
        assert_allclose(precompute_quadrature(mesh).weight.sum(), 1.0)

    def test_notch_removes_elements(self):
        g = NotchedStrip.edge_notch(10, 30, 8, 24, depth=3, rows=2)
        mesh = generate_mesh(g)
        assert mesh.n_elements == 8 * 24 - 6
        # area shrinks by the notch
        area = precompute_quadrature(mesh).weight.sum()
        assert area == pytest.approx(300 - 6 * (10 / 8) * (30 / 24))

    def test_full_row_notch_disconnects(self):
        with pytest.raises(MeshError, match="disconnected"):
            generate_mesh(NotchedStrip(4, 4, 2, 3, notch=((0, 1), (1, 1))))

    def test_notch_everything(self):
        with pytest.raises(MeshError, match="disconnected"):
            generate_mesh(NotchedStrip(1, 1, 1, 1, notch=((0, 0),)))

    def test_notch_outside_grid(self):
        with pytest.raises(ConfigError):
            generate_mesh(NotchedStrip(1, 1, 1, 1, notch=((3, 0),)))

    def test_bad_grid(self):
        with pytest.raises(ConfigError):
            generate_mesh(Strip(1, 1, 0, 1))

    def test_geometry_round_trip(self):
        for g in (Strip(10, 30, 2, 6, 2.0), NotchedStrip.edge_notch(10, 30, 4, 8, depth=2)):
            assert datagen.geometry_from_dict(g.to_dict()) == g


class TestLoadProgram:
    @pytest.mark.parametrize("stretches", [[1.1, 1.1], [1.2, 1.1], [0.9, 1.2], []])
    def test_invalid(self, stretches):
        with pytest.raises(ConfigError):
            LoadProgram(Strip(1, 1, 1, 1), stretches)

    def test_unknown_grips(self):
        with pytest.raises(ConfigError):
            LoadProgram(Strip(1, 1, 1, 1), [1.1], grips="glued")


class TestForwardSolve:
    def test_single_element_matches_bisection_oracle(self):
        g = Strip(1, 1, 1, 1)
        mesh = generate_mesh(g)
        ds = forward_solve(mesh, NeoHookean(0.4, 4.0), LoadProgram(g, [1.1], grips="sliding"))
        P22, lateral = nh_uniaxial_plane_strain(0.4, 4.0, 1.1)
        assert ds.steps[0].reactions["top"].force[1] == pytest.approx(P22 * 1.0 * 1.0, rel=1e-8)
        F = deformation_gradient(mesh, precompute_quadrature(mesh), ds.steps[0].displacements)
        assert_allclose(F[:, 0, 0], lateral, rtol=1e-8)

    def test_homogeneous_patch(self):
        g = Strip(3, 6, 3, 4)
        mesh = generate_mesh(g)
        material = MooneyRivlin(0.1, 0.2, 1.0)
        ds = forward_solve(mesh, material, LoadProgram(g, [1.2, 1.4], grips="sliding"))
        single = generate_mesh(Strip(3, 6, 1, 1))
        ref = forward_solve(single, material, LoadProgram(Strip(3, 6, 1, 1), [1.2, 1.4], grips="sliding"))
        q, q1 = precompute_quadrature(mesh), precompute_quadrature(single)
        for s, r in zip(ds.steps, ref.steps):
            F = deformation_gradient(mesh, q, s.displacements)
            F1 = deformation_gradient(single, q1, r.displacements)
            assert np.abs(F - F[0]).max() < 1e-10
            assert_allclose(F[0], F1[0], atol=1e-10)

    def test_zero_stretch(self):
        g = Strip(2, 4, 2, 2)
        mesh = generate_mesh(g)
        ds = forward_solve(mesh, NeoHookean(0.4, 4.0), LoadProgram(g, [1.0]))
        assert np.all(ds.steps[0].displacements == 0)
        assert np.all(ds.steps[0].reactions["top"].force == 0)

    @pytest.mark.parametrize("mode", [PS, IPS])
    @pytest.mark.parametrize("material", [NeoHookean(0.4, 4.0), MooneyRivlin(0.1, 0.2, 1.0)])
    def test_closed_loop(self, mode, material):
        g = NotchedStrip.edge_notch(4, 8, 4, 8, depth=1, rows=2)
        mesh = generate_mesh(g)
        material = type(material)(*[getattr(material, f) for f in material.__dataclass_fields__ if f != "mode"], mode)
        ds = forward_solve(mesh, material, LoadProgram(g, [1.1, 1.25, 1.4]))
        q = precompute_quadrature(mesh)
        part = DofPartition.for_step(mesh, ds.steps[0])
        for step in ds.steps:
            assert equilibrium_loss(mesh, q, material, step, part).loss < 1e-8
            r = step.reactions
            assert_allclose(r["top"].force, -r["bottom"].force, atol=1e-8)

    def test_mirror_symmetry(self):
        g = NotchedStrip.edge_notch(4, 8, 4, 8, depth=1, rows=2, side="left")
        mirrored = g.mirrored()
        assert set(mirrored.notch) == set(NotchedStrip.edge_notch(4, 8, 4, 8, depth=1, rows=2, side="right").notch)
        material = MooneyRivlin(0.1, 0.2, 1.0)
        stretches = [1.1, 1.3]
        a = forward_solve(generate_mesh(g), material, LoadProgram(g, stretches))
        b = forward_solve(generate_mesh(mirrored), material, LoadProgram(mirrored, stretches))
        for sa, sb in zip(a.steps, b.steps):
            Ra, Rb = sa.reactions["top"].force, sb.reactions["top"].force
            assert Ra[0] == pytest.approx(-Rb[0], abs=1e-9)
            assert Ra[1] == pytest.approx(Rb[1], abs=1e-9)

    def test_coloured_tangent_equals_dense(self):
        g = NotchedStrip.edge_notch(3, 4, 3, 4, depth=1, rows=1)
        mesh = generate_mesh(g)
        program = LoadProgram(g, [1.2])
        fixed = datagen._dirichlet(mesh, program)
        asm = datagen._Assembler(mesh, MooneyRivlin(0.1, 0.2, 1.0), fixed)
        rng = np.random.default_rng(1)
        u = 0.05 * rng.standard_normal((mesh.n_nodes, 2))
        h = 1e-6
        dense = np.zeros((len(asm.free_dofs), len(asm.free_dofs)))
        for k, dof in enumerate(asm.free_dofs):
            du = np.zeros(2 * mesh.n_nodes)
            du[dof] = h
            du = du.reshape(-1, 2)
            df = (asm.forces(u + du) - asm.forces(u - du)).ravel() / (2 * h)
            dense[:, k] = df[asm.free_dofs]
        assert_allclose(asm.tangent(u, h), dense, atol=1e-12)

    def test_unsolvable_program_reports_last_stretch(self):
        g = Strip(10, 30, 2, 6)
        with pytest.raises(SolverError, match="last converged stretch") as err:
            forward_solve(generate_mesh(g), NeoHookean(0.4, 4.0), LoadProgram(g, [50.0]))
        assert 1.0 <= err.value.last_converged < 50.0

    def test_reaction_mask_recorded(self):
        g = Strip(2, 2, 1, 1)
        ds = forward_solve(generate_mesh(g), NeoHookean(0.4, 4.0), LoadProgram(g, [1.1], reaction_mask=(False, True)))
        assert ds.steps[0].reactions["top"].mask.tolist() == [False, True]


@pytest.fixture(scope="module")
def clean():
    g = Strip(2, 4, 2, 4)
    return forward_solve(generate_mesh(g), NeoHookean(0.4, 4.0), LoadProgram(g, [1.1, 1.2, 1.3]))


class TestNoise:
    def test_zero_noise_bit_identical(self, clean):
        noisy = add_noise(clean, NoiseSpec(0.0, 0.0, 5))
        for a, b in zip(clean.steps, noisy.steps):
            assert np.array_equal(a.displacements, b.displacements)
            assert all(np.array_equal(a.reactions[k].force, b.reactions[k].force) for k in a.reactions)

    def test_seeded(self, clean):
        a = add_noise(clean, NoiseSpec(0.01, 0.1, 3))
        b = add_noise(clean, NoiseSpec(0.01, 0.1, 3))
        c = add_noise(clean, NoiseSpec(0.01, 0.1, 4))
        assert a.to_dict() == b.to_dict()
        assert a.to_dict() != c.to_dict()
        assert [s.step_id for s in a.steps] == [s.step_id for s in clean.steps]

    def test_statistics(self):
        g = Strip(10, 10, 50, 50)
        mesh = generate_mesh(g)
        zero = datagen.Dataset([datagen.LoadStep(k, np.zeros((mesh.n_nodes, 2)), {}) for k in range(2)])
        noisy = add_noise(zero, NoiseSpec(0.001, 0.0, 0))
        samples = np.concatenate([s.displacements.ravel() for s in noisy.steps])
        assert samples.size >= 1e4
        assert np.std(samples) == pytest.approx(0.001, rel=0.05)
        assert abs(np.mean(samples)) < 5 * 0.001 / np.sqrt(samples.size)

    def test_negative_sigma(self):
        with pytest.raises(ConfigError):
            NoiseSpec(-1.0)


def test_default_notched_program_reaches_local_stretch_two():
    spec = datagen.default_experiments()[1]
    mesh = generate_mesh(spec.geometry)
    ds = forward_solve(mesh, MooneyRivlin(0.1, 0.2, 1.0), spec.program)
    assert datagen.max_local_stretch(mesh, ds) >= 2.0
