"""Synthetic uniaxial experiments.

A total-Lagrangian Newton solver drives structured strip meshes through a
stretch program with a known ground-truth material. The resulting noise-free
(displacement, reaction) pairs stand in for full-field measurements and
load-cell readings; :func:`add_noise` perturbs them.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .equilibrium import internal_forces
from .errors import ConfigError, DomainError, MeshError, SolverError
from .kinematics import (
    Dataset,
    KinematicMode,
    LoadStep,
    Mesh,
    Reaction,
    build_mesh,
    deformation_gradient,
    max_principal_stretch,
    precompute_quadrature,
)
from .invariants import cof3, right_cauchy_green
from .material import Hyperelastic, _det, neo_hookean_energy, neo_hookean_stress

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Ground-truth materials


@dataclass
class NeoHookean(Hyperelastic):
    mu: float
    lam: float
    mode: KinematicMode = KinematicMode.PLANE_STRAIN

    def __post_init__(self):
        self.mode = KinematicMode.parse(self.mode)
        if self.mu <= 0 or self.lam < 0:
            raise ConfigError("Neo-Hookean moduli must be positive")

    def energy_3d(self, F):
        return neo_hookean_energy(F, self.mu, self.lam)

    def stress_3d(self, F):
        return neo_hookean_stress(F, self.mu, self.lam)

    def to_dict(self):
        return {"kind": "neo_hookean", "mu": self.mu, "lam": self.lam}


@dataclass
class MooneyRivlin(Hyperelastic):
    """W = c10 (I1-3) + c01 (I2-3) - 2 (c10 + 2 c01) ln J + lam/2 (J-1)^2.

    The ln J coefficient cancels the identity slopes of I1 and I2, so the
    reference state is stress free.
    """

    c10: float
    c01: float
    lam: float
    mode: KinematicMode = KinematicMode.PLANE_STRAIN

    def __post_init__(self):
        self.mode = KinematicMode.parse(self.mode)
        if self.c10 <= 0 or self.c01 < 0 or self.lam < 0:
            raise ConfigError("Mooney-Rivlin moduli must be positive")

    def energy_3d(self, F):
        J = _det(F)
        C = right_cauchy_green(F)
        I1 = np.trace(C, axis1=-2, axis2=-1)
        I2 = 0.5 * (I1**2 - np.sum(C * C, axis=(-2, -1)))
        return (
            self.c10 * (I1 - 3.0)
            + self.c01 * (I2 - 3.0)
            - 2.0 * (self.c10 + 2.0 * self.c01) * np.log(J)
            + 0.5 * self.lam * (J - 1.0) ** 2
        )

    def stress_3d(self, F):
        J = _det(F)
        C = right_cauchy_green(F)
        I1 = np.trace(C, axis1=-2, axis2=-1)[..., None, None]
        FinvT = cof3(F) / J[..., None, None]
        vol = -2.0 * (self.c10 + 2.0 * self.c01) + self.lam * J * (J - 1.0)
        return 2.0 * self.c10 * F + 2.0 * self.c01 * (I1 * F - F @ C) + vol[..., None, None] * FinvT

    def to_dict(self):
        return {"kind": "mooney_rivlin", "c10": self.c10, "c01": self.c01, "lam": self.lam}


def material_from_dict(d: dict, mode=KinematicMode.PLANE_STRAIN) -> Hyperelastic:
    try:
        kind = d["kind"]
        if kind == "neo_hookean":
            return NeoHookean(float(d["mu"]), float(d["lam"]), mode)
        if kind == "mooney_rivlin":
            return MooneyRivlin(float(d["c10"]), float(d["c01"]), float(d["lam"]), mode)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed material: {exc}") from exc
    raise ConfigError(f"unknown ground-truth material {kind!r}")


# ---------------------------------------------------------------------------
# Geometry


@dataclass(frozen=True)
class Strip:
    width: float
    height: float
    nx: int
    ny: int
    thickness: float = 1.0

    def to_dict(self):
        return {
            "kind": "strip",
            "width": self.width,
            "height": self.height,
            "nx": self.nx,
            "ny": self.ny,
            "thickness": self.thickness,
        }


@dataclass(frozen=True)
class NotchedStrip:
    """Strip with the listed (ix, iy) grid elements removed."""

    width: float
    height: float
    nx: int
    ny: int
    notch: tuple = ()
    thickness: float = 1.0

    @classmethod
    def edge_notch(cls, width, height, nx, ny, depth=3, rows=2, side="left", thickness=1.0):
        """Rectangular notch ``depth`` elements deep, ``rows`` high, centred vertically."""
        j0 = (ny - rows) // 2
        cols = range(depth) if side == "left" else range(nx - depth, nx)
        notch = tuple((i, j) for j in range(j0, j0 + rows) for i in cols)
        return cls(width, height, nx, ny, notch, thickness)

    def mirrored(self) -> "NotchedStrip":
        return NotchedStrip(
            self.width,
            self.height,
            self.nx,
            self.ny,
            tuple((self.nx - 1 - i, j) for i, j in self.notch),
            self.thickness,
        )

    def to_dict(self):
        return {
            "kind": "notched_strip",
            "width": self.width,
            "height": self.height,
            "nx": self.nx,
            "ny": self.ny,
            "notch": [list(p) for p in self.notch],
            "thickness": self.thickness,
        }


def geometry_from_dict(d: dict):
    try:
        kind = d["kind"]
        common = dict(
            width=float(d["width"]),
            height=float(d["height"]),
            nx=int(d["nx"]),
            ny=int(d["ny"]),
            thickness=float(d.get("thickness", 1.0)),
        )
        if kind == "strip":
            return Strip(**common)
        if kind == "notched_strip":
            if "notch" in d:
                return NotchedStrip(notch=tuple(tuple(int(v) for v in p) for p in d["notch"]), **common)
            return NotchedStrip.edge_notch(
                depth=int(d.get("notch_depth", 3)),
                rows=int(d.get("notch_rows", 2)),
                side=d.get("notch_side", "left"),
                **common,
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed geometry: {exc}") from exc
    raise ConfigError(f"unknown geometry kind {kind!r}")


def _element_components(elements: np.ndarray, n_nodes: int) -> int:
    parent = list(range(len(elements)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    owner = {}
    for e, row in enumerate(elements):
        for a in row:
            a = int(a)
            if a in owner:
                ra, rb = find(owner[a]), find(e)
                if ra != rb:
                    parent[ra] = rb
            else:
                owner[a] = e
    return len({find(e) for e in range(len(elements))})


def generate_mesh(geometry) -> Mesh:
    """Structured quad4 grid with "bottom", "top", "left" and "right" node sets."""
    nx, ny = geometry.nx, geometry.ny
    if nx < 1 or ny < 1:
        raise ConfigError("nx and ny must be >= 1")
    xs = np.linspace(0.0, geometry.width, nx + 1)
    ys = np.linspace(0.0, geometry.height, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    def nid(i, j):
        return j * (nx + 1) + i

    removed = set(getattr(geometry, "notch", ()))
    for i, j in removed:
        if not (0 <= i < nx and 0 <= j < ny):
            raise ConfigError(f"notch element ({i}, {j}) outside the grid")
    conn = np.array(
        [
            [nid(i, j), nid(i + 1, j), nid(i + 1, j + 1), nid(i, j + 1)]
            for j in range(ny)
            for i in range(nx)
            if (i, j) not in removed
        ],
        dtype=np.int64,
    )
    if conn.size == 0:
        raise MeshError("notch removes every element (disconnected)")
    used = np.unique(conn)
    remap = -np.ones(len(nodes), dtype=np.int64)
    remap[used] = np.arange(len(used))
    nodes = nodes[used]
    conn = remap[conn]
    if _element_components(conn, len(nodes)) != 1:
        raise MeshError("notch removal leaves the mesh disconnected")
    tol = 1e-9 * max(geometry.width, geometry.height)
    sets = {
        "bottom": np.nonzero(np.abs(nodes[:, 1]) < tol)[0],
        "top": np.nonzero(np.abs(nodes[:, 1] - geometry.height) < tol)[0],
        "left": np.nonzero(np.abs(nodes[:, 0]) < tol)[0],
        "right": np.nonzero(np.abs(nodes[:, 0] - geometry.width) < tol)[0],
    }
    return build_mesh(nodes, conn, "quad4", sets, geometry.thickness)


# ---------------------------------------------------------------------------
# Load programs and noise


@dataclass
class LoadProgram:
    """Uniaxial program: "bottom" held, "top" displaced vertically.

    ``grips="clamped"`` fixes both components on the grips; ``"sliding"``
    only fixes the vertical component (plus one horizontal pin) so that
    homogeneous states are possible.
    """

    geometry: object
    stretches: list
    grips: str = "clamped"
    reaction_mask: tuple = (True, True)

    def __post_init__(self):
        s = np.asarray(self.stretches, dtype=float)
        if s.size == 0 or s[0] < 1.0 or np.any(np.diff(s) <= 0):
            raise ConfigError("stretch targets must be strictly increasing and >= 1")
        if self.grips not in ("clamped", "sliding"):
            raise ConfigError(f"unknown grip type {self.grips!r}")
        self.stretches = [float(v) for v in s]


@dataclass(frozen=True)
class NoiseSpec:
    sigma_u: float = 0.0
    sigma_r: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.sigma_u < 0 or self.sigma_r < 0:
            raise ConfigError("noise levels must be non-negative")


def add_noise(dataset: Dataset, spec: NoiseSpec) -> Dataset:
    """I.i.d. Gaussian noise on every displacement and reaction component."""
    rng = np.random.default_rng(spec.seed)
    steps = []
    for step in dataset.steps:
        du = rng.standard_normal(step.displacements.shape)
        u = step.displacements + spec.sigma_u * du if spec.sigma_u > 0 else step.displacements.copy()
        reactions = {}
        for name in sorted(step.reactions):
            r = step.reactions[name]
            dr = rng.standard_normal(2)
            force = r.force + spec.sigma_r * dr if spec.sigma_r > 0 else r.force.copy()
            reactions[name] = Reaction(force, r.mask.copy())
        steps.append(LoadStep(step.step_id, u, {k: reactions[k] for k in step.reactions}))
    return Dataset(steps)


# ---------------------------------------------------------------------------
# Newton solver


def _node_adjacency(mesh: Mesh):
    nbrs = [set() for _ in range(mesh.n_nodes)]
    for row in mesh.elements:
        for a in row:
            nbrs[int(a)].update(int(b) for b in row)
    return [np.array(sorted(s)) for s in nbrs]


def _colour_nodes(nbrs):
    """Greedy distance-2 colouring on the element-sharing graph.

    Nodes of one colour have disjoint neighbourhoods, so perturbing them
    together still lets every force change be attributed to one column.
    """
    colour = -np.ones(len(nbrs), dtype=np.int64)
    for a in range(len(nbrs)):
        ring = set()
        for b in nbrs[a]:
            ring.update(nbrs[b].tolist())
        taken = {int(colour[b]) for b in ring if colour[b] >= 0}
        c = 0
        while c in taken:
            c += 1
        colour[a] = c
    return colour


class _Assembler:
    def __init__(self, mesh: Mesh, material: Hyperelastic, fixed: np.ndarray):
        self.mesh = mesh
        self.quad = precompute_quadrature(mesh)
        self.material = material
        self.fixed = fixed  # (n_nodes, 2) bool
        self.free_dofs = np.nonzero(~fixed.ravel())[0]
        dof_index = -np.ones(2 * mesh.n_nodes, dtype=np.int64)
        dof_index[self.free_dofs] = np.arange(len(self.free_dofs))
        self.dof_index = dof_index
        nbrs = _node_adjacency(mesh)
        colour = _colour_nodes(nbrs)
        # per colour: perturbed nodes a and (a, b) neighbour pairs
        self.groups = []
        for c in range(int(colour.max()) + 1):
            nodes = np.nonzero(colour == c)[0]
            pairs_a = np.concatenate([np.full(len(nbrs[a]), a) for a in nodes])
            pairs_b = np.concatenate([nbrs[a] for a in nodes])
            self.groups.append((nodes, pairs_a, pairs_b))

    def forces(self, u):
        return internal_forces(self.mesh, self.quad, self.material, u)

    def tangent(self, u, h):
        """Central-difference tangent d f_free / d u_free (dense)."""
        n = len(self.free_dofs)
        K = np.zeros((n, n))
        for nodes, pa, pb in self.groups:
            for i in range(2):
                du = np.zeros_like(u)
                du[nodes, i] = h
                df = (self.forces(u + du) - self.forces(u - du)) / (2 * h)
                cols = self.dof_index[2 * pa + i]
                for j in range(2):
                    rows = self.dof_index[2 * pb + j]
                    keep = (rows >= 0) & (cols >= 0)
                    K[rows[keep], cols[keep]] = df[pb[keep], j]
        return K


def _dirichlet(mesh: Mesh, program: LoadProgram):
    fixed = np.zeros((mesh.n_nodes, 2), dtype=bool)
    bottom, top = mesh.node_sets["bottom"], mesh.node_sets["top"]
    fixed[bottom, 1] = True
    fixed[top, 1] = True
    if program.grips == "clamped":
        fixed[bottom, 0] = True
        fixed[top, 0] = True
    else:
        fixed[bottom[np.argmin(mesh.nodes[bottom, 0])], 0] = True
    return fixed


def forward_solve(
    mesh: Mesh,
    material: Hyperelastic,
    program: LoadProgram,
    tol: float = 1e-9,
    max_iter: int = 30,
    max_bisections: int = 8,
    max_substeps: int = 16,
) -> Dataset:
    """Quasi-static solve of every stretch target; returns a noise-free dataset.

    Each target is approached from the last converged state; a failed Newton
    solve halves the increment up to ``max_bisections`` times, and at most
    ``max_substeps`` accepted increments are spent per target, before a
    :class:`SolverError` is raised.
    """
    fixed = _dirichlet(mesh, program)
    asm = _Assembler(mesh, material, fixed)
    y = mesh.nodes[:, 1]
    y0 = float(y.min())
    height = float(y.max() - y0)
    top, bottom = mesh.node_sets["top"], mesh.node_sets["bottom"]
    scale = float(np.ptp(mesh.nodes, axis=0).max())
    h_fd = 1e-6 * scale

    def newton(u):
        for it in range(max_iter):
            f = asm.forces(u)
            r = f.ravel()[asm.free_dofs]
            if not np.all(np.isfinite(r)):
                return None
            if np.max(np.abs(r), initial=0.0) < tol:
                return u
            K = asm.tangent(u, h_fd)
            try:
                step = np.linalg.solve(K, -r)
            except np.linalg.LinAlgError:
                return None
            alpha = 1.0
            for _ in range(12):
                trial = u.copy()
                trial.ravel()[asm.free_dofs] += alpha * step
                try:
                    deformation_gradient(mesh, asm.quad, trial, material.mode)
                    break
                except DomainError:
                    alpha *= 0.5
            else:
                return None
            u = trial
        return None

    mask = np.asarray(program.reaction_mask, dtype=bool)
    u_c = np.zeros((mesh.n_nodes, 2))
    lam_c = 1.0
    steps = []
    for k, target in enumerate(program.stretches):
        inc = target - lam_c
        cuts = substeps = 0
        while lam_c < target:
            if substeps >= max_substeps:
                raise SolverError(
                    f"increment budget exhausted towards stretch {target:g}; "
                    f"last converged stretch {lam_c:g}",
                    last_converged=lam_c,
                )
            trial_lam = min(lam_c + inc, target)
            u = u_c.copy()
            u[:, 1] += (trial_lam - lam_c) * (y - y0)
            u[top, 1] = (trial_lam - 1.0) * height
            u[bottom, 1] = 0.0
            u[fixed[:, 0], 0] = 0.0
            with np.errstate(all="ignore"):
                try:
                    sol = newton(u)
                except DomainError:
                    sol = None
            if sol is None:
                cuts += 1
                if cuts > max_bisections:
                    raise SolverError(
                        f"no convergence towards stretch {target:g}; "
                        f"last converged stretch {lam_c:g}",
                        last_converged=lam_c,
                    )
                inc *= 0.5
                log.debug("bisecting: increment %.3g", inc)
                continue
            lam_c, u_c = trial_lam, sol
            substeps += 1
        f = asm.forces(u_c)
        reactions = {
            "top": Reaction(f[top].sum(axis=0), mask.copy()),
            "bottom": Reaction(f[bottom].sum(axis=0), mask.copy()),
        }
        steps.append(LoadStep(k, u_c.copy(), reactions))
    return Dataset(steps)


def max_local_stretch(mesh: Mesh, dataset: Dataset, mode=KinematicMode.PLANE_STRAIN) -> float:
    """Largest principal stretch over all quadrature points and steps."""
    quad = precompute_quadrature(mesh)
    return max(
        max_principal_stretch(deformation_gradient(mesh, quad, s.displacements, mode))
        for s in dataset.steps
    )


# ---------------------------------------------------------------------------
# Default two-experiment design


@dataclass
class ExperimentSpec:
    name: str
    geometry: object
    program: LoadProgram = field(default=None)


def default_experiments(nx=8, ny=24):
    """Strip (training/validation) and notched strip (test) programs."""
    strip = Strip(10.0, 30.0, nx, ny)
    notched = NotchedStrip.edge_notch(10.0, 30.0, nx, ny, depth=max(1, (3 * nx) // 8), rows=2)
    return [
        ExperimentSpec("strip", strip, LoadProgram(strip, list(np.linspace(1.05, 2.0, 30)))),
        ExperimentSpec("notched", notched, LoadProgram(notched, list(np.linspace(1.04, 1.6, 15)))),
    ]
