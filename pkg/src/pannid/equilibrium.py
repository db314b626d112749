"""Internal-force assembly and the equilibrium-gap loss.

For a measured displacement field the nodal internal forces

    f_a = sum_q w_q P(F_q) dN_a/dX|_q

must vanish at free nodes and, summed over each grip node set, match the
measured reaction. The loss penalises both gaps:

    L = sum_{a free} |f_a|^2 / s^2
        + lambda_r * sum_b |mask_b * (sum_{a in b} f_a - R_b)|^2 / s^2

with s = max_b |R_b| floored at 1 N.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InvertedDeformationError
from .kinematics import LoadStep, Mesh, QuadratureTable, deformation_gradient
from .material import Hyperelastic

DEFAULT_LAMBDA_R = 100.0
MIN_FORCE_SCALE = 1.0


@dataclass(frozen=True, eq=False)
class DofPartition:
    """Node partition into free, reaction and fixed nodes.

    Fixed nodes take part in assembly but in neither loss term.
    """

    free: np.ndarray
    reaction: dict  # name -> node indices
    fixed: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @classmethod
    def from_mesh(cls, mesh: Mesh, reaction_sets=(), fixed_sets=()) -> "DofPartition":
        reaction = {}
        seen = np.zeros(mesh.n_nodes, dtype=bool)
        for name in reaction_sets:
            if name not in mesh.node_sets:
                raise ConfigError(f"unknown reaction set {name!r}")
            idx = mesh.node_sets[name]
            if seen[idx].any():
                raise ConfigError(f"reaction set {name!r} overlaps another reaction set")
            seen[idx] = True
            reaction[name] = idx
        fixed_mask = np.zeros(mesh.n_nodes, dtype=bool)
        for name in fixed_sets:
            if name not in mesh.node_sets:
                raise ConfigError(f"unknown fixed set {name!r}")
            fixed_mask[mesh.node_sets[name]] = True
        if (fixed_mask & seen).any():
            raise ConfigError("fixed and reaction sets overlap")
        free = np.nonzero(~(seen | fixed_mask))[0]
        if free.size == 0:
            raise ConfigError("empty free node set")
        return cls(free=free, reaction=reaction, fixed=np.nonzero(fixed_mask)[0])

    @classmethod
    def for_step(cls, mesh: Mesh, step: LoadStep, fixed_sets=()) -> "DofPartition":
        return cls.from_mesh(mesh, sorted(step.reactions), fixed_sets)


@dataclass(eq=False)
class EquilibriumReport:
    step_id: int
    inner_residual: float  # N^2, mean squared free-node force
    boundary_residual: float  # N^2, summed masked reaction mismatch
    inner_term: float
    boundary_term: float
    loss: float
    scale: float
    forces: np.ndarray  # (n_nodes, 2)
    reaction_sums: dict


def _scatter(mesh: Mesh, quad: QuadratureTable, fq: np.ndarray) -> np.ndarray:
    """Sum per-point element-node forces (nq, nen, 2) into (n_nodes, 2)."""
    nodes = mesh.elements[quad.element].ravel()
    out = np.empty((mesh.n_nodes, 2))
    for i in range(2):
        out[:, i] = np.bincount(nodes, weights=fq[..., i].ravel(), minlength=mesh.n_nodes)
    return out


def _forces_from_stress(mesh, quad, P):
    fq = quad.weight[:, None, None] * (quad.dNdX @ np.swapaxes(P[:, :2, :2], 1, 2))
    return _scatter(mesh, quad, fq)


def internal_forces(mesh: Mesh, quad: QuadratureTable, model: Hyperelastic, u, step_id=None) -> np.ndarray:
    """Nodal internal forces (n_nodes, 2) in N."""
    F = deformation_gradient(mesh, quad, u, model.mode, step_id)
    return _forces_from_stress(mesh, quad, model.stress(F))


def total_energy(mesh: Mesh, quad: QuadratureTable, model: Hyperelastic, u) -> float:
    """Stored energy sum_q w_q W(F_q) in mJ."""
    F = deformation_gradient(mesh, quad, u, model.mode)
    return float(quad.weight @ model.energy(F))


def force_scale(step: LoadStep) -> float:
    norms = [float(np.linalg.norm(r.force)) for r in step.reactions.values()]
    return max([MIN_FORCE_SCALE] + norms)


def _report(step, part, forces, lambda_r):
    s = force_scale(step)
    f_free = forces[part.free]
    inner_sq = float(np.sum(f_free * f_free))
    boundary_sq = 0.0
    sums = {}
    for name, idx in part.reaction.items():
        total = forces[idx].sum(axis=0)
        sums[name] = total
        r = step.reactions.get(name)
        if r is None:
            continue
        gap = np.where(r.mask, total - r.force, 0.0)
        boundary_sq += float(gap @ gap)
    inner_term = inner_sq / s**2
    boundary_term = boundary_sq / s**2
    return EquilibriumReport(
        step_id=step.step_id,
        inner_residual=inner_sq / len(part.free),
        boundary_residual=boundary_sq,
        inner_term=inner_term,
        boundary_term=boundary_term,
        loss=inner_term + lambda_r * boundary_term,
        scale=s,
        forces=forces,
        reaction_sums=sums,
    )


def equilibrium_loss(
    mesh: Mesh,
    quad: QuadratureTable,
    model: Hyperelastic,
    step: LoadStep,
    part: DofPartition,
    lambda_r: float = DEFAULT_LAMBDA_R,
) -> EquilibriumReport:
    if len(part.free) == 0:
        raise ConfigError("empty free node set")
    forces = internal_forces(mesh, quad, model, step.displacements, step.step_id)
    return _report(step, part, forces, lambda_r)


def _force_cogradient(step, part, report, lambda_r, n_nodes):
    """d loss / d f_a for every node, shape (n_nodes, 2)."""
    s2 = report.scale**2
    fbar = np.zeros((n_nodes, 2))
    fbar[part.free] = 2.0 * report.forces[part.free] / s2
    for name, idx in part.reaction.items():
        r = step.reactions.get(name)
        if r is None:
            continue
        gap = np.where(r.mask, report.reaction_sums[name] - r.force, 0.0)
        fbar[idx] = 2.0 * lambda_r * gap / s2
    return fbar


def step_loss_and_gradient(mesh, quad, model, step, part, lambda_r=DEFAULT_LAMBDA_R):
    """(report, d loss / d theta) for a single load step."""
    F = deformation_gradient(mesh, quad, step.displacements, model.mode, step.step_id)
    P = model.stress(F)
    report = _report(step, part, _forces_from_stress(mesh, quad, P), lambda_r)
    fbar = _force_cogradient(step, part, report, lambda_r, mesh.n_nodes)
    fe = fbar[mesh.elements[quad.element]]  # (nq, nen, 2)
    U = np.zeros_like(F)
    U[:, :2, :2] = quad.weight[:, None, None] * (np.swapaxes(fe, 1, 2) @ quad.dNdX)
    return report, model.stress_weight_gradient(F, U)


def loss_and_gradient(mesh, quad, model, steps, part, lambda_r=DEFAULT_LAMBDA_R, audit=None):
    """Summed loss and its raw-parameter gradient over ``steps``.

    Accumulation runs in list order so results are bit-reproducible. When
    given, ``audit`` (a Counter) is incremented with every visited step id.
    """
    if not steps:
        raise ConfigError("at least one load step is required")
    total = 0.0
    grad = np.zeros(model.n_params)
    for step in steps:
        if audit is not None:
            audit[step.step_id] += 1
        rep, g = step_loss_and_gradient(mesh, quad, model, step, part, lambda_r)
        total += rep.loss
        grad += g
    return total, grad


def loss_gradient(mesh, quad, model, steps, part, lambda_r=DEFAULT_LAMBDA_R) -> np.ndarray:
    return loss_and_gradient(mesh, quad, model, steps, part, lambda_r)[1]


def first_nonfinite_element(mesh, quad, model, step):
    """Element id of the first quadrature point with a non-finite stress, or None."""
    try:
        F = deformation_gradient(mesh, quad, step.displacements, model.mode, step.step_id)
    except InvertedDeformationError as exc:
        return exc.element
    with np.errstate(all="ignore"):
        P = model.stress(F)
    bad = np.nonzero(~np.isfinite(P).all(axis=(1, 2)))[0]
    return int(quad.element[bad[0]]) if bad.size else None


def force_map_csv(mesh: Mesh, forces: np.ndarray) -> str:
    """CSV text ``node,x,y,fx,fy`` for a per-node force field."""
    buf = io.StringIO()
    buf.write("node,x,y,fx,fy\n")
    for a, (xy, f) in enumerate(zip(mesh.nodes.tolist(), forces.tolist())):
        buf.write(f"{a},{xy[0]!r},{xy[1]!r},{f[0]!r},{f[1]!r}\n")
    return buf.getvalue()
