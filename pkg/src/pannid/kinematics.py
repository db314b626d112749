"""Meshes, load steps, quadrature tables and deformation gradients.

Everything lives in the 2D reference configuration (units mm / N / MPa).
Deformation gradients are always returned as full 3x3 tensors so that the
invariant layer does not need to know about the kinematic reduction.
"""
from __future__ import annotations

import enum
import io
import json
import os
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import InvertedDeformationError, MeshError

ELEMENT_NODES = {"quad4": 4, "tri3": 3}

_G = 1.0 / np.sqrt(3.0)
_QUAD4_POINTS = np.array([[-_G, -_G], [_G, -_G], [_G, _G], [-_G, _G]])


class KinematicMode(str, enum.Enum):
    PLANE_STRAIN = "plane_strain"
    INCOMPRESSIBLE_PLANE_STRESS = "incompressible_plane_stress"

    @classmethod
    def parse(cls, value) -> "KinematicMode":
        if isinstance(value, cls):
            return value
        try:
            return cls(value)
        except ValueError:
            raise MeshError(f"unknown kinematic mode {value!r}") from None


@dataclass(frozen=True, eq=False)
class Mesh:
    nodes: np.ndarray  # (n_nodes, 2)
    elements: np.ndarray  # (n_elem, nen), counter-clockwise
    kind: str
    node_sets: dict = field(default_factory=dict)
    thickness: float = 1.0

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    def to_dict(self) -> dict:
        return {
            "nodes": self.nodes.tolist(),
            "elements": {"kind": self.kind, "connectivity": self.elements.tolist()},
            "node_sets": {k: v.tolist() for k, v in self.node_sets.items()},
            "thickness": float(self.thickness),
        }


@dataclass(frozen=True, eq=False)
class Reaction:
    force: np.ndarray  # (2,) N
    mask: np.ndarray  # (2,) bool


@dataclass(frozen=True, eq=False)
class LoadStep:
    step_id: int
    displacements: np.ndarray  # (n_nodes, 2) mm
    reactions: dict  # name -> Reaction


@dataclass(eq=False)
class Dataset:
    steps: list

    def __len__(self):
        return len(self.steps)

    def to_dict(self) -> dict:
        return {
            "steps": [
                {
                    "step_id": int(s.step_id),
                    "displacements": s.displacements.tolist(),
                    "reactions": {
                        name: {"force": r.force.tolist(), "mask": [bool(m) for m in r.mask]}
                        for name, r in s.reactions.items()
                    },
                }
                for s in self.steps
            ]
        }


class QuadPoint(NamedTuple):
    element: int
    dNdX: np.ndarray  # (nen, 2)
    weight: float


@dataclass(frozen=True, eq=False)
class QuadratureTable:
    """Struct-of-arrays view over all quadrature points of a mesh.

    ``element[q]`` is the owning element, ``dNdX[q]`` the reference shape
    gradients (nen, 2) and ``weight[q]`` = gauss weight * det(J) * thickness.
    """

    element: np.ndarray
    dNdX: np.ndarray
    weight: np.ndarray

    def __len__(self):
        return len(self.element)

    def __getitem__(self, q) -> QuadPoint:
        return QuadPoint(int(self.element[q]), self.dNdX[q], float(self.weight[q]))

    def __iter__(self):
        return (self[q] for q in range(len(self)))


# ---------------------------------------------------------------------------
# I/O


def _read_json(source):
    if isinstance(source, (bytes, bytearray)):
        text = source.decode()
    elif isinstance(source, (str, os.PathLike)):
        with open(source, "r") as fh:
            text = fh.read()
    elif isinstance(source, io.IOBase) or hasattr(source, "read"):
        text = source.read()
        if isinstance(text, bytes):
            text = text.decode()
    else:
        raise TypeError(f"cannot read JSON from {type(source).__name__}")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise MeshError(f"parse error: {exc}") from exc


def _signed_area(xy: np.ndarray) -> float:
    x, y = xy[:, 0], xy[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def build_mesh(nodes, connectivity, kind="quad4", node_sets=None, thickness=1.0) -> Mesh:
    """Validate raw arrays and return a :class:`Mesh` with CCW elements."""
    if kind not in ELEMENT_NODES:
        raise MeshError(f"unsupported element kind {kind!r}")
    nen = ELEMENT_NODES[kind]
    try:
        nodes = np.asarray(nodes, dtype=float).reshape(-1, 2)
        conn = np.asarray(connectivity, dtype=np.int64)
    except (ValueError, TypeError) as exc:
        raise MeshError(f"parse error: {exc}") from exc
    if conn.ndim != 2 or conn.shape[1] != nen:
        raise MeshError(f"{kind} connectivity must have {nen} columns")
    if not np.isfinite(nodes).all():
        raise MeshError("non-finite node coordinates")
    if not thickness > 0:
        raise MeshError("thickness must be positive")
    n = len(nodes)
    if conn.size and (conn.min() < 0 or conn.max() >= n):
        raise MeshError("element references a node index out of range")
    conn = conn.copy()
    for e, row in enumerate(conn):
        if len(set(row.tolist())) != nen:
            raise MeshError(f"repeated node in element {e}", element=e)
        if _signed_area(nodes[row]) < 0:
            conn[e] = row[::-1] if kind == "tri3" else row[[0, 3, 2, 1]]

    sets = {}
    for name, idx in (node_sets or {}).items():
        idx = np.asarray(idx, dtype=np.int64).ravel()
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise MeshError(f"dangling node-set index in set {name!r}")
        sets[str(name)] = np.unique(idx)

    mesh = Mesh(nodes=nodes, elements=conn, kind=kind, node_sets=sets, thickness=float(thickness))
    # Orientation normalisation cannot fix self-intersecting quads; the
    # Jacobian check catches them.
    precompute_quadrature(mesh)
    return mesh


def load_mesh(source) -> Mesh:
    """Read the mesh JSON document from a path, bytes or file object."""
    doc = _read_json(source)
    try:
        elems = doc["elements"]
        return build_mesh(
            doc["nodes"],
            elems["connectivity"],
            kind=elems.get("kind", "quad4"),
            node_sets=doc.get("node_sets", {}),
            thickness=doc.get("thickness", 1.0),
        )
    except (KeyError, TypeError, AttributeError) as exc:
        raise MeshError(f"parse error: missing or malformed field {exc}") from exc


def load_dataset(source, mesh: Mesh | None = None) -> Dataset:
    """Read the dataset JSON document; validated against ``mesh`` when given."""
    doc = _read_json(source)
    steps = []
    try:
        for raw in doc["steps"]:
            u = np.asarray(raw["displacements"], dtype=float).reshape(-1, 2)
            reactions = {}
            for name, r in raw.get("reactions", {}).items():
                reactions[name] = Reaction(
                    force=np.asarray(r["force"], dtype=float).reshape(2),
                    mask=np.asarray(r.get("mask", [True, True]), dtype=bool).reshape(2),
                )
            steps.append(LoadStep(int(raw["step_id"]), u, reactions))
    except (KeyError, TypeError, ValueError) as exc:
        raise MeshError(f"parse error: {exc}") from exc
    dataset = Dataset(steps)
    if mesh is not None:
        validate_dataset(dataset, mesh)
    return dataset


def validate_dataset(dataset: Dataset, mesh: Mesh) -> None:
    for step in dataset.steps:
        if step.displacements.shape != (mesh.n_nodes, 2):
            raise MeshError(
                f"step {step.step_id}: {len(step.displacements)} displacements for "
                f"{mesh.n_nodes} nodes"
            )
        for name, r in step.reactions.items():
            if name not in mesh.node_sets:
                raise MeshError(f"step {step.step_id}: unknown reaction set {name!r}")
            if not r.mask.any():
                raise MeshError(f"step {step.step_id}: reaction {name!r} has an all-false mask")


def save_json(obj: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Shape functions and quadrature


def _reference_gradients(kind: str):
    """Return (points, weights, dN/dxi) with dN/dxi of shape (nqp, nen, 2)."""
    if kind == "tri3":
        dN = np.array([[[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]]])
        return np.array([[1 / 3, 1 / 3]]), np.array([0.5]), dN
    xi, eta = _QUAD4_POINTS[:, 0], _QUAD4_POINTS[:, 1]
    dN = 0.25 * np.stack(
        [
            np.stack([-(1 - eta), -(1 - xi)], axis=-1),
            np.stack([(1 - eta), -(1 + xi)], axis=-1),
            np.stack([(1 + eta), (1 + xi)], axis=-1),
            np.stack([-(1 + eta), (1 - xi)], axis=-1),
        ],
        axis=1,
    )
    return _QUAD4_POINTS, np.ones(4), dN


def precompute_quadrature(mesh: Mesh) -> QuadratureTable:
    """Reference shape gradients and integration weights for every point.

    quad4 uses 2x2 Gauss points, tri3 a single centroid point. Raises
    :class:`MeshError` naming the first element with a non-positive
    Jacobian.
    """
    _, w, dN = _reference_gradients(mesh.kind)
    nqp = len(w)
    xe = mesh.nodes[mesh.elements]  # (ne, nen, 2)
    # J[e, p, i, j] = d x_i / d xi_j
    J = np.einsum("eai,paj->epij", xe, dN)
    detJ = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    bad = np.nonzero((detJ <= 0).any(axis=1))[0]
    if bad.size:
        raise MeshError(f"inverted element {int(bad[0])}", element=int(bad[0]))
    Jinv = np.linalg.inv(J)
    dNdX = np.einsum("paj,epji->epai", dN, Jinv)
    ne = mesh.n_elements
    return QuadratureTable(
        element=np.repeat(np.arange(ne), nqp),
        dNdX=dNdX.reshape(ne * nqp, -1, 2),
        weight=(detJ * w[None, :] * mesh.thickness).reshape(-1),
    )


def element_areas(mesh: Mesh) -> np.ndarray:
    """Shoelace areas of all (CCW) elements."""
    return np.array([_signed_area(mesh.nodes[row]) for row in mesh.elements])


# ---------------------------------------------------------------------------
# Deformation gradient


def out_of_plane_stretch(F2: np.ndarray, mode: KinematicMode) -> np.ndarray:
    mode = KinematicMode.parse(mode)
    if mode is KinematicMode.PLANE_STRAIN:
        return np.ones(F2.shape[:-2])
    return 1.0 / (F2[..., 0, 0] * F2[..., 1, 1] - F2[..., 0, 1] * F2[..., 1, 0])


def embed(F2: np.ndarray, mode: KinematicMode) -> np.ndarray:
    """Lift in-plane 2x2 gradients to 3x3 according to ``mode``."""
    F = np.zeros(F2.shape[:-2] + (3, 3))
    F[..., :2, :2] = F2
    F[..., 2, 2] = out_of_plane_stretch(F2, mode)
    return F


def deformation_gradient(
    mesh: Mesh,
    quad: QuadratureTable,
    u: np.ndarray,
    mode: KinematicMode = KinematicMode.PLANE_STRAIN,
    step_id=None,
) -> np.ndarray:
    """Per-quadrature-point 3x3 deformation gradients, shape (nq, 3, 3)."""
    u = np.asarray(u, dtype=float)
    if u.shape != (mesh.n_nodes, 2):
        raise MeshError(f"displacement field has shape {u.shape}, expected ({mesh.n_nodes}, 2)")
    ue = u[mesh.elements[quad.element]]  # (nq, nen, 2)
    # relative to the first node: sum_a dN_a/dX = 0, and rigid translations give exactly I
    ue = ue - ue[:, :1, :]
    F2 = np.swapaxes(ue, 1, 2) @ quad.dNdX
    F2[:, 0, 0] += 1.0
    F2[:, 1, 1] += 1.0
    det = F2[:, 0, 0] * F2[:, 1, 1] - F2[:, 0, 1] * F2[:, 1, 0]
    bad = np.nonzero(~(det > 0))[0]
    if bad.size:
        raise InvertedDeformationError(int(quad.element[bad[0]]), step_id)
    return embed(F2, mode)


def max_principal_stretch(F: np.ndarray) -> float:
    C = np.einsum("...ki,...kj->...ij", F, F)
    return float(np.sqrt(np.linalg.eigvalsh(C)[..., -1].max()))
