"""Hyperelastic models: normalised PANN energy and the Neo-Hookean baseline.

Both models map 3x3 deformation gradients (batched as (..., 3, 3)) to the
strain energy density W (MPa) and first Piola-Kirchhoff stress P (MPa).
Kinematic reduction is handled here:

* plane strain: ``F`` is used as given and P33 is the out-of-plane stress;
* incompressible plane stress: F33 is recomputed as 1/det(F_2D), the
  in-plane stress picks up the chain-rule term of F33(F_2D) and P33 = 0.
"""
from __future__ import annotations

import json
from abc import ABC, abstractmethod

import numpy as np

from . import icnn
from .errors import ConfigError, DomainError
from .icnn import IcnnArch, sigmoid, softplus
from .invariants import (
    IDENTITY_FEATURES,
    IDENTITY_SLOPES,
    cof3,
    det3,
    invariants_and_derivatives,
    right_cauchy_green,
)
from .kinematics import KinematicMode


def _inv_T(F):
    if F.shape[-1] == 3:
        return cof3(F) / det3(F)[..., None, None]
    return np.swapaxes(np.linalg.inv(F), -1, -2)


def _det(F):
    J = det3(F)
    if not np.all(J > 0):
        raise DomainError("det F must be positive")
    return J


def _complete(F, mode):
    F = np.array(F, dtype=float)
    if F.shape[-2:] != (3, 3):
        raise ValueError("deformation gradients must be 3x3")
    if mode is KinematicMode.INCOMPRESSIBLE_PLANE_STRESS:
        F[..., 2, :2] = 0.0
        F[..., :2, 2] = 0.0
        det2 = F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]
        if not np.all(det2 > 0):
            raise DomainError("det F must be positive")
        F[..., 2, 2] = 1.0 / det2
    return F


class Hyperelastic(ABC):
    """Common surface of every constitutive model used by the assembler."""

    mode: KinematicMode = KinematicMode.PLANE_STRAIN

    @abstractmethod
    def energy_3d(self, F): ...

    @abstractmethod
    def stress_3d(self, F): ...

    def energy(self, F):
        return self.energy_3d(_complete(F, self.mode))

    def stress(self, F):
        F = _complete(F, self.mode)
        P = self.stress_3d(F)
        if self.mode is KinematicMode.INCOMPRESSIBLE_PLANE_STRESS:
            F2inv_T = _inv_T(F[..., :2, :2])
            P = P.copy()
            P[..., :2, :2] -= (P[..., 2, 2] * F[..., 2, 2])[..., None, None] * F2inv_T
            P[..., 2, :] = 0.0
            P[..., :, 2] = 0.0
        return P

    def _upstream_3d(self, F, upstream):
        """Pull a co-gradient on the mode-reduced P back onto the 3D stress."""
        U = np.broadcast_to(np.asarray(upstream, dtype=float), F.shape).copy()
        if self.mode is KinematicMode.INCOMPRESSIBLE_PLANE_STRESS:
            U[..., 2, :] = 0.0
            U[..., :, 2] = 0.0
            F2inv_T = _inv_T(F[..., :2, :2])
            U[..., 2, 2] = -F[..., 2, 2] * np.einsum("...ij,...ij->...", U[..., :2, :2], F2inv_T)
        return U

    # trainable interface -------------------------------------------------
    theta: np.ndarray

    @property
    def n_params(self) -> int:
        return len(self.theta)

    def stress_weight_gradient(self, F, upstream) -> np.ndarray:
        """d/dtheta of sum_q <upstream_q, P(F_q; theta)> for the raw parameters."""
        raise NotImplementedError(f"{type(self).__name__} has no trainable parameters")

    def with_params(self, theta) -> "Hyperelastic":
        raise NotImplementedError(f"{type(self).__name__} has no trainable parameters")


# ---------------------------------------------------------------------------
# PANN


class PannModel(Hyperelastic):
    """Energy W(F) = NN(x(F)) - NN(x0) - n0 (J - 1).

    ``n0 = sum_k s_k dNN/dx_k(x0)`` with the identity slopes s = (2, 4, 1, -1),
    so W(I) = 0 and P(I) = 0 for every parameter vector. ``features``
    selects which of (I1, I2, J, -J) feed the network.
    """

    def __init__(self, arch: IcnnArch, theta, mode=KinematicMode.PLANE_STRAIN, features=(0, 1, 2, 3)):
        self.arch = arch
        self.theta = np.array(theta, dtype=float)
        self.mode = KinematicMode.parse(mode)
        self.features = tuple(int(k) for k in features)
        if len(self.features) != arch.n_in:
            raise ValueError("number of features must equal arch.n_in")
        if len(self.theta) != icnn.count_parameters(arch):
            raise ValueError("parameter vector does not match architecture")
        self.theta.flags.writeable = False
        self._weights = icnn.unpack(arch, self.theta)
        self._n0_cache = None

    @classmethod
    def initialise(cls, arch: IcnnArch, seed: int, mode=KinematicMode.PLANE_STRAIN, **kw):
        return cls(arch, icnn.init(arch, seed), mode, **kw)

    def with_params(self, theta):
        return PannModel(self.arch, theta, self.mode, self.features)

    @property
    def _x0(self):
        return IDENTITY_FEATURES[list(self.features)]

    @property
    def _slopes(self):
        return IDENTITY_SLOPES[list(self.features)]

    def _n0(self):
        if self._n0_cache is None:
            g0 = icnn.grad_input(self.arch, self._weights, self._x0)
            self._n0_cache = float(self._slopes @ g0)
        return self._n0_cache

    def energy_3d(self, F):
        x, _ = invariants_and_derivatives(F)
        J = x[..., 2]
        xs = x[..., list(self.features)]
        flat = xs.reshape(-1, self.arch.n_in)
        y = icnn.forward(self.arch, self._weights, flat).reshape(xs.shape[:-1])
        y0 = icnn.forward(self.arch, self._weights, self._x0)
        return y - y0 - self._n0() * (J - 1.0)

    def stress_3d(self, F):
        x, dx = invariants_and_derivatives(F)
        J = x[..., 2]
        idx = list(self.features)
        flat = x[..., idx].reshape(-1, self.arch.n_in)
        g = icnn.grad_input(self.arch, self._weights, flat).reshape(x.shape[:-1] + (self.arch.n_in,))
        P = np.sum(g[..., :, None, None] * dx[..., idx, :, :], axis=-3)
        # dx[..., 2] is J F^-T
        return P - self._n0() * dx[..., 2, :, :]

    def stress_weight_gradient(self, F, upstream):
        F = _complete(F, self.mode)
        U = self._upstream_3d(F, upstream)
        x, dx = invariants_and_derivatives(F)
        idx = list(self.features)
        c = np.sum(U[..., None, :, :] * dx[..., idx, :, :], axis=(-2, -1)).reshape(-1, self.arch.n_in)
        s = np.sum(U * dx[..., 2, :, :])
        X = np.vstack([x[..., idx].reshape(-1, self.arch.n_in), self._x0[None, :]])
        C = np.vstack([c, -s * self._slopes[None, :]])
        return icnn.backward_params(self.arch, self._weights, X, np.zeros(len(X)), C)

    def to_dict(self):
        d = {
            "kind": "pann",
            "arch": self.arch.to_dict(),
            "mode": self.mode.value,
            "theta": self.theta.tolist(),
        }
        if self.features != (0, 1, 2, 3):
            d["features"] = list(self.features)
        return d


# ---------------------------------------------------------------------------
# Neo-Hookean


def neo_hookean_energy(F, mu, lam):
    """W = mu/2 (I1 - 3 - 2 ln J) + lam/2 (J - 1)^2 for effective moduli."""
    J = _det(F)
    I1 = np.sum(F * F, axis=(-2, -1))
    return 0.5 * mu * (I1 - 3.0 - 2.0 * np.log(J)) + 0.5 * lam * (J - 1.0) ** 2


def neo_hookean_stress(F, mu, lam):
    """P = mu (F - F^-T) + lam J (J - 1) F^-T."""
    J = _det(F)
    FinvT = cof3(F) / J[..., None, None]
    return mu * (F - FinvT) + (lam * J * (J - 1.0))[..., None, None] * FinvT


class NeoHookeanModel(Hyperelastic):
    """Compressible Neo-Hookean law with softplus-positive moduli.

    ``theta = (theta_mu, theta_lam)``; mu = softplus(theta_mu) and
    lam = softplus(theta_lam), both in MPa.
    """

    def __init__(self, theta, mode=KinematicMode.PLANE_STRAIN):
        self.theta = np.array(theta, dtype=float).reshape(2)
        self.mode = KinematicMode.parse(mode)

    @classmethod
    def from_moduli(cls, mu, lam, mode=KinematicMode.PLANE_STRAIN):
        return cls(icnn.inverse_softplus([mu, lam]), mode)

    @property
    def mu(self) -> float:
        return float(softplus(self.theta[0]))

    @property
    def lam(self) -> float:
        return float(softplus(self.theta[1]))

    def with_params(self, theta):
        return NeoHookeanModel(theta, self.mode)

    def energy_3d(self, F):
        return neo_hookean_energy(F, self.mu, self.lam)

    def stress_3d(self, F):
        return neo_hookean_stress(F, self.mu, self.lam)

    def stress_weight_gradient(self, F, upstream):
        F = _complete(F, self.mode)
        U = self._upstream_3d(F, upstream)
        J = _det(F)
        FinvT = cof3(F) / J[..., None, None]
        d_mu = np.sum(U * (F - FinvT))
        d_lam = np.sum((J * (J - 1.0))[..., None, None] * U * FinvT)
        return np.array([d_mu, d_lam]) * sigmoid(self.theta)

    def to_dict(self):
        return {"kind": "neo_hookean", "mode": self.mode.value, "theta": self.theta.tolist()}


# ---------------------------------------------------------------------------
# operation-level aliases


def pann_energy(model: PannModel, F):
    return model.energy(F)


def pann_stress(model: PannModel, F):
    return model.stress(F)


def nh_energy(model: NeoHookeanModel, F):
    return model.energy(F)


def nh_stress(model: NeoHookeanModel, F):
    return model.stress(F)


def stress_and_weight_gradient(model: Hyperelastic, F, upstream):
    return model.stress_weight_gradient(F, upstream)


def energy_scan(model: Hyperelastic, stretches=None) -> float:
    """Minimum energy over an in-plane biaxial stretch grid and a shear sweep.

    Positivity of the normalised PANN energy is not structural, so this is
    reported as a diagnostic after training.
    """
    if stretches is None:
        stretches = np.linspace(0.5, 2.5, 21)
    l1, l2 = np.meshgrid(stretches, stretches, indexing="ij")
    F = np.zeros(l1.shape + (3, 3))
    F[..., 0, 0] = l1
    F[..., 1, 1] = l2
    F[..., 2, 2] = 1.0
    gam = np.linspace(-1.0, 1.0, 21)
    S = np.broadcast_to(np.eye(3), gam.shape + (3, 3)).copy()
    S[:, 0, 1] = gam
    return float(min(model.energy(F.reshape(-1, 3, 3)).min(), model.energy(S).min()))


# ---------------------------------------------------------------------------
# JSON


def model_from_dict(d: dict) -> Hyperelastic:
    try:
        kind = d["kind"]
        mode = KinematicMode.parse(d.get("mode", "plane_strain"))
        if kind == "pann":
            arch = IcnnArch.from_dict(d["arch"])
            return PannModel(arch, d["theta"], mode, d.get("features", tuple(range(arch.n_in))))
        if kind == "neo_hookean":
            return NeoHookeanModel(d["theta"], mode)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed model document: {exc}") from exc
    raise ConfigError(f"unknown model kind {kind!r}")


def load_model(path) -> Hyperelastic:
    with open(path) as fh:
        return model_from_dict(json.load(fh))


def save_model(model: Hyperelastic, path) -> None:
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh)
        fh.write("\n")
