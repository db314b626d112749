r"""Invariant features of the deformation gradient.

The feature vector fed to the energy network is

    x = (I1, I2, J, -J),   I1 = tr C,  I2 = (I1^2 - tr C^2) / 2,  J = det F

with C = F^T F. I1 is convex in F, I2 convex in cof F and J enters linearly,
so any convex non-decreasing function of x is polyconvex. Carrying both J
and -J lets a monotone network still produce energies that decrease in J.

All functions broadcast over leading batch dimensions.
"""
from __future__ import annotations

import numpy as np

from .errors import DomainError

N_FEATURES = 4
IDENTITY_FEATURES = np.array([3.0, 3.0, 1.0, -1.0])
# d x_k / d F at F = I, as multiples of the identity tensor
IDENTITY_SLOPES = np.array([2.0, 4.0, 1.0, -1.0])


def det3(F):
    """Closed-form determinant of (..., 3, 3) arrays."""
    return (
        F[..., 0, 0] * (F[..., 1, 1] * F[..., 2, 2] - F[..., 1, 2] * F[..., 2, 1])
        - F[..., 0, 1] * (F[..., 1, 0] * F[..., 2, 2] - F[..., 1, 2] * F[..., 2, 0])
        + F[..., 0, 2] * (F[..., 1, 0] * F[..., 2, 1] - F[..., 1, 1] * F[..., 2, 0])
    )


def cof3(F):
    """Cofactor matrix det(F) F^-T of (..., 3, 3) arrays."""
    out = np.empty_like(F)
    for i in range(3):
        i1, i2 = (i + 1) % 3, (i + 2) % 3
        for j in range(3):
            j1, j2 = (j + 1) % 3, (j + 2) % 3
            out[..., i, j] = F[..., i1, j1] * F[..., i2, j2] - F[..., i1, j2] * F[..., i2, j1]
    return out


def right_cauchy_green(F):
    return np.swapaxes(F, -1, -2) @ F


def _check(J):
    if not np.all(J > 0):
        raise DomainError("det F must be positive")


def invariants(F: np.ndarray) -> np.ndarray:
    """Feature vector (I1, I2, J, -J) for each 3x3 ``F``; shape (..., 4)."""
    F = np.asarray(F, dtype=float)
    J = det3(F)
    _check(J)
    C = right_cauchy_green(F)
    I1 = np.trace(C, axis1=-2, axis2=-1)
    trC2 = np.sum(C * C, axis=(-2, -1))
    I2 = 0.5 * (I1 * I1 - trC2)
    return np.stack([I1, I2, J, -J], axis=-1)


def invariant_derivatives(F: np.ndarray) -> np.ndarray:
    """Stack of d x_k / d F, shape (..., 4, 3, 3).

    dI1/dF = 2F, dI2/dF = 2(I1 F - F C), dJ/dF = J F^-T, d(-J)/dF = -J F^-T.
    """
    F = np.asarray(F, dtype=float)
    J = det3(F)
    _check(J)
    C = right_cauchy_green(F)
    I1 = np.trace(C, axis1=-2, axis2=-1)
    dJ = cof3(F)
    out = np.empty(F.shape[:-2] + (4, 3, 3))
    out[..., 0, :, :] = 2.0 * F
    out[..., 1, :, :] = 2.0 * (I1[..., None, None] * F - F @ C)
    out[..., 2, :, :] = dJ
    out[..., 3, :, :] = -dJ
    return out


def invariants_and_derivatives(F: np.ndarray):
    """Both of the above with shared intermediate work."""
    F = np.asarray(F, dtype=float)
    J = det3(F)
    _check(J)
    C = right_cauchy_green(F)
    I1 = np.trace(C, axis1=-2, axis2=-1)
    trC2 = np.sum(C * C, axis=(-2, -1))
    x = np.stack([I1, 0.5 * (I1 * I1 - trC2), J, -J], axis=-1)
    dJ = cof3(F)
    dx = np.empty(F.shape[:-2] + (4, 3, 3))
    dx[..., 0, :, :] = 2.0 * F
    dx[..., 1, :, :] = 2.0 * (I1[..., None, None] * F - F @ C)
    dx[..., 2, :, :] = dJ
    dx[..., 3, :, :] = -dJ
    return x, dx
