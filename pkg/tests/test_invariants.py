import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from _oracles import central_diff, random_F, random_rotation
from pannid.errors import DomainError
from pannid.invariants import (
    IDENTITY_FEATURES,
    IDENTITY_SLOPES,
    invariant_derivatives,
    invariants,
    invariants_and_derivatives,
)


@pytest.mark.parametrize(
    "diag, expected",
    [
        ((1, 1, 1), (3, 3, 1, -1)),
        ((2, 0.5, 1), (5.25, 5.25, 1, -1)),
        ((3, 1, 1), (11, 19, 3, -3)),
    ],
)
def test_hand_values(diag, expected):
    assert_allclose(invariants(np.diag(diag)), expected, rtol=1e-14)


def test_identity_constants():
    assert_allclose(invariants(np.eye(3)), IDENTITY_FEATURES)
    dx = invariant_derivatives(np.eye(3))
    for k in range(4):
        assert_allclose(dx[k], IDENTITY_SLOPES[k] * np.eye(3), atol=1e-15)


def test_minus_j_is_exact_negation(rng):
    F = np.stack([random_F(rng) for _ in range(20)])
    x = invariants(F)
    assert np.array_equal(x[:, 3], -x[:, 2])


@pytest.mark.parametrize("F", [np.diag([1.0, -1.0, 1.0]), np.zeros((3, 3))])
def test_domain_error(F):
    with pytest.raises(DomainError):
        invariants(F)
    with pytest.raises(DomainError):
        invariant_derivatives(F)


def test_batch_shapes(rng):
    F = np.stack([random_F(rng) for _ in range(6)]).reshape(2, 3, 3, 3)
    x, dx = invariants_and_derivatives(F)
    assert x.shape == (2, 3, 4) and dx.shape == (2, 3, 4, 3, 3)
    assert_allclose(x, invariants(F))
    assert_allclose(dx, invariant_derivatives(F))


def _fd_check(F):
    dx = invariant_derivatives(F)
    for k in range(4):
        fd = central_diff(lambda G: invariants(G)[k], F, h=1e-5)
        assert_allclose(dx[k], fd, rtol=1e-7, atol=1e-7 * np.abs(fd).max())


def test_derivatives_at_diag():
    _fd_check(np.diag([2.0, 0.5, 1.0]))


def test_derivatives_seeded(rng):
    for _ in range(100):
        _fd_check(random_F(rng))


def test_objectivity_and_isotropy(rng):
    for _ in range(50):
        F = random_F(rng)
        Q = random_rotation(rng)
        x = invariants(F)
        assert_allclose(invariants(Q @ F), x, rtol=1e-10)
        assert_allclose(invariants(F @ Q), x, rtol=1e-10)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-0.6, 0.6), min_size=9, max_size=9))
def test_am_gm_bound(entries):
    F = np.eye(3) + np.array(entries).reshape(3, 3)
    J = np.linalg.det(F)
    if J <= 1e-3:
        return
    x = invariants(F)
    assert x[0] >= 3 * J ** (2 / 3) - 1e-12
    # same bound for the cofactor invariant
    assert x[1] >= 3 * J ** (4 / 3) - 1e-10
