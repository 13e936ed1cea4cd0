import numpy as np
import pytest
from hypothesis import given, strategies as st

from dislotension.elasticity import random_rotation
from dislotension.geometry import (E3, Box, HollowCylinder, SampledField, curl_fd, cylindrical_coordinates,
                                   frame, phi_t, rotation_about, rotation_to, transform_current,
                                   transform_field, transversal)
from dislotension.network import PolyhedralCurrent, total_variation

unit_vectors = st.tuples(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1)).filter(
    lambda v: np.linalg.norm(v) > 1e-3).map(lambda v: np.array(v) / np.linalg.norm(v))


def test_rotation_to_special_cases():
    np.testing.assert_array_equal(rotation_to(E3), np.eye(3))
    np.testing.assert_array_equal(rotation_to(-E3), np.diag([1.0, -1.0, -1.0]))
    Q = rotation_to(np.array([1.0, 0, 0]))
    np.testing.assert_allclose(Q @ E3, [1, 0, 0], atol=1e-15)


def test_rotation_to_rejects_non_unit():
    with pytest.raises(ValueError):
        rotation_to([0, 0, 2.0])


@given(unit_vectors)
def test_rotation_to_is_rotation_mapping_e3(t):
    Q = rotation_to(t)
    np.testing.assert_allclose(Q @ Q.T, np.eye(3), atol=1e-12)
    assert abs(np.linalg.det(Q) - 1) < 1e-12
    np.testing.assert_allclose(Q @ E3, t, atol=1e-12)


@given(unit_vectors)
def test_rotation_to_continuity_away_from_antipode(t):
    if t @ E3 < -0.99:
        return
    s = t + 1e-7 * np.array([0.3, -0.2, 0.1])
    s /= np.linalg.norm(s)
    assert np.abs(rotation_to(s) - rotation_to(t)).max() < 1e-4


def test_phi_t_examples():
    np.testing.assert_allclose(phi_t(1, 0, 0, E3), [1, 0, 0], atol=1e-15)
    np.testing.assert_allclose(phi_t(1, np.pi / 2, 0, E3), [0, 1, 0], atol=1e-15)
    with pytest.raises(ValueError):
        phi_t(0.0, 0, 0, E3)


@given(unit_vectors, st.floats(1e-3, 10), st.floats(-7, 7), st.floats(-5, 5))
def test_phi_t_isometry_and_decomposition(t, r, th, z):
    x = phi_t(r, th, z, t)
    assert np.linalg.norm(x) ** 2 == pytest.approx(r * r + z * z, rel=1e-12, abs=1e-12)
    e_r, _, _ = frame(th)
    np.testing.assert_allclose(x, r * rotation_to(t) @ e_r + z * t, atol=1e-12)
    rr, tt, zz = cylindrical_coordinates(x, t)
    assert rr == pytest.approx(r, rel=1e-10) and zz == pytest.approx(z, abs=1e-10)
    assert np.cos(tt) == pytest.approx(np.cos(th), abs=1e-9)


def test_frame_examples_and_derivatives():
    for th, exp in ((0.0, np.eye(3)), (np.pi, np.diag([-1.0, -1.0, 1.0]))):
        np.testing.assert_allclose(np.stack(frame(th)), exp, atol=1e-15)
    th = np.random.default_rng(0).uniform(0, 2 * np.pi, 50)
    e_r, e_t, e_z = frame(th)
    F = np.stack([e_r, e_t, e_z], axis=1)
    np.testing.assert_allclose(F @ np.swapaxes(F, 1, 2), np.broadcast_to(np.eye(3), F.shape), atol=1e-15)
    np.testing.assert_allclose(np.linalg.det(F), 1.0)
    h = 1e-6
    np.testing.assert_allclose((frame(th + h)[0] - frame(th - h)[0]) / (2 * h), e_t, atol=1e-9)
    np.testing.assert_allclose((frame(th + h)[1] - frame(th - h)[1]) / (2 * h), -e_r, atol=1e-9)


def test_hollow_cylinder_invariants():
    HollowCylinder(0.1, 1.0, 2.0)
    with pytest.raises(ValueError):
        HollowCylinder(0.1, 3.0, 2.0)
    HollowCylinder(0.1, 3.0, 2.0, relaxed=True)
    with pytest.raises(ValueError):
        HollowCylinder(1.0, 0.5, 2.0)
    cyl = HollowCylinder(0.1, 1.0, 2.0, t=[1.0, 0, 0])
    assert cyl.contains(np.array([1.0, 0.5, 0.0]))
    assert not cyl.contains(np.array([1.0, 0.05, 0.0]))


# ---------------------------------------------------------------------------
# Field transformations


def _affine(A, c):
    # beta(x)_{il} = c_il + sum_k A_ilk x_k
    return lambda x: c + np.einsum("ilk,...k->...il", A, np.asarray(x, dtype=float))


def _affine_curl(A):
    # (curl beta)_ij = eps_jkl d_k beta_il = eps_jkl A_ilk
    eps = np.zeros((3, 3, 3))
    eps[0, 1, 2] = eps[1, 2, 0] = eps[2, 0, 1] = 1
    eps[0, 2, 1] = eps[2, 1, 0] = eps[1, 0, 2] = -1
    return np.einsum("jkl,ilk->ij", eps, A)


def test_transform_identity(rng):
    A, c = rng.standard_normal((3, 3, 3)), rng.standard_normal((3, 3))
    beta = _affine(A, c)
    x = rng.standard_normal((10, 3))
    np.testing.assert_array_equal(transform_field(beta, np.eye(3), np.eye(3), 1.0, np.zeros(3), x), beta(x))


def test_transform_affine_exact_and_curl_rule(rng):
    A, c = rng.standard_normal((3, 3, 3)), rng.standard_normal((3, 3))
    beta = _affine(A, c)
    F, Q, lam, v = rng.standard_normal((3, 3)), random_rotation(rng), 1.7, rng.standard_normal(3)
    x = rng.standard_normal((6, 3))
    got = transform_field(beta, F, Q, lam, v, x)
    expect = np.stack([F @ beta(lam * Q @ xi + v) @ Q for xi in x])
    np.testing.assert_allclose(got, expect, atol=1e-12)
    hat = lambda y: transform_field(beta, F, Q, lam, v, y)
    curl_hat = curl_fd(hat, x[0], 1e-3)
    np.testing.assert_allclose(curl_hat, lam * F @ _affine_curl(A) @ Q, atol=1e-8)


def test_transform_composition(rng):
    A, c = rng.standard_normal((3, 3, 3)), rng.standard_normal((3, 3))
    beta = _affine(A, c)
    F1, Q1, l1, v1 = rng.standard_normal((3, 3)), random_rotation(rng), 0.8, rng.standard_normal(3)
    F2, Q2, l2, v2 = rng.standard_normal((3, 3)), random_rotation(rng), 1.3, rng.standard_normal(3)
    x = rng.standard_normal((5, 3))
    step1 = lambda y: transform_field(beta, F1, Q1, l1, v1, y)
    twice = transform_field(step1, F2, Q2, l2, v2, x)
    # x -> l1 Q1 (l2 Q2 x + v2) + v1
    once = transform_field(beta, F2 @ F1, Q1 @ Q2, l1 * l2, l1 * Q1 @ v2 + v1, x)
    np.testing.assert_allclose(twice, once, atol=1e-12)


def test_sampled_field_interpolation_and_domain():
    ax = np.linspace(0, 1, 5)
    X = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1)
    A = np.arange(27.0).reshape(3, 3, 3)
    vals = np.einsum("ilk,...k->...il", A, X)
    f = SampledField((ax, ax, ax), vals)
    p = np.array([[0.3, 0.6, 0.1]])
    np.testing.assert_allclose(f(p)[0], A @ p[0], atol=1e-12)
    with pytest.raises(ValueError):
        f(np.array([[1.5, 0.0, 0.0]]))


def test_pushforward_of_segment_measure(rng):
    # curl hat beta (A) = lam^-2 F (curl beta)(lam Q A + v) Q: for a segment measure the
    # transformed current has density F theta / lam on the preimage segment
    cur = PolyhedralCurrent.from_segments([([0.2, 0.3, 0.1], [0.6, 0.5, 0.9])], [[1.0, 2.0, 0.0]])
    F, Q, lam, v = rng.standard_normal((3, 3)), random_rotation(rng), 2.0, rng.standard_normal(3)
    hat = transform_current(cur, F, Q, lam, v)
    # total matrix mass over everything: hat mass = (1/lam) F theta (x) Q^T tau * (length / lam)
    mass = lambda c: sum(np.outer(th, tau) * ell for th, tau, ell in zip(c.theta, c.tau, c.lengths))
    np.testing.assert_allclose(mass(hat), F @ mass(cur) @ Q / lam ** 2, atol=1e-12)
    F = Q = random_rotation(rng)
    iso = transform_current(cur, Q, Q, 1.0, v)
    assert total_variation(iso) == pytest.approx(total_variation(cur), rel=1e-12)


# ---------------------------------------------------------------------------
# Transversality


def _seg(a, b):
    return PolyhedralCurrent.from_segments([(a, b)], [[1.0, 0, 0]])


def test_transversal_crossing_top_face():
    rep = transversal(_seg([0.5, 0.5, 0.5], [0.5, 0.5, 1.5]), Box.cube(1.0))
    assert rep.transversal and len(rep.intersections) == 1


def test_segment_in_face_not_transversal():
    rep = transversal(_seg([0.2, 0.2, 1.0], [0.8, 0.3, 1.0]), Box.cube(1.0))
    assert not rep.transversal
    assert rep.violations[0]["kind"] == "lies_in_face"


def test_crossing_at_edge_not_transversal():
    rep = transversal(_seg([0.5, 0.5, 0.5], [1.5, 1.5, 0.5]), Box.cube(1.0))
    assert not rep.transversal
    assert any(v["kind"] == "edge_or_corner" for v in rep.violations)


def test_shared_crossing_point_not_transversal():
    cur = PolyhedralCurrent.from_segments([([0.5, 0.5, 0.5], [0.5, 0.5, 1.0]), ([0.5, 0.5, 1.0], [0.5, 0.7, 1.5])],
                                          [[1.0, 0, 0], [1.0, 0, 0]])
    rep = transversal(cur, Box.cube(1.0))
    assert not rep.transversal
    assert any(v["kind"] == "shared_point" for v in rep.violations)


def test_nearly_tangential_crossing():
    d = 1e-8
    rep = transversal(_seg([0.5, 0.5, 1.0 - d * 0.4], [0.9, 0.5, 1.0 + d * 0.4]), Box.cube(1.0))
    assert any(v["kind"] == "tangential" for v in rep.violations)


def test_rotation_about_quarter_turn():
    np.testing.assert_allclose(rotation_about(E3, np.pi / 2) @ [1, 0, 0], [0, 1, 0], atol=1e-15)
