import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.spatial.transform import Rotation

from dislotension.elasticity import (SKEW_BASIS, ConvergenceError, ElasticTensor, density_finite,
                                     density_linear, dist_SO3, linearized_tensor, make_cubic,
                                     make_isotropic, mixed_growth, phi_p, phi_p_envelope,
                                     random_admissible, random_rotation, rotate, split_small_large,
                                     tensor_from_dict, tensor_to_dict, validate)


def test_isotropic_quadratic_form_on_identity(iso):
    assert 0.5 * iso.quad(np.eye(3)) == pytest.approx(7.5, abs=1e-14)


def test_isotropic_lame_zero_acts_as_symmetrizer():
    C = make_isotropic(0.0, 1.0)
    A = np.outer([1, 0, 0], [0, 1, 0])
    np.testing.assert_allclose(C.apply(A), A + A.T, atol=1e-15)


@pytest.mark.parametrize("lam, mu", [(1.0, -1.0), (-1.0, 0.5), (0.0, 0.0)])
def test_isotropic_rejects_non_coercive(lam, mu):
    with pytest.raises(ValueError):
        make_isotropic(lam, mu)


def test_cubic_valid_and_invalid():
    assert validate(make_cubic(2.0, 1.0, 1.0)).admissible
    with pytest.raises(ValueError):
        make_cubic(2.0, 2.0, 1.0)


def test_cubic_degenerates_to_isotropic():
    lam, mu = 0.7, 1.3
    assert make_cubic(lam + 2 * mu, lam, mu).allclose(make_isotropic(lam, mu), atol=1e-14)


def test_validate_isotropic(iso):
    rep = validate(iso)
    assert rep.major_symmetry_residual <= 1e-12 and rep.skew_kernel_residual <= 1e-12
    # lambda_min on symmetric matrices is 2 mu = 2, divided by 4
    assert rep.c0 == pytest.approx(0.5, abs=1e-14)


def test_validate_detects_broken_skew_kernel(iso):
    E = iso.entries.copy()
    E[0, 1, 0, 1] += 0.5
    E[1, 0, 1, 0] += 0.5
    rep = validate(ElasticTensor(E))
    assert rep.skew_kernel_residual > 0.1
    assert not rep.admissible


def test_validate_zero_tensor():
    rep = validate(ElasticTensor(np.zeros(81)))
    assert rep.c0 == 0 and not rep.coercive


def test_c0_is_best_constant(rng):
    # oracle: C A.A >= c0 |A + A^T|^2 on random matrices, with near equality somewhere
    C = random_admissible(rng)
    A = rng.standard_normal((20000, 3, 3))
    ratio = C.quad(A) / np.linalg.norm((A + np.swapaxes(A, 1, 2)).reshape(-1, 9), axis=1) ** 2
    assert ratio.min() >= C.c0 * (1 - 1e-12)
    assert ratio.min() <= C.c0 * 1.5


def test_rotate_identity_and_isotropy(iso, cubic, rng):
    assert rotate(cubic, np.eye(3)).allclose(cubic)
    assert rotate(iso, random_rotation(rng)).allclose(iso, atol=1e-13)


def test_rotate_rejects_reflection(cubic):
    with pytest.raises(ValueError):
        rotate(cubic, np.diag([1.0, 1.0, -1.0]))


def test_rotate_composition_against_quadratic_form(rng):
    for _ in range(20):
        C = random_admissible(rng)
        Q1, Q2 = random_rotation(rng), random_rotation(rng)
        lhs = rotate(rotate(C, Q1), Q2)
        A = rng.standard_normal((3, 3))
        Q = Q1 @ Q2
        direct = C.quad(Q @ A @ Q.T)
        assert lhs.quad(A) == pytest.approx(direct, rel=1e-12)
        assert lhs.allclose(rotate(C, Q), atol=1e-12)


def test_rotate_preserves_validation(rng):
    for _ in range(10):
        C = random_admissible(rng)
        R = rotate(C, random_rotation(rng))
        assert abs(R.c0 - C.c0) <= 1e-10
        assert R.report.skew_kernel_residual <= 1e-10
        assert R.report.major_symmetry_residual <= 1e-10


def test_tensor_json_roundtrip(cubic, rng):
    doc = tensor_to_dict(cubic)
    assert tensor_from_dict(doc) == cubic
    Q = random_rotation(rng)
    framed = tensor_from_dict({"kind": "cubic", "c11": 3, "c12": 2, "c44": 1, "frame": Q.tolist()})
    assert framed.allclose(rotate(cubic, Q.T), atol=1e-13)
    with pytest.raises(ValueError):
        tensor_from_dict({"kind": "isotropic", "lambda": 1, "mu": 1, "colour": "red"})


# ---------------------------------------------------------------------------
# Mixed growth


@pytest.mark.parametrize("t, p, expected", [(0.0, 1.7, 0.0), (0.5, 1.5, 0.25), (4.0, 1.5, 8.0)])
def test_phi_p_values(t, p, expected):
    assert phi_p(t, p) == pytest.approx(expected, abs=1e-15)


def test_phi_p_errors():
    with pytest.raises(ValueError):
        phi_p(-1.0, 1.5)
    with pytest.raises(ValueError):
        phi_p(1.0, 2.5)


def test_tangency_closed_form():
    # eliminating t1 gives t2 = (4 (p - 1) / p^2)^(1 / (p - 2)) and t1 = p t2^(p-1) / 2
    for p in (1.1, 1.5, 1.9):
        mg = mixed_growth(p)
        t2 = (4 * (p - 1) / p ** 2) ** (1 / (p - 2))
        assert mg.t2 == pytest.approx(t2, rel=1e-12)
        assert mg.t1 == pytest.approx(p * t2 ** (p - 1) / 2, rel=1e-12)
        assert mg.t1 <= 1 <= mg.t2


def test_p_equals_two_is_quadratic():
    mg = mixed_growth(2.0)
    t = np.linspace(0, 5, 101)
    np.testing.assert_allclose(phi_p_envelope(t, mg), t * t)
    assert (mg.t1, mg.t2, mg.c_p) == (1.0, 1.0, 1.0)


def test_envelope_at_zero_and_below_phi():
    mg = mixed_growth(1.5)
    assert phi_p_envelope(0.0, mg) == 0.0
    t = np.linspace(0, 10, 20001)
    assert np.all(phi_p_envelope(t, mg) <= phi_p(t, 1.5) + 1e-15)


def test_sandwich_constant_matches_grid_oracle():
    mg = mixed_growth(1.5)
    t = np.linspace(0.0, 5.0, 500001)[1:]  # contains the kink t = 1
    grid_cp = np.max(phi_p(t, 1.5) / phi_p_envelope(t, mg))
    assert mg.c_p == pytest.approx(grid_cp, rel=1e-8)
    assert mg.c_p >= grid_cp - 1e-12


def test_envelope_is_tangent_at_contact_points():
    mg = mixed_growth(1.3)
    for t0 in (mg.t1, mg.t2):
        assert phi_p_envelope(t0, mg) == pytest.approx(phi_p(t0, 1.3), rel=1e-11)


@given(st.floats(1.01, 2.0), st.floats(0, 20), st.floats(0, 20))
def test_envelope_midpoint_convexity(p, s, t):
    mg = mixed_growth(p)
    mid = phi_p_envelope(0.5 * (s + t), mg)
    assert mid <= 0.5 * (phi_p_envelope(s, mg) + phi_p_envelope(t, mg)) + 1e-12 * (1 + s * s + t * t)


@given(st.floats(1.01, 2.0), st.floats(-50, 50), st.floats(-50, 50), st.floats(1e-3, 1e3))
def test_phi_p_triangle_inequality(p, a, b, delta):
    lhs = phi_p(abs(a + b), p)
    rhs = (1 + delta) * phi_p(abs(a), p) + (1 + 1 / delta) * phi_p(abs(b), p)
    assert lhs <= rhs * (1 + 1e-12) + 1e-300


def test_newton_failure_reports(monkeypatch):
    from dislotension import elasticity
    with pytest.raises(ConvergenceError):
        elasticity._tangency_points(1.5, maxiter=1)


def test_split_small_large(rng):
    f = np.full((4, 3, 3), 0.5 / 3)
    a, b = split_small_large(f, 1.5)
    assert not b.any()
    g = np.zeros((3, 3, 3))
    g[1] = 2.0 / 3.0
    a, b = split_small_large(g, 1.5)
    assert not a[1].any() and np.array_equal(b[1], g[1])
    h = rng.standard_normal((500, 3, 3)) * rng.uniform(0, 1, (500, 1, 1))
    a, b = split_small_large(h, 1.5)
    na = np.linalg.norm(a.reshape(-1, 9), axis=1)
    nb = np.linalg.norm(b.reshape(-1, 9), axis=1)
    total = np.sum(na ** 2 + nb ** 1.5)
    direct = np.sum(phi_p(np.linalg.norm(h.reshape(-1, 9), axis=1), 1.5))
    assert total == pytest.approx(direct, rel=1e-12)
    assert np.all(na <= 1)


# ---------------------------------------------------------------------------
# Densities


def test_dist_so3_examples():
    assert dist_SO3(np.eye(3)) == 0.0
    assert dist_SO3(2 * np.eye(3)) == pytest.approx(np.sqrt(3), abs=1e-14)


def test_dist_so3_monte_carlo_upper_bound(rng):
    F = np.eye(3) + 0.4 * rng.standard_normal((3, 3))
    Rs = Rotation.random(100000, random_state=1).as_matrix()
    sampled = np.linalg.norm((F - Rs).reshape(-1, 9), axis=1).min()
    d = dist_SO3(F)
    assert d <= sampled + 1e-12
    assert sampled - d < 0.05


def test_dist_so3_reflection_branch():
    F = np.diag([1.0, 1.0, -1.0])
    # closest rotation flips the smallest singular value: sigma = (1,1,1) -> (1,1,-1)
    assert dist_SO3(F) == pytest.approx(2.0)


def test_density_zero_sets(rng):
    mg = mixed_growth(1.5)
    for _ in range(5):
        Q = random_rotation(rng)
        assert density_finite(Q, mg) <= 1e-14
        S = rng.standard_normal((3, 3))
        assert density_linear(S - S.T, mg) == 0.0


def test_density_invariances(rng):
    mg = mixed_growth(1.5)
    F = rng.standard_normal((50, 3, 3))
    Q = np.stack([random_rotation(rng) for _ in range(50)])
    np.testing.assert_allclose(density_finite(F @ Q, mg), density_finite(F, mg), atol=1e-12)
    S = rng.standard_normal((50, 3, 3))
    np.testing.assert_allclose(density_linear(F + S - np.swapaxes(S, 1, 2), mg),
                               density_linear(F, mg), atol=1e-12)


@pytest.mark.parametrize("delta", [1e-3, 1e-4])
def test_density_second_derivative_matches_linearization(rng, delta):
    mg = mixed_growth(1.5)
    A = rng.standard_normal((3, 3))
    for kin, ref, W in (("finite", np.eye(3), density_finite), ("linear", np.zeros((3, 3)), density_linear)):
        C = linearized_tensor(kin)
        fd = (W(ref + delta * A, mg) - 2 * W(ref, mg) + W(ref - delta * A, mg)) / delta ** 2
        assert fd == pytest.approx(C.quad(A), rel=1e-3 if kin == "finite" else 1e-9)


def test_finite_density_second_order_consistency(rng):
    # W(Id + d A) - 1/2 C d A . d A = O(d^3)
    mg = mixed_growth(1.5)
    C = linearized_tensor("finite")
    A = rng.standard_normal((3, 3))
    ds = np.array([1e-2, 5e-3, 2.5e-3, 1.25e-3])
    err = [abs(density_finite(np.eye(3) + d * A, mg) - 0.5 * C.quad(d * A)) for d in ds]
    slope = np.polyfit(np.log(ds), np.log(err), 1)[0]
    assert slope >= 2.5
