import numpy as np
import pytest

from kslab.errors import ConfigurationError, NumericalError
from kslab.grid import (
    ScalarField,
    TaylorField,
    build_grid,
    divergence,
    divgrad_matrix_from_faces,
    gradient,
    laplacian_matrix,
    softcore,
    softcore_force,
    weighted_divgrad_matrix,
)


def test_build_grid_spacing_and_nodes():
    g = build_grid(0, 1, 3)
    assert g.h == pytest.approx(0.25)
    assert np.allclose(g.x, [0.25, 0.5, 0.75])

    g2 = build_grid(-5, 5, 99)
    assert g2.h == pytest.approx(0.1)
    assert g2.x[0] == pytest.approx(-4.9)


def test_build_grid_rejects_bad_inputs():
    with pytest.raises(ConfigurationError):
        build_grid(0, 1, 2)
    with pytest.raises(ConfigurationError):
        build_grid(1, 1, 10)
    with pytest.raises(ConfigurationError):
        build_grid(2, 1, 10)


def test_grid_refined_halves_spacing():
    g = build_grid(0, 1, 31)
    assert g.refined().h == pytest.approx(g.h / 2)


def test_gradient_of_zero_and_linear():
    g = build_grid(0, 1, 31)
    zero = gradient(ScalarField.zeros(g))
    assert np.max(np.abs(zero.values)) == 0.0

    lin = gradient(ScalarField(g, g.x.copy()))
    # exact for linear data away from the boundary-affected nodes
    assert np.max(np.abs(lin.values[1:-1] - 1.0)) < 1e-12


def test_gradient_second_order_convergence():
    def err(M):
        g = build_grid(0, 1, M)
        got = gradient(ScalarField(g, np.sin(np.pi * g.x)))
        return np.max(np.abs(got.values - np.pi * np.cos(np.pi * g.x)))

    ratio = err(31) / err(63)
    assert 3.5 < ratio < 4.5


def test_divergence_constant_boundary_effect():
    g = build_grid(0, 1, 15)
    d = divergence(ScalarField(g, np.full(g.M, 3.0)))
    # interior exact zero, boundary nodes feel the ghost zeros
    assert np.max(np.abs(d.values[1:-1])) == 0.0
    assert d.values[0] != 0.0 and d.values[-1] != 0.0


def test_div_grad_composition_converges():
    # composition is second order away from the boundary-affected nodes,
    # where the ghost zeros stand in for the (nonzero) gradient values
    def err(M):
        g = build_grid(0, 1, M)
        f = ScalarField(g, np.sin(np.pi * g.x))
        got = divergence(gradient(f))
        exact = -np.pi**2 * np.sin(np.pi * g.x)
        return np.max(np.abs(got.values[2:-2] - exact[2:-2]))

    ratio = err(31) / err(63)
    assert 3.5 < ratio < 4.5


def test_stencils_are_linear():
    g = build_grid(-1, 2, 24)
    rng = np.random.default_rng(0)
    for _ in range(10):
        f1 = ScalarField(g, rng.standard_normal(g.M))
        f2 = ScalarField(g, rng.standard_normal(g.M))
        a, b = rng.standard_normal(2)
        combo = gradient(ScalarField(g, a * f1.values + b * f2.values))
        split = a * gradient(f1).values + b * gradient(f2).values
        assert np.allclose(combo.values, split, atol=1e-14)


def test_weighted_divgrad_unit_coefficient_eigenvalues():
    g = build_grid(0, 1, 31)
    A = weighted_divgrad_matrix(ScalarField(g, np.ones(g.M)))
    evals = np.sort(np.linalg.eigvalsh(-A.toarray()))
    j = np.arange(1, g.M + 1)
    exact = np.sort(2 / g.h**2 * (1 - np.cos(j * np.pi * g.h / (g.b - g.a))))
    assert np.max(np.abs(evals - exact)) < 1e-9


def test_weighted_divgrad_symmetry_and_definiteness():
    g = build_grid(0, 2, 25)
    rng = np.random.default_rng(3)
    n = ScalarField(g, 0.5 + rng.random(g.M))
    A = weighted_divgrad_matrix(n).toarray()
    assert np.max(np.abs(A - A.T)) <= 1e-12 * np.max(np.abs(A))
    evals = np.linalg.eigvalsh(-A)
    assert np.all(evals > 0)


def test_weighted_divgrad_eigenvalue_floor():
    g = build_grid(0, 1, 21)
    unit_min = np.min(np.linalg.eigvalsh(-laplacian_matrix(g).toarray()))
    rng = np.random.default_rng(11)
    for _ in range(5):
        n = ScalarField(g, 0.2 + rng.random(g.M))
        m = float(np.min(n.values))
        evals = np.linalg.eigvalsh(-weighted_divgrad_matrix(n).toarray())
        assert np.min(evals) >= m * unit_min * (1 - 1e-12)


def test_weighted_divgrad_applies_to_smooth_field():
    def err(M):
        g = build_grid(0, 1, M)
        A = weighted_divgrad_matrix(ScalarField(g, np.ones(g.M)))
        got = A @ np.sin(np.pi * g.x)
        return np.max(np.abs(got + np.pi**2 * np.sin(np.pi * g.x)))

    ratio = err(31) / err(63)
    assert 3.5 < ratio < 4.5


def test_weighted_divgrad_rejects_floor_violation():
    g = build_grid(0, 1, 11)
    n = ScalarField(g, np.ones(g.M))
    n.values[4] = 0.0
    with pytest.raises(ConfigurationError):
        weighted_divgrad_matrix(n)


def test_faces_override_shape_checked():
    g = build_grid(0, 1, 11)
    with pytest.raises(ConfigurationError):
        divgrad_matrix_from_faces(np.ones(g.M), g)


def test_softcore_values_and_symmetry():
    assert softcore(0, 0, 1, 1) == pytest.approx(1.0)
    assert softcore(3, 0, 16, 1) == pytest.approx(0.2)
    rng = np.random.default_rng(8)
    for _ in range(100):
        a, b = rng.standard_normal(2) * 3
        assert softcore(a, b, 0.7, 1.3) == pytest.approx(softcore(b, a, 0.7, 1.3))


def test_softcore_rejects_bare_kernel():
    with pytest.raises(ConfigurationError):
        softcore(1.0, 0.0, 0.0, 1.0)
    with pytest.raises(ConfigurationError):
        softcore_force(1.0, 0.0, -1.0, 1.0)


def test_softcore_force_matches_finite_difference():
    d = 1e-6
    x, xp, eps, g = 0.7, -0.4, 0.9, 1.2
    fd = (softcore(x + d, xp, eps, g) - softcore(x - d, xp, eps, g)) / (2 * d)
    assert softcore_force(x, xp, eps, g) == pytest.approx(fd, rel=1e-8)


def test_scalar_field_rejects_nonfinite():
    g = build_grid(0, 1, 5)
    values = np.ones(g.M)
    values[2] = np.nan
    with pytest.raises(NumericalError):
        ScalarField(g, values)


def test_taylor_field_evaluation():
    g = build_grid(0, 1, 5)
    c0 = ScalarField(g, np.full(g.M, 1.0))
    c1 = ScalarField(g, np.full(g.M, 2.0))
    c2 = ScalarField(g, np.full(g.M, 6.0))
    tf = TaylorField(g, [c0, c1, c2])
    # 1 + 2 t + 6 t^2/2 at t = 0.5
    assert np.allclose(tf.evaluate(0.5).values, 1 + 1.0 + 0.75)
    assert tf.truncated(1).max_order == 1
