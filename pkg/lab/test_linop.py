# lab/test_linop.py - WEIGHTED OPERATOR, SPECTRUM AND HEAT KERNEL
import numpy as np
import pytest

from lab.services.flux import PolynomialFlux, ShockProblem, normalize
from lab.services.linop import (
    LinopError,
    apply_green,
    build_linear_operator,
    build_potential,
    complexified_kernel_factor,
    green_function,
    grid_index,
    heat_kernel,
    kernel_column,
    kernel_decay_profile,
    kernel_l2_norms,
    similarity_check,
    spectral_gap,
    x_derivative,
)
from lab.services.wave import solve_profile
from lab.services.weights import build_weight

GAUSS_HERMITE = np.polynomial.hermite.hermgauss(80)


def heat_convolution(func, x, t):
    """Free heat flow e^{t d2/dx2} applied to func, by Gauss-Hermite quadrature."""
    nodes, weights = GAUSS_HERMITE
    shifted = np.asarray(x)[:, None] - 2.0 * np.sqrt(t) * nodes[None, :]
    return func(shifted) @ weights / np.sqrt(np.pi)


@pytest.fixture(scope="module")
def classical():
    return normalize(ShockProblem.create(PolynomialFlux((0.0, 0.0, -0.5)), -1.0, 1.0))


@pytest.fixture(scope="module")
def cubic():
    return normalize(ShockProblem.create(PolynomialFlux((0.0, 0.0, 0.0, -1.0 / 3.0)), 1.0, 2.0))


@pytest.fixture(scope="module")
def classical_model(classical):
    return build_linear_operator(solve_profile(classical, L=40.0, dx=0.05))


@pytest.fixture(scope="module")
def cubic_model(cubic):
    return build_linear_operator(solve_profile(cubic, L=40.0, dx=0.05))


# ================================================================
# POTENTIAL
# ================================================================

def test_classical_potential_is_constant(classical_model):
    assert np.allclose(classical_model.potential, -0.25, atol=1e-13)


def test_potential_tails(classical_model, cubic_model):
    for model in (classical_model, cubic_model):
        p_minus, p_plus = model.end_values
        assert abs(model.potential[0] + p_minus) < 1e-6
        assert abs(model.potential[-1] + p_plus) < 1e-6


def test_cubic_potential_at_origin(cubic_model):
    # f = 1.5, f' = Phi_c(1.5) - 2, Phi_c' = -u^2 + 7/3, Phi_c'' = -2u
    f = 1.5
    fprime = -f ** 3 / 3 + 7 * f / 3 - 2.0
    slope, curvature = -f ** 2 + 7.0 / 3.0, -2.0 * f
    expected = -0.25 * slope ** 2 + 0.5 * curvature * fprime
    j = grid_index(cubic_model, 0.0)
    assert cubic_model.potential[j] == pytest.approx(expected, abs=1e-10)
    assert expected == pytest.approx(-0.5642361, abs=1e-7)


def test_printed_sign_flips_quadratic_term(classical):
    profile = solve_profile(classical, L=20.0, dx=0.1)
    corrected = build_potential(profile)
    printed = build_potential(profile, printed_sign=True)
    assert np.allclose(printed - corrected, 0.5 * profile.f_values ** 2, atol=1e-14)


# ================================================================
# SIMILARITY IDENTITY
# ================================================================

def _similarity_residual(problem, dx, printed_sign=False):
    profile = solve_profile(problem, L=20.0, dx=dx)
    model = build_linear_operator(profile, printed_sign=printed_sign)
    return similarity_check(model, build_weight(profile), lambda x: 1.0 / np.cosh(x))


@pytest.mark.parametrize("problem_name", ["classical", "cubic"])
def test_similarity_converges_at_second_order(problem_name, request):
    problem = request.getfixturevalue(problem_name)
    coarse = _similarity_residual(problem, 0.05)
    fine = _similarity_residual(problem, 0.025)
    assert 3.5 < coarse / fine < 4.5


def test_similarity_residual_classical(classical):
    assert _similarity_residual(classical, 0.05) < 1e-3


def test_similarity_of_zero(classical_model, classical):
    weight = build_weight(classical_model.profile)
    assert similarity_check(classical_model, weight, np.zeros_like(classical_model.profile.x)) == 0.0


def test_printed_sign_breaks_similarity(classical):
    coarse = _similarity_residual(classical, 0.05, printed_sign=True)
    fine = _similarity_residual(classical, 0.025, printed_sign=True)
    assert coarse > 0.02
    assert fine > 0.8 * coarse


# ================================================================
# HEAT KERNEL
# ================================================================

@pytest.mark.parametrize("t", [0.1, 0.5, 1.0, 5.0])
def test_classical_kernel_is_shifted_gaussian(classical_model, t):
    j = grid_index(classical_model, 0.0)
    column = kernel_column(classical_model, t, j)
    x = classical_model.x
    exact = np.exp(-t / 4) / np.sqrt(4 * np.pi * t) * np.exp(-x ** 2 / (4 * t))
    near = np.abs(x) <= 2 * np.sqrt(t)
    assert np.max(np.abs(column[near] / exact[near] - 1.0)) < 1e-2


def test_classical_kernel_norm(classical_model):
    j = grid_index(classical_model, 0.0)
    for t in (0.5, 1.0, 3.0):
        K = heat_kernel(classical_model, t)
        norm = kernel_l2_norms(classical_model, K)[j]
        assert norm == pytest.approx(np.exp(-t / 4) * 2 ** -0.5 * (2 * np.pi * t) ** -0.25, rel=1e-3)


def test_kernel_semigroup_and_symmetry(classical):
    model = build_linear_operator(solve_profile(classical, L=20.0, dx=0.1))
    half = heat_kernel(model, 0.5)
    full = heat_kernel(model, 1.0)
    scale = np.max(np.abs(full))
    assert np.max(np.abs(half @ half * model.dx - full)) < 1e-8 * scale
    assert np.allclose(full, full.T, rtol=0, atol=1e-12 * scale)


def test_kernel_rejects_non_positive_time(classical_model):
    with pytest.raises(LinopError):
        heat_kernel(classical_model, 0.0)
    with pytest.raises(LinopError):
        kernel_column(classical_model, -1.0, 0)


def test_kernel_reproduces_data_for_small_time(classical):
    model = build_linear_operator(solve_profile(classical, L=20.0, dx=0.1))
    g = np.exp(-model.x ** 2)
    errors = []
    for t in (1e-2, 2e-2):
        smoothed = heat_kernel(model, t) @ g * model.dx
        errors.append(np.max(np.abs(smoothed - g)))
    assert errors[0] < 0.05
    assert 1.5 < errors[1] / errors[0] < 2.5


@pytest.mark.parametrize("name", ["classical_model", "cubic_model"])
def test_kernel_decay_shape(name, request):
    model = request.getfixturevalue(name)
    decay = kernel_decay_profile(model, np.linspace(0.1, 5.0, 12))
    assert decay.kernel_variation < 2.0
    assert decay.derivative_variation < 2.0


def test_classical_kernel_decay_is_flat(classical_model):
    decay = kernel_decay_profile(classical_model, np.linspace(0.5, 5.0, 10))
    assert decay.kernel_variation < 1.02
    assert decay.derivative_variation < 1.02


@pytest.mark.parametrize("y,eta,t,expected", [
    (0.5, 0.5, 1.0, 1.0),
    (1.0, 0.0, 1.0, np.exp(0.25)),
    (1.5, -0.5, 2.0, np.exp(0.5)),
])
def test_complexified_kernel_factor(classical_model, y, eta, t, expected):
    assert complexified_kernel_factor(classical_model, t, y, eta) == pytest.approx(expected, rel=1e-10)


# ================================================================
# SPECTRAL GAP
# ================================================================

def test_classical_gap(classical_model):
    gap = spectral_gap(classical_model)
    assert gap.omega == pytest.approx(0.25, abs=0.01)
    assert gap.essential_edge == pytest.approx(-0.25, abs=1e-12)
    assert gap.stable
    assert np.all(np.isreal(classical_model.eigenvalues))


def test_cubic_essential_edge(cubic_model, cubic):
    slopes = [cubic.flux.derivative(a) for a in (cubic.alpha_minus, cubic.alpha_plus)]
    gap = spectral_gap(cubic_model)
    assert gap.essential_edge == pytest.approx(-min(0.25 * s ** 2 for s in slopes), abs=1e-6)
    assert gap.p_minus == pytest.approx(4.0 / 9.0, abs=1e-6)
    assert gap.p_plus == pytest.approx(25.0 / 36.0, abs=1e-6)
    omega, edge = gap
    assert omega > 0 and edge < 0


# ================================================================
# GREEN FUNCTION
# ================================================================

def test_green_function_factorization(classical_model):
    weight = build_weight(classical_model.profile)
    j = grid_index(classical_model, 1.0)
    i = grid_index(classical_model, -0.5)
    K = kernel_column(classical_model, 1.0, j)[i]
    G = green_function(classical_model, weight, 1.0, -0.5, 1.0)
    assert G == pytest.approx(np.cosh(0.5) / np.cosh(0.25) * K, rel=1e-9)


def test_green_applied_to_profile_shape(classical_model):
    weight = build_weight(classical_model.profile)
    x = classical_model.x
    H0 = 1.0 / np.cosh(x / 2) ** 2
    t = 1.0
    numeric = apply_green(classical_model, weight, t, H0)
    exact = np.exp(-t / 4) * heat_convolution(lambda s: 1.0 / np.cosh(s / 2), x, t) / np.cosh(x / 2)
    inner = np.abs(x) <= 20
    error = np.linalg.norm(numeric[inner] - exact[inner]) / np.linalg.norm(exact[inner])
    assert error < 1e-3


def test_green_with_unit_weight_is_the_kernel(classical_model):
    from lab.services.weights import WeightFunction

    unit = WeightFunction(profile=classical_model.profile,
                          log_values=np.zeros_like(classical_model.profile.x))
    j = grid_index(classical_model, 0.0)
    i = grid_index(classical_model, 0.5)
    assert green_function(classical_model, unit, 0.7, 0.5, 0.0) == kernel_column(classical_model, 0.7, j)[i]


def test_green_propagator_conserves_mass(classical_model):
    weight = build_weight(classical_model.profile)
    x = classical_model.x
    H = apply_green(classical_model, weight, 2.0, 1.0 / np.cosh(x / 2) ** 2)
    h = x_derivative(classical_model, H)
    assert abs(np.sum(h) * classical_model.dx) < 1e-10


def test_grid_index_rejects_off_grid_points(classical_model):
    with pytest.raises(LinopError):
        grid_index(classical_model, 0.013)
