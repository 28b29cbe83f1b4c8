# lab/test_wave.py - PROFILE, CONTINUATION AND SINGULARITY LATTICE
import numpy as np
import pytest
from scipy import integrate

from lab.services import wave
from lab.services.flux import PolynomialFlux, ShockProblem, normalize
from lab.services.wave import (
    BranchFitError,
    EndpointGapError,
    SingularityProximityError,
    WaveBalance,
    WaveError,
    continue_profile,
    fit_branch_exponent,
    fit_branch_order,
    get_profile,
    locate_singularities,
    sample_profile,
    solve_profile,
)


@pytest.fixture(scope="module")
def classical():
    return normalize(ShockProblem.create(PolynomialFlux((0.0, 0.0, -0.5)), -1.0, 1.0))


@pytest.fixture(scope="module")
def cubic():
    return normalize(ShockProblem.create(PolynomialFlux((0.0, 0.0, 0.0, -1.0 / 3.0)), 1.0, 2.0))


@pytest.fixture(scope="module")
def classical_profile(classical):
    return solve_profile(classical, L=20.0, dx=0.05)


@pytest.fixture(scope="module")
def cubic_profile(cubic):
    return solve_profile(cubic, L=20.0, dx=0.05)


# ================================================================
# PROFILE
# ================================================================

def test_classical_profile_is_tanh(classical_profile):
    x = classical_profile.x
    assert np.max(np.abs(classical_profile.f_values - np.tanh(x / 2))) < 1e-11
    assert np.max(np.abs(classical_profile.fprime_values - 0.5 / np.cosh(x / 2) ** 2)) < 1e-11
    i = classical_profile.nearest_index(2.0)
    assert classical_profile.f_values[i] == pytest.approx(0.7615942, abs=1e-7)
    j = classical_profile.nearest_index(0.0)
    assert classical_profile.f_values[j] == 0.0
    assert classical_profile.fprime_values[j] == pytest.approx(0.5, abs=1e-15)


def test_profile_invariants(classical_profile, cubic_profile):
    for profile in (classical_profile, cubic_profile):
        assert np.max(profile.ode_residual()) < 1e-8
        assert np.all(np.diff(profile.f_values) >= 0)
        problem = profile.problem
        assert np.all(profile.f_values > problem.alpha_minus)
        assert np.all(profile.f_values < problem.alpha_plus)


def test_cubic_profile_matches_separable_quadrature(cubic_profile, cubic):
    targets = np.linspace(1.05, 1.95, 19)
    positions = np.array([
        integrate.quad(lambda G: 1.0 / (cubic.flux(G) - 2.0), 1.5, F, epsabs=1e-13, epsrel=1e-13)[0]
        for F in targets
    ])
    resampled = sample_profile(cubic, positions, anchor=1.5)
    assert np.max(np.abs(resampled.f_values - targets)) < 1e-7
    assert cubic_profile.anchor == 1.5


def test_short_domain_reports_endpoint_gap(classical):
    with pytest.raises(EndpointGapError) as excinfo:
        solve_profile(classical, L=5.0, dx=0.05)
    assert excinfo.value.gap == pytest.approx(1.0 - np.tanh(2.5), rel=1e-6)


def test_profile_needs_normalized_problem():
    problem = ShockProblem.create(PolynomialFlux((0.0, 0.0, 0.0, -1.0 / 3.0)), 1.0, 2.0)
    with pytest.raises(WaveError):
        solve_profile(problem, L=20.0, dx=0.05)


def test_anchor_outside_interval_rejected(classical):
    with pytest.raises(WaveError):
        sample_profile(classical, [0.0], anchor=1.0)


def test_get_profile_reuses_cached_samples(classical):
    first = get_profile(classical, 20.0, 0.1)
    second = get_profile(classical, 20.0, 0.1)
    assert np.array_equal(first.f_values, second.f_values)


def test_profile_cache_timeout_comes_from_settings(classical, settings, monkeypatch):
    solved = []
    solve = wave.solve_profile
    monkeypatch.setattr(wave, "solve_profile", lambda *args: solved.append(args) or solve(*args))
    settings.LAB = {**settings.LAB, "PROFILE_CACHE_TIMEOUT": 0}
    get_profile(classical, 20.0, 0.125)
    get_profile(classical, 20.0, 0.125)
    assert len(solved) == 2
    settings.LAB = {**settings.LAB, "PROFILE_CACHE_TIMEOUT": None}
    get_profile(classical, 20.0, 0.125)
    get_profile(classical, 20.0, 0.125)
    assert len(solved) == 3


# ================================================================
# SINGULARITY LATTICE
# ================================================================

def test_classical_lattice(classical):
    lattice = locate_singularities(classical)
    assert lattice.y0 == pytest.approx(np.pi, rel=1e-10)
    assert lattice.nearest == pytest.approx(1j * np.pi, abs=1e-10)
    assert lattice.branch_order == 1
    residues = {round(line.root.real): line.residue for line in lattice.lines}
    assert residues[1] == pytest.approx(-1.0)
    assert residues[-1] == pytest.approx(1.0)
    for line in lattice.lines:
        assert abs(line.spacing) == pytest.approx(2 * np.pi)
        assert line.spacing.real == pytest.approx(0.0, abs=1e-12)


def test_cubic_lattice_spacings(cubic):
    lattice = locate_singularities(cubic)
    assert len(lattice.lines) <= 3
    spacings = sorted(abs(line.spacing) for line in lattice.lines)
    assert spacings == pytest.approx(sorted([3 * np.pi / 2, 6 * np.pi / 5, 3 * np.pi / 10]), rel=1e-8)
    residues = sorted(line.residue.real for line in lattice.lines)
    assert residues == pytest.approx(sorted([0.75, -0.6, -0.15]), rel=1e-8)
    assert lattice.y0 == pytest.approx(3 * np.pi / 5, rel=1e-8)
    assert lattice.branch_order == 2


@pytest.mark.parametrize("name", ["classical", "cubic"])
def test_contour_looped_around_each_root_stays_on_the_lattice(name, request):
    problem = request.getfixturevalue(name)
    balance = WaveBalance(problem)
    lattice = locate_singularities(problem)
    base = lattice.lines[0].base_point
    radius = 0.25 * balance.min_root_separation
    for line in lattice.lines:
        def loop(theta, part):
            dF = 1j * radius * np.exp(1j * theta)
            value = dF / balance(line.root + radius * np.exp(1j * theta))
            return value.real if part == 0 else value.imag
        increment = complex(*(integrate.quad(loop, 0.0, 2 * np.pi, args=(part,), epsabs=1e-13)[0]
                              for part in (0, 1)))
        # anchor -> once around the root -> infinity, taken on the outward side
        if increment.imag * base.imag < 0:
            increment = -increment
        looped = base + increment
        assert line.base_point == base
        assert looped == pytest.approx(line.base_point + line.spacing, abs=1e-9)
        assert lattice.distance_to(looped, depth=2) < 1e-9
        assert abs(looped.imag) >= lattice.y0


@pytest.mark.parametrize("nu", [0.5, 1.0, 2.0])
@pytest.mark.parametrize("width", [1.0, 2.0, 4.0])
def test_classical_strip_height_formula(nu, width):
    problem = ShockProblem.create(PolynomialFlux((0.0, 0.0, -0.5)), -width / 2, width / 2, nu=nu)
    lattice = locate_singularities(normalize(problem))
    expected = 2 * nu * np.pi / width
    assert abs(lattice.y0_physical - expected) / expected < 1e-6


@pytest.mark.parametrize("coeffs,interval", [
    ((0.0, 0.0, -0.5), (-1.0, 1.0)),
    ((0.0, 0.0, 0.0, -1.0 / 3.0), (1.0, 2.0)),
    ((0.0, 0.3, -1.0, 0.0, -0.5), (-0.5, 0.5)),
])
def test_residues_sum_to_zero(coeffs, interval):
    problem = normalize(ShockProblem.create(PolynomialFlux(coeffs), *interval))
    assert abs(WaveBalance(problem).residue_sum) < 1e-12


def test_repeated_root_is_unsupported():
    # Phi_c - Phi_c(a+) = -(u - 1)(u + 1)(u - 3)^2 has a double root at 3
    coeffs = -np.polynomial.polynomial.polyfromroots([1.0, -1.0, 3.0, 3.0])
    coeffs[0] += 1.0
    problem = ShockProblem.create(PolynomialFlux(tuple(coeffs)), -1.0, 1.0)
    with pytest.raises(WaveError):
        WaveBalance(normalize(problem))


# ================================================================
# CONTINUATION
# ================================================================

def test_continuation_on_imaginary_axis(classical_profile):
    assert continue_profile(classical_profile, 1j) == pytest.approx(1j * np.tan(0.5), abs=1e-9)
    assert continue_profile(classical_profile, 1j).imag == pytest.approx(0.5463025, abs=1e-7)


def test_continuation_off_axis(classical_profile):
    z = 1.0 + 1.0j
    assert continue_profile(classical_profile, z) == pytest.approx(np.tanh(z / 2), abs=1e-9)


def test_continuation_is_conjugate_symmetric(cubic_profile):
    z = 0.7 + 0.9j
    upper = continue_profile(cubic_profile, z)
    lower = continue_profile(cubic_profile, np.conj(z))
    assert abs(lower - np.conj(upper)) < 1e-10


def test_continuation_on_real_axis_matches_samples(classical_profile):
    i = classical_profile.nearest_index(1.5)
    value = continue_profile(classical_profile, classical_profile.x[i])
    assert value == pytest.approx(classical_profile.f_values[i], abs=1e-10)


def test_continuation_refuses_near_singularity(classical_profile):
    with pytest.raises(SingularityProximityError) as excinfo:
        continue_profile(classical_profile, 0.01 + 3.1j)
    assert excinfo.value.distance < excinfo.value.margin


def test_singularity_margin_comes_from_settings(classical_profile, settings):
    z = 2.7j
    assert continue_profile(classical_profile, z) == pytest.approx(1j * np.tan(1.35), rel=1e-5)
    settings.LAB = {**settings.LAB, "SINGULARITY_MARGIN": 0.2}
    with pytest.raises(SingularityProximityError) as excinfo:
        continue_profile(classical_profile, z)
    assert excinfo.value.margin == pytest.approx(0.2 * np.pi)


# ================================================================
# BRANCH ORDER
# ================================================================

def test_branch_order_classical(classical_profile):
    assert fit_branch_order(classical_profile) == pytest.approx(-1.0, abs=0.02)


def test_branch_order_cubic(cubic_profile):
    assert fit_branch_order(cubic_profile) == pytest.approx(-0.5, abs=0.03)


def test_branch_exponent_of_synthetic_function():
    z0 = 0.3 + 2.0j
    exponent = fit_branch_exponent(lambda z: (z - z0) ** -0.5 * (1 + (z - z0)), z0, 2.0)
    assert exponent == pytest.approx(-0.5, abs=0.01)


def test_branch_fit_rejects_poor_correlation():
    z0 = 2.0j
    with pytest.raises(BranchFitError):
        fit_branch_exponent(lambda z: 1.0 + 0.5 * np.sin(40 * np.log(np.abs(z - z0))), z0, 2.0)
