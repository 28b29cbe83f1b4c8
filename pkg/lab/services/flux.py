# lab/services/flux.py - POLYNOMIAL FLUX ALGEBRA AND SHOCK ADMISSIBILITY
import logging
from dataclasses import dataclass, replace
from math import factorial
from typing import Sequence, Tuple

import numpy as np
from numpy.polynomial import polynomial as P

logger = logging.getLogger(__name__)


class FluxError(Exception):
    """Raised for malformed fluxes or shock problems."""
    pass


class InadmissibleProblemError(FluxError):
    """Raised when a shock problem fails an admissibility predicate."""
    def __init__(self, predicate: str, message: str):
        self.predicate = predicate
        self.message = message
        super().__init__(f"Inadmissible shock ({predicate}): {message}")


# ================================================================
# FLUX
# ================================================================

@dataclass(frozen=True)
class PolynomialFlux:
    """Phi(u) = sum(coeffs[i] * u**i), coefficients in ascending powers."""
    coeffs: Tuple[float, ...]

    def __post_init__(self):
        coeffs = tuple(float(c) for c in self.coeffs)
        if len(coeffs) < 3:
            raise FluxError(f"Flux degree must be at least 2, got {len(coeffs) - 1}")
        if not all(np.isfinite(coeffs)):
            raise FluxError(f"Flux coefficients must be finite: {coeffs}")
        if coeffs[-1] == 0.0:
            raise FluxError("Leading flux coefficient must be nonzero")
        object.__setattr__(self, "coeffs", coeffs)

    @classmethod
    def from_sequence(cls, coeffs: Sequence[float]) -> "PolynomialFlux":
        return cls(tuple(coeffs))

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.coeffs, dtype=float)

    def __call__(self, u):
        return P.polyval(u, self.array)

    def derivative_coeffs(self, order: int = 1) -> np.ndarray:
        if order == 0:
            return self.array
        if order > self.degree:
            return np.zeros(1)
        return P.polyder(self.array, order)

    def derivative(self, u, order: int = 1):
        return P.polyval(u, self.derivative_coeffs(order))

    def shifted(self, c: float) -> "PolynomialFlux":
        """Phi(u) - c*u."""
        coeffs = list(self.coeffs)
        coeffs[1] -= c
        return PolynomialFlux(tuple(coeffs))

    def taylor_coefficients(self, u, start: int = 1) -> list:
        """Phi^(k)(u)/k! for k = start..degree, as arrays shaped like u."""
        u = np.asarray(u)
        return [
            P.polyval(u, self.derivative_coeffs(k)) / factorial(k)
            for k in range(start, self.degree + 1)
        ]

    def increment(self, u, h):
        """Phi(u + h) - Phi(u) via the Taylor form, exact zero at h = 0."""
        return taylor_horner(self.taylor_coefficients(u, start=1), h) * h


def taylor_horner(coefficients: list, h):
    """Evaluate sum_j coefficients[j] * h**j by Horner's rule."""
    acc = coefficients[-1] * np.ones_like(h)
    for coeff in reversed(coefficients[:-1]):
        acc = coeff + h * acc
    return acc


# ================================================================
# SHOCK PROBLEM
# ================================================================

@dataclass(frozen=True)
class ShockProblem:
    flux: PolynomialFlux
    alpha_minus: float
    alpha_plus: float
    nu: float
    c: float
    k: float
    # x_phys = length_scale * x and t_phys = length_scale * t; frame moves at frame_speed
    length_scale: float = 1.0
    frame_speed: float = 0.0
    normalized: bool = False

    def __post_init__(self):
        if not self.alpha_plus > self.alpha_minus:
            raise FluxError(
                f"Need alpha_plus > alpha_minus, got ({self.alpha_minus}, {self.alpha_plus})"
            )
        if not self.nu > 0:
            raise FluxError(f"Viscosity must be positive, got {self.nu}")

    @classmethod
    def create(cls, flux: PolynomialFlux, alpha_minus: float, alpha_plus: float,
               nu: float = 1.0) -> "ShockProblem":
        c, k = compute_celerity_and_constant(flux, alpha_minus, alpha_plus)
        return cls(flux=flux, alpha_minus=float(alpha_minus), alpha_plus=float(alpha_plus),
                   nu=float(nu), c=c, k=k)

    @property
    def width(self) -> float:
        return self.alpha_plus - self.alpha_minus

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.alpha_minus + self.alpha_plus)

    @property
    def end_slopes(self) -> Tuple[float, float]:
        """Phi'(alpha_minus), Phi'(alpha_plus)."""
        return (float(self.flux.derivative(self.alpha_minus)),
                float(self.flux.derivative(self.alpha_plus)))


def compute_celerity_and_constant(flux: PolynomialFlux, a_minus: float,
                                  a_plus: float) -> Tuple[float, float]:
    if a_plus == a_minus:
        raise FluxError("Degenerate shock: alpha_plus == alpha_minus")
    phi_minus, phi_plus = float(flux(a_minus)), float(flux(a_plus))
    width = a_plus - a_minus
    c = (phi_plus - phi_minus) / width
    k = (a_minus * phi_plus - a_plus * phi_minus) / width
    return c, k


def _chord_quotient(problem: ShockProblem) -> np.ndarray:
    """Coefficients of (Phi(u) - Phi(alpha_minus)) / (u - alpha_minus)."""
    numerator = problem.flux.array.copy()
    numerator[0] -= float(problem.flux(problem.alpha_minus))
    quotient, _ = P.polydiv(numerator, np.array([-problem.alpha_minus, 1.0]))
    return quotient


def check_entropy(problem: ShockProblem, samples: int = 10_000) -> bool:
    """Chord condition (Phi(u) - Phi(a-))/(u - a-) > c on the open interval."""
    quotient = _chord_quotient(problem)
    a, b = problem.alpha_minus, problem.alpha_plus
    u = a + problem.width * np.arange(1, samples + 1) / (samples + 1)

    critical = P.polyroots(P.polyder(quotient)) if len(quotient) > 2 else np.array([])
    critical = np.real(critical[np.abs(np.imag(critical)) < 1e-12])
    critical = critical[(critical > a) & (critical < b)]

    points = np.concatenate([u, critical])
    chord_gap = P.polyval(points, quotient) - problem.c
    ok = bool(np.all(chord_gap > 0.0))
    if not ok:
        worst = points[np.argmin(chord_gap)]
        logger.info(f"[Flux] Entropy condition fails near u={worst:.6g} (gap {chord_gap.min():.3e})")
    return ok


def check_lax(problem: ShockProblem) -> bool:
    slope_minus, slope_plus = problem.end_slopes
    return bool(slope_plus < problem.c < slope_minus)


def require_admissible(problem: ShockProblem) -> None:
    if not check_entropy(problem):
        raise InadmissibleProblemError(
            "entropy", "chord condition fails on (alpha_minus, alpha_plus)"
        )
    if not check_lax(problem):
        slope_minus, slope_plus = problem.end_slopes
        raise InadmissibleProblemError(
            "lax",
            f"need Phi'(a+) < c < Phi'(a-), got {slope_plus:.6g} < {problem.c:.6g} < {slope_minus:.6g}",
        )


def normalize(problem: ShockProblem) -> ShockProblem:
    """Moving frame with zero celerity and unit viscosity.

    Coordinates scale as x = nu*x', t = nu*t', which leaves the flux unchanged;
    the scale and frame speed are accumulated on the returned problem.
    """
    if problem.c == 0.0 and problem.nu == 1.0:
        return problem if problem.normalized else replace(problem, normalized=True)

    flux = problem.flux.shifted(problem.c)
    phi_minus = float(flux(problem.alpha_minus))
    phi_plus = float(flux(problem.alpha_plus))
    if abs(phi_plus - phi_minus) > 1e-14 * (abs(phi_plus) + 1.0):
        raise FluxError(
            f"Moving-frame flux does not balance: Phi_c(a+) - Phi_c(a-) = {phi_plus - phi_minus:.3e}"
        )

    normalized = ShockProblem(
        flux=flux,
        alpha_minus=problem.alpha_minus,
        alpha_plus=problem.alpha_plus,
        nu=1.0,
        c=0.0,
        k=-phi_plus,
        length_scale=problem.length_scale * problem.nu,
        frame_speed=problem.frame_speed + problem.c,
        normalized=True,
    )
    logger.debug(
        f"[Flux] Normalized: c={problem.c:.6g} nu={problem.nu:.6g} -> length scale {normalized.length_scale:.6g}"
    )
    return normalized
