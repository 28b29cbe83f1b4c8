# lab/services/linop.py - WEIGHTED LINEARIZED OPERATOR, SPECTRUM AND HEAT KERNEL
import hashlib
import logging
from dataclasses import dataclass
from typing import Callable, Optional, Tuple, Union

import numpy as np
from django.conf import settings
from django.core.cache import caches
from scipy.fft import dst
from scipy.linalg import eigh_tridiagonal

from .wave import WaveProfile, get_profile
from .weights import WeightFunction

logger = logging.getLogger(__name__)


class LinopError(Exception):
    """Raised for invalid operator or kernel requests."""
    pass


def build_potential(profile: WaveProfile, printed_sign: bool = False) -> np.ndarray:
    """q = -1/4 Phi_c'(f)^2 + 1/2 Phi_c''(f) f' on the profile grid.

    printed_sign flips the quadratic term; that variant breaks the similarity
    identity and is kept as a control.
    """
    flux = profile.problem.flux
    slope = flux.derivative(profile.f_values, 1)
    curvature = flux.derivative(profile.f_values, 2)
    quadratic = 0.25 * slope ** 2
    return (quadratic if printed_sign else -quadratic) + 0.5 * curvature * profile.fprime_values


# ================================================================
# MODEL
# ================================================================

@dataclass
class LinearOperatorModel:
    """d2/dx2 + q on the interior of the profile grid, Dirichlet at both ends."""
    profile: WaveProfile
    potential: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    printed_sign: bool = False

    @property
    def x(self) -> np.ndarray:
        return self.profile.x[1:-1]

    @property
    def dx(self) -> float:
        return self.profile.dx

    @property
    def size(self) -> int:
        return len(self.potential)

    @property
    def diagonal(self) -> np.ndarray:
        return -2.0 / self.dx ** 2 + self.potential

    @property
    def off_diagonal(self) -> np.ndarray:
        return np.full(self.size - 1, 1.0 / self.dx ** 2)

    @property
    def matrix(self) -> np.ndarray:
        return (np.diag(self.diagonal)
                + np.diag(self.off_diagonal, 1)
                + np.diag(self.off_diagonal, -1))

    @property
    def end_values(self) -> Tuple[float, float]:
        """p- and p+ from the end-state slopes, p = Phi_c'(alpha)^2 / 4."""
        slope_minus, slope_plus = self.profile.problem.end_slopes
        return 0.25 * slope_minus ** 2, 0.25 * slope_plus ** 2

    def interior(self, values) -> np.ndarray:
        values = np.asarray(values)
        if values.shape[-1] == self.size + 2:
            return values[..., 1:-1]
        if values.shape[-1] != self.size:
            raise LinopError(f"Samples of length {values.shape[-1]} do not fit a grid of {self.size}")
        return values

    def propagate(self, t: float, u: np.ndarray) -> np.ndarray:
        """exp(t A) applied to interior samples (last axis)."""
        coeffs = u @ self.eigenvectors
        return (coeffs * np.exp(t * self.eigenvalues)) @ self.eigenvectors.T


def build_linear_operator(profile: WaveProfile, printed_sign: bool = False) -> LinearOperatorModel:
    q = build_potential(profile, printed_sign=printed_sign)[1:-1]
    dx = profile.dx
    diagonal = -2.0 / dx ** 2 + q
    off = np.full(len(q) - 1, 1.0 / dx ** 2)
    eigenvalues, eigenvectors = eigh_tridiagonal(diagonal, off)
    logger.info(f"[Linop] {len(q)} interior points, top eigenvalue {eigenvalues[-1]:.6g}")
    return LinearOperatorModel(profile=profile, potential=q, eigenvalues=eigenvalues,
                               eigenvectors=eigenvectors, printed_sign=printed_sign)


def get_linear_operator(problem, L: float, dx: float, anchor: Optional[float] = None) -> LinearOperatorModel:
    key = "linop:" + hashlib.md5(repr((problem, L, dx, anchor)).encode()).hexdigest()
    cache = caches["numerics"]
    cached = cache.get(key)
    if cached is not None:
        logger.info(f"[Cache HIT] Linear operator L={L:g} dx={dx:g}")
        return cached
    model = build_linear_operator(get_profile(problem, L, dx, anchor))
    cache.set(key, model, timeout=settings.LAB['PROFILE_CACHE_TIMEOUT'])
    return model


# ================================================================
# SIMILARITY IDENTITY  L H = w^-1 M (w H)
# ================================================================

def _d1(v: np.ndarray, dx: float) -> np.ndarray:
    return (v[2:] - v[:-2]) / (2.0 * dx)


def _d2(v: np.ndarray, dx: float) -> np.ndarray:
    return (v[2:] - 2.0 * v[1:-1] + v[:-2]) / dx ** 2


def similarity_check(model: LinearOperatorModel, w: WeightFunction,
                     H: Union[Callable, np.ndarray]) -> float:
    profile = model.profile
    x, dx = profile.x, model.dx
    values = H(x) if callable(H) else np.asarray(H, dtype=float)
    if len(w.log_values) != len(x):
        raise LinopError("Weight and operator grids differ")

    slope = profile.problem.flux.derivative(profile.f_values, 1)
    w_full = w.values
    transport = slope[1:-1] * _d1(values, dx) - _d2(values, dx)
    u = w_full * values
    conjugated = (-_d2(u, dx) - model.potential * u[1:-1]) / w_full[1:-1]

    norm = np.sqrt(np.sum(values ** 2) * dx)
    if norm == 0.0:
        return 0.0
    return float(np.sqrt(np.sum((transport - conjugated) ** 2) * dx) / norm)


# ================================================================
# HEAT KERNEL
# ================================================================

def _require_positive_time(t: float) -> None:
    if not t > 0:
        raise LinopError(f"Kernel time must be positive, got {t}")


def heat_kernel(model: LinearOperatorModel, t: float) -> np.ndarray:
    """K(x, t; xi) = sum_k exp(t lambda_k) v_k(x) v_k(xi) / dx on the interior grid."""
    _require_positive_time(t)
    keep = t * model.eigenvalues > -700.0
    V = model.eigenvectors[:, keep]
    return (V * np.exp(t * model.eigenvalues[keep])) @ V.T / model.dx


def kernel_column(model: LinearOperatorModel, t: float, j: int) -> np.ndarray:
    _require_positive_time(t)
    V = model.eigenvectors
    return V @ (np.exp(t * model.eigenvalues) * V[j]) / model.dx


def x_derivative(model: LinearOperatorModel, values: np.ndarray) -> np.ndarray:
    """Centered difference along the first axis with zero Dirichlet padding."""
    padded = np.zeros((values.shape[0] + 2,) + values.shape[1:], dtype=values.dtype)
    padded[1:-1] = values
    return (padded[2:] - padded[:-2]) / (2.0 * model.dx)


def heat_kernel_derivative(model: LinearOperatorModel, t: float) -> np.ndarray:
    return x_derivative(model, heat_kernel(model, t))


def kernel_l2_norms(model: LinearOperatorModel, K: np.ndarray) -> np.ndarray:
    """L2(dx) norm of every column."""
    return np.sqrt(np.sum(K ** 2, axis=0) * model.dx)


def grid_index(model: LinearOperatorModel, x: float) -> int:
    j = int(np.rint((x - model.x[0]) / model.dx))
    if not 0 <= j < model.size or abs(model.x[j] - x) > 1e-9 * max(1.0, abs(x)):
        raise LinopError(f"x = {x} is not an interior grid point")
    return j


@dataclass(frozen=True)
class KernelDecay:
    times: np.ndarray
    kernel_scaled: np.ndarray
    derivative_scaled: np.ndarray

    @property
    def kernel_variation(self) -> float:
        return float(self.kernel_scaled.max() / self.kernel_scaled.min())

    @property
    def derivative_variation(self) -> float:
        return float(self.derivative_scaled.max() / self.derivative_scaled.min())


def kernel_decay_profile(model: LinearOperatorModel, times, xi: float = 0.0) -> KernelDecay:
    """t^(1/4) e^(omega t) ||K(., t, xi)|| and t^(3/4) e^(omega t) ||d/dx K(., t, xi)||."""
    times = np.asarray(times, dtype=float)
    omega = spectral_gap(model).omega
    j = grid_index(model, xi)
    kernel, derivative = [], []
    for t in times:
        column = kernel_column(model, t, j)
        kernel.append(np.sqrt(np.sum(column ** 2) * model.dx))
        d_column = x_derivative(model, column)
        derivative.append(np.sqrt(np.sum(d_column ** 2) * model.dx))
    growth = np.exp(omega * times)
    return KernelDecay(
        times=times,
        kernel_scaled=times ** 0.25 * growth * np.array(kernel),
        derivative_scaled=times ** 0.75 * growth * np.array(derivative),
    )


def complexified_kernel_factor(model: LinearOperatorModel, t: float, y: float, eta: float,
                               xi: float = 0.0) -> float:
    """||K(. + iy, t, xi + i eta)|| / ||K(., t, xi)||."""
    _require_positive_time(t)
    j = grid_index(model, xi)
    x = model.x
    if np.ptp(model.potential) < 1e-10:
        q0 = float(np.mean(model.potential))
        shift = x - x[j]
        scale = np.exp(q0 * t) / np.sqrt(4.0 * np.pi * t)
        continued = scale * np.exp(-(shift + 1j * (y - eta)) ** 2 / (4.0 * t))
        real = scale * np.exp(-shift ** 2 / (4.0 * t))
        return float(np.sqrt(np.sum(np.abs(continued) ** 2) / np.sum(real ** 2)))

    logger.warning("[Linop] Variable potential: complexified kernel from a truncated sine series (approximate)")
    continued = _sine_series_column(model, t, j, y, eta)
    real = kernel_column(model, t, j)
    return float(np.sqrt(np.sum(np.abs(continued) ** 2) / np.sum(real ** 2)))


def _sine_series_column(model: LinearOperatorModel, t: float, j: int, y: float, eta: float) -> np.ndarray:
    n, dx = model.size, model.dx
    wavenumbers = np.pi * np.arange(1, n + 1) / ((n + 1) * dx)
    reach = abs(y) + abs(eta)
    cutoff = wavenumbers[-1] if reach == 0 else min(wavenumbers[-1], 30.0 / reach)
    modes = wavenumbers <= cutoff
    keep = model.eigenvalues >= -(cutoff ** 2) - np.max(np.abs(model.potential))

    coeffs = dst(model.eigenvectors[:, keep], type=1, axis=0)[modes] / (n + 1)
    kappa = wavenumbers[modes]
    origin = model.profile.x[0]
    basis_x = np.sin(np.outer(model.x + 1j * y - origin, kappa))
    basis_xi = np.sin(kappa * (model.x[j] + 1j * eta - origin))
    at_xi = basis_xi @ coeffs
    return basis_x @ (coeffs @ (np.exp(t * model.eigenvalues[keep]) * at_xi)) / dx


# ================================================================
# SPECTRAL GAP AND GREEN FUNCTION
# ================================================================

@dataclass(frozen=True)
class SpectralGap:
    omega: float
    essential_edge: float
    top_eigenvalue: float
    positive_count: int
    p_minus: float
    p_plus: float

    @property
    def stable(self) -> bool:
        return self.positive_count == 0

    def __iter__(self):
        return iter((self.omega, self.essential_edge))


def spectral_gap(model: LinearOperatorModel) -> SpectralGap:
    top = float(model.eigenvalues[-1])
    positive = int(np.sum(model.eigenvalues >= 0))
    p_minus, p_plus = -float(model.potential[0]), -float(model.potential[-1])
    gap = SpectralGap(
        omega=-top,
        essential_edge=-min(p_minus, p_plus),
        top_eigenvalue=top,
        positive_count=positive,
        p_minus=p_minus,
        p_plus=p_plus,
    )
    if positive:
        logger.warning(
            f"[Linop] {positive} non-negative eigenvalue(s), top {top:.6g}; "
            f"grid L={model.profile.x[-1]:g} dx={model.dx:g}, tails p-={p_minus:.6g} p+={p_plus:.6g}"
        )
    return gap


def green_function(model: LinearOperatorModel, w: WeightFunction, t: float, x: float, xi: float) -> float:
    """G(x, t; xi) = w(xi) / w(x) K(x, t; xi)."""
    i, j = grid_index(model, x), grid_index(model, xi)
    log_w = model.interior(w.log_values)
    column = kernel_column(model, t, j)
    return float(np.exp(log_w[j] - log_w[i]) * column[i])


def apply_green(model: LinearOperatorModel, w: WeightFunction, t: float, H0: np.ndarray) -> np.ndarray:
    """w^-1 exp(t A) (w H0) on the interior grid; H0 may be one profile or a stack (last axis x)."""
    log_w = model.interior(w.log_values)
    H0 = model.interior(H0)
    if t == 0:
        return np.array(H0, dtype=float)
    return model.propagate(t, np.exp(log_w) * H0) * np.exp(-log_w)
