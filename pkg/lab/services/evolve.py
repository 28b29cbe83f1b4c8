# lab/services/evolve.py - PSEUDO-SPECTRAL EVOLUTION OF THE PERTURBATION
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Tuple

import numpy as np
from scipy.fft import irfft, rfft

from .flux import taylor_horner
from .wave import WaveProfile

logger = logging.getLogger(__name__)

SPECTRAL_FLOOR = 1e-13
DATUM_KINDS = ("deriv_bump", "triangle_pair")


class EvolveError(Exception):
    """Base class for evolution failures."""
    pass


class InitialDataError(EvolveError):
    pass


class EvolutionBlowUpError(EvolveError):
    def __init__(self, t: float, message: str = "non-finite spectral coefficients"):
        self.t = t
        super().__init__(f"Evolution failed at t = {t:.6g}: {message}")


class ComplexEvaluationRefused(EvolveError):
    def __init__(self, y: float, delta: float, cap: float):
        self.y = y
        self.delta = delta
        self.cap = cap
        super().__init__(
            f"|Im z| = {y:.6g} outside the resolved strip (delta {delta:.6g}, cap {cap:.6g})"
        )


class MassLeakError(EvolveError):
    def __init__(self, mass: float, scale: float):
        self.mass = mass
        self.scale = scale
        super().__init__(f"Potential does not return to zero: H(+L) = {mass:.3e}, max|H| = {scale:.3e}")


# ================================================================
# GRID AND STATE
# ================================================================

@dataclass(frozen=True)
class SpectralGrid:
    """Periodic grid x_j = -L + j dx, j < N, with rfft storage of the modes."""
    L: float
    N: int

    def __post_init__(self):
        if self.N < 16 or self.N % 2:
            raise EvolveError(f"Spectral grid needs an even N >= 16, got {self.N}")
        if not self.L > 0:
            raise EvolveError(f"Domain half-width must be positive, got {self.L}")

    @property
    def dx(self) -> float:
        return 2.0 * self.L / self.N

    @cached_property
    def x(self) -> np.ndarray:
        return -self.L + self.dx * np.arange(self.N)

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        return np.pi * np.arange(self.N // 2 + 1) / self.L

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        return np.arange(self.N // 2 + 1) <= self.N // 3

    @property
    def k_cut(self) -> float:
        return float(self.wavenumbers[self.N // 3])

    def default_dt(self) -> float:
        return 0.25 * self.dx ** 2


@dataclass
class PerturbationState:
    t: float
    modes: np.ndarray
    grid: SpectralGrid

    @classmethod
    def from_values(cls, values, grid: SpectralGrid, t: float = 0.0,
                    enforce_zero_mean: bool = True) -> "PerturbationState":
        values = np.asarray(values, dtype=float)
        if values.shape != (grid.N,):
            raise EvolveError(f"Expected {grid.N} samples, got {values.shape}")
        modes = rfft(values) * grid.dealias_mask
        if enforce_zero_mean:
            modes[0] = 0.0
        return cls(t=t, modes=modes, grid=grid)

    @classmethod
    def zeros(cls, grid: SpectralGrid, t: float = 0.0) -> "PerturbationState":
        return cls(t=t, modes=np.zeros(grid.N // 2 + 1, dtype=complex), grid=grid)

    @property
    def values(self) -> np.ndarray:
        return irfft(self.modes, n=self.grid.N)

    @property
    def full_spectrum(self) -> np.ndarray:
        """Modes in FFT order, k = 0..N/2-1 then -N/2..-1."""
        N = self.grid.N
        full = np.zeros(N, dtype=complex)
        full[: N // 2 + 1] = self.modes
        full[N // 2 + 1:] = np.conj(self.modes[1: N // 2][::-1])
        return full

    @property
    def mass(self) -> float:
        return float(self.modes[0].real * self.grid.dx)

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))

    def check_invariants(self, require_zero_mean: bool = True) -> None:
        if self.modes[0].imag != 0.0:
            raise EvolveError("Mean mode has an imaginary part")
        if np.any(self.modes[~self.grid.dealias_mask] != 0):
            raise EvolveError("Modes above the dealias cutoff are populated")
        if require_zero_mean and self.modes[0] != 0:
            raise EvolveError(f"State carries mass {self.mass:.3e}")


def spectrum_of(state: PerturbationState) -> Tuple[np.ndarray, np.ndarray]:
    """Positive retained wavenumbers and |h_k|."""
    retained = state.grid.dealias_mask.copy()
    retained[0] = False
    return state.grid.wavenumbers[retained], np.abs(state.modes[retained])


# ================================================================
# INITIAL DATA
# ================================================================

@dataclass(frozen=True)
class InitialDataParams:
    amplitude: float
    x0: float = 0.0
    w0: float = 1.0
    separation: Optional[float] = None


def _triangle(x, center: float, half_width: float):
    return np.maximum(0.0, 1.0 - np.abs(x - center) / half_width)


def make_initial_data(kind: str, params: InitialDataParams, grid: SpectralGrid) -> PerturbationState:
    if kind not in DATUM_KINDS:
        raise InitialDataError(f"Unknown datum kind '{kind}', expected one of {DATUM_KINDS}")
    if params.w0 < 4.0 * grid.dx:
        raise InitialDataError(f"Feature width {params.w0} is under 4 grid spacings ({4 * grid.dx:.4g})")

    x = grid.x
    A, x0, w0 = params.amplitude, params.x0, params.w0
    if kind == "deriv_bump":
        xi = (x - x0) / w0
        values = A * (-2.0 / w0) * np.tanh(xi) / np.cosh(xi) ** 2
    else:
        s = w0 if params.separation is None else params.separation
        values = A * (_triangle(x, x0 - s, w0) - _triangle(x, x0 + s, w0))

    state = PerturbationState.from_values(values, grid)
    if abs(float(np.sum(state.values)) * grid.dx) > 1e-14 * max(1.0, abs(A)):
        raise InitialDataError("Initial datum carries mass after projection")
    logger.info(f"[Evolve] Initial datum {kind}: A={A:g} x0={x0:g} w0={w0:g}")
    return state


# ================================================================
# TIME STEPPING
# ================================================================

class Evolver:
    """Integrating-factor RK4 for h_t = h_xx - d/dx [Phi_c(f + h) - Phi_c(f)]."""

    def __init__(self, profile: WaveProfile, grid: SpectralGrid, dt: float,
                 project_defect: bool = True):
        if not dt > 0:
            raise EvolveError(f"Time step must be positive, got {dt}")
        self.grid = grid
        self.dt = dt
        self.project_defect = project_defect
        wave = profile if np.array_equal(profile.x, grid.x) else profile.resample(grid.x)
        self.wave = wave
        flux = wave.problem.flux
        self.taylor = flux.taylor_coefficients(wave.f_values, start=1)

        k = grid.wavenumbers
        self.mask = grid.dealias_mask
        self.ik = 1j * k
        self.decay = np.exp(-k ** 2 * dt)
        self.half_decay = np.exp(-k ** 2 * dt / 2.0)

        self.forcing = None
        if not project_defect:
            # discrete defect of the sampled wave: (f')' - Phi_c'(f) f'
            fprime = wave.fprime_values
            defect = irfft(self.ik * rfft(fprime), n=grid.N) - flux.derivative(wave.f_values) * fprime
            self.forcing = rfft(defect) * self.mask
            logger.info(f"[Evolve] Wave defect kept as forcing, max {np.max(np.abs(defect)):.3e}")

    def rhs(self, modes: np.ndarray) -> np.ndarray:
        h = irfft(modes, n=self.grid.N)
        flux_increment = taylor_horner(self.taylor, h) * h
        out = -self.ik * rfft(flux_increment) * self.mask
        if self.forcing is not None:
            out = out + self.forcing
        return out

    def step(self, state: PerturbationState) -> PerturbationState:
        dt, E, E2 = self.dt, self.decay, self.half_decay
        v = state.modes
        a = self.rhs(v)
        b = self.rhs(E2 * (v + 0.5 * dt * a))
        c = self.rhs(E2 * v + 0.5 * dt * b)
        d = self.rhs(E * v + dt * E2 * c)
        new = (E * v + dt / 6.0 * (E * a + 2.0 * E2 * (b + c) + d)) * self.mask
        t = state.t + dt
        if not np.all(np.isfinite(new)):
            raise EvolutionBlowUpError(t)
        return PerturbationState(t=t, modes=new, grid=self.grid)

    def advance(self, state: PerturbationState, n_steps: int) -> PerturbationState:
        for _ in range(n_steps):
            state = self.step(state)
        return state


def step(state: PerturbationState, profile: WaveProfile, dt: float,
         evolver: Optional[Evolver] = None) -> PerturbationState:
    """One time step of the perturbation on the wave.

    Time loops should build one Evolver and pass it; without one, an Evolver is
    set up for this call alone.
    """
    if evolver is None:
        evolver = Evolver(profile, state.grid, dt)
    elif evolver.dt != dt or evolver.grid != state.grid:
        raise EvolveError(f"Evolver for dt={evolver.dt:g} on N={evolver.grid.N} cannot step "
                          f"dt={dt:g} on N={state.grid.N}")
    return evolver.step(state)


# ================================================================
# EVALUATION
# ================================================================

def sample_field(modes: np.ndarray, grid: SpectralGrid, points) -> np.ndarray:
    """Fourier series of the field at arbitrary (possibly complex) points."""
    points = np.atleast_1d(np.asarray(points, dtype=complex))
    retained = grid.dealias_mask.copy()
    retained[0] = False
    k = grid.wavenumbers[retained]
    coeffs = modes[retained]
    phase = np.outer(points + grid.L, k)
    value = modes[0] + np.exp(1j * phase) @ coeffs + np.exp(-1j * phase) @ np.conj(coeffs)
    return value / grid.N


def resolvability_cap(grid: SpectralGrid, floor: float = SPECTRAL_FLOOR) -> float:
    return float(np.log(1.0 / floor) / grid.k_cut)


def evaluate_complex(state: PerturbationState, z, delta: Optional[float] = None,
                     floor: float = SPECTRAL_FLOOR) -> complex:
    from .strip import estimate_delta

    z = complex(z)
    y = abs(z.imag)
    if y > 0:
        cap = resolvability_cap(state.grid, floor)
        if delta is None:
            k, amplitudes = spectrum_of(state)
            delta = estimate_delta(k, amplitudes, floor=floor, t=state.t).delta
        if y >= delta or y > cap:
            raise ComplexEvaluationRefused(y, delta, cap)
    return complex(sample_field(state.modes, state.grid, [z])[0])


def _potential_modes(state: PerturbationState) -> np.ndarray:
    k = state.grid.wavenumbers
    H_hat = np.zeros_like(state.modes)
    H_hat[1:] = state.modes[1:] / (1j * k[1:])
    return H_hat


def _check_mass(state: PerturbationState, scale: float, tol: float) -> None:
    if abs(state.mass) > tol * scale:
        raise MassLeakError(state.mass, scale)


def potential_of(state: PerturbationState, tol: float = 1e-10) -> np.ndarray:
    """H(x) = integral of h from -L, with H(-L) = 0."""
    H = irfft(_potential_modes(state), n=state.grid.N)
    H -= H[0]
    _check_mass(state, float(np.max(np.abs(H))), tol)
    return H


def potential_at(state: PerturbationState, x, tol: float = 1e-10) -> np.ndarray:
    """H at arbitrary real points by spectral interpolation."""
    grid = state.grid
    H_hat = _potential_modes(state)
    x = np.asarray(x, dtype=float)
    origin = sample_field(H_hat, grid, [-grid.L]).real[0]
    H = sample_field(H_hat, grid, x).real - origin
    _check_mass(state, float(np.max(np.abs(H))) if H.size else 0.0, tol)
    return H
