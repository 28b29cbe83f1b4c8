# lab/services/weights.py - WEIGHT FUNCTION, WEIGHTED ENERGIES AND HARDY NORMS
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np
from django.conf import settings
from scipy.integrate import trapezoid

from .wave import SingularityProximityError, WaveProfile

logger = logging.getLogger(__name__)


class WeightError(Exception):
    """Raised for malformed weight, energy or Hardy-norm requests."""
    pass


# ================================================================
# WEIGHT FUNCTION  w = exp(-1/2 integral_0 Phi_c'(f)),  w(0) = 1
# ================================================================

@dataclass
class WeightFunction:
    profile: WaveProfile
    log_values: np.ndarray
    _line_cache: dict = field(default_factory=dict, repr=False)

    @property
    def x(self) -> np.ndarray:
        return self.profile.x

    @property
    def values(self) -> np.ndarray:
        return np.exp(self.log_values)

    @property
    def y0(self) -> float:
        return self.profile.lattice.y0

    @property
    def origin_index(self) -> int:
        idx = self.profile.nearest_index(0.0)
        if self.x[idx] != 0.0:
            raise WeightError("Weight grid does not contain x = 0")
        return idx

    def log_at(self, z) -> np.ndarray:
        _, psi = self.profile.continue_to(z)
        return -0.5 * psi

    def on_imaginary_axis(self, ys) -> np.ndarray:
        """w(iy) for real y, using w(-iy) = conj w(iy)."""
        ys = np.asarray(ys, dtype=float)
        _, psi = self.profile.continue_vertical(np.abs(ys), indices=[self.origin_index])
        values = np.exp(-0.5 * psi[:, 0])
        return np.where(ys < 0, np.conj(values), values)

    def modulus_on_lines(self, ys) -> np.ndarray:
        """|w(xi + iy)| on the grid for each y >= 0, shaped (len(ys), len(x))."""
        key = tuple(np.round(np.asarray(ys, dtype=float), 15))
        if key not in self._line_cache:
            _, psi = self.profile.continue_vertical(np.asarray(ys, dtype=float))
            self._line_cache[key] = np.exp(-0.5 * psi.real)
        return self._line_cache[key]

    def resample(self, x) -> "WeightFunction":
        return build_weight(self.profile.resample(x))


def build_weight(profile: WaveProfile) -> WeightFunction:
    # w = (f'(0) / f')^(1/2) on the real axis
    log_values = -0.5 * (profile.log_fprime - np.log(profile.fprime_at_anchor))
    return WeightFunction(profile=profile, log_values=log_values)


def weight_at(w: WeightFunction, z, margin: Optional[float] = None) -> Union[float, complex]:
    z = complex(z)
    lattice = w.profile.lattice
    margin = settings.LAB['SINGULARITY_MARGIN'] * lattice.y0 if margin is None else margin
    distance = lattice.distance_to(z)
    if abs(z.imag) >= lattice.y0 or distance < margin:
        raise SingularityProximityError(z, distance, margin)
    value = complex(np.exp(w.log_at([z])[0]))
    return value.real if z.imag == 0 else value


# ================================================================
# WEIGHTED ENERGY
# ================================================================

@dataclass(frozen=True)
class WeightedEnergy:
    value: float
    tail_warning: bool = False

    def __float__(self):
        return self.value


TAIL_TOLERANCE = 1e-10


def weighted_energy(w: Union[WeightFunction, np.ndarray], g, x: Optional[np.ndarray] = None) -> WeightedEnergy:
    """Trapezoidal integral of w^2 g^2 over the grid."""
    if isinstance(w, WeightFunction):
        log_w, x = w.log_values, w.x
    else:
        log_w = np.log(np.asarray(w, dtype=float))
        if x is None:
            raise WeightError("Grid required when the weight is passed as samples")
    g = np.asarray(g, dtype=float)
    if g.shape != log_w.shape:
        raise WeightError(f"Samples of shape {g.shape} do not match weight grid {log_w.shape}")

    density = np.exp(2.0 * log_w) * g * g
    value = float(trapezoid(density, x))
    peak = float(np.max(density)) if density.size else 0.0
    tail = max(density[0], density[-1]) if density.size else 0.0
    tail_warning = bool(peak > 0 and tail > TAIL_TOLERANCE * peak)
    if tail_warning:
        logger.warning(f"[Weights] Energy tail {tail:.3e} exceeds {TAIL_TOLERANCE:g} of peak {peak:.3e}")
    return WeightedEnergy(value=value, tail_warning=tail_warning)


# ================================================================
# HARDY NORMS ON THE STRIP
# ================================================================

def hardy_exponents(n: int) -> Tuple[float, float]:
    """(a_n, b_n) for flux degree n."""
    if n < 2:
        raise WeightError(f"Flux degree must be at least 2, got {n}")
    return 2.0 / n - 2.5, (n - 2.0) / (n - 1.0)


@dataclass
class HardyNormParams:
    a: float
    b: float
    c_strip: float
    weight: WeightFunction
    n_lines: int = field(default_factory=lambda: settings.LAB['HARDY_LINES'])
    lines: Optional[Sequence[float]] = None

    def __post_init__(self):
        if not 0 < self.c_strip < self.weight.y0:
            raise WeightError(f"Strip half-width {self.c_strip} must lie in (0, y0={self.weight.y0:.6g})")

    @classmethod
    def for_degree(cls, weight: WeightFunction, c_strip: float, n_lines: Optional[int] = None) -> "HardyNormParams":
        a, b = hardy_exponents(weight.profile.problem.flux.degree)
        n_lines = settings.LAB['HARDY_LINES'] if n_lines is None else n_lines
        return cls(a=a, b=b, c_strip=c_strip, weight=weight, n_lines=n_lines)

    def ladder(self) -> np.ndarray:
        if self.lines is not None:
            ys = np.asarray(self.lines, dtype=float)
        else:
            ys = self.c_strip * np.arange(self.n_lines) / max(self.n_lines, 1)
        if ys.size == 0:
            raise WeightError("Hardy norm needs at least one line")
        if np.any(ys < 0) or np.any(ys >= self.c_strip):
            raise WeightError("Hardy norm lines must lie in [0, c_strip)")
        return ys


def _line_samples(u, x: np.ndarray, ys: np.ndarray) -> np.ndarray:
    if callable(u):
        return np.asarray(u(x[None, :] + 1j * ys[:, None]))
    values = np.asarray(u)
    if values.shape != (len(ys), len(x)):
        raise WeightError(f"Line samples of shape {values.shape}, expected {(len(ys), len(x))}")
    return values


def hardy_norm(params: HardyNormParams, u: Union[Callable, np.ndarray]) -> float:
    """sup_y |w(iy)|^a (c - y)^(-b/2) (integral |w(xi + iy)| |u(xi + iy)|^2 dxi)^(1/2)."""
    ys = params.ladder()
    weight = params.weight
    modulus = weight.modulus_on_lines(ys)
    values = _line_samples(u, weight.x, ys)

    integrals = trapezoid(modulus * np.abs(values) ** 2, weight.x, axis=1)
    w_axis = modulus[:, weight.origin_index]
    factors = w_axis ** params.a * (params.c_strip - ys) ** (-params.b / 2.0)
    return float(np.max(factors * np.sqrt(integrals)))


def check_evaluation_lemma(params: HardyNormParams, u: Callable, samples) -> float:
    samples = np.atleast_1d(np.asarray(samples, dtype=complex))
    y = np.abs(samples.imag)
    if np.any(y >= params.c_strip):
        raise WeightError("Evaluation samples must lie inside the strip")

    norm = hardy_norm(params, u)
    w_axis = np.abs(params.weight.on_imaginary_axis(y))
    scaled = (np.abs(np.asarray(u(samples)))
              * w_axis ** (0.5 + params.a)
              * (params.c_strip - y) ** ((1.0 - params.b) / 2.0))
    if norm == 0.0:
        if np.any(scaled > 0):
            raise WeightError("Hardy norm vanishes while the function does not")
        return 0.0
    return float(np.max(scaled) / norm)


def strip_profile(y, t, M: float):
    """m(y, t) = sgn(y) min(|y|, M sqrt(t))."""
    y = np.asarray(y, dtype=float)
    return np.sign(y) * np.minimum(np.abs(y), M * np.sqrt(t))


def time_dependent_hardy_norm(params: HardyNormParams, u: Callable, t_grid, M: float) -> float:
    """sup over t > 0 of the Hardy norm of u(., t) on the strip of half-width min(c, M sqrt(t))."""
    best = 0.0
    for t in np.asarray(t_grid, dtype=float):
        c_t = float(strip_profile(params.c_strip, t, M))
        if c_t <= 0.0:
            continue
        params_t = HardyNormParams(a=params.a, b=params.b, c_strip=c_t,
                                   weight=params.weight, n_lines=params.n_lines)
        best = max(best, hardy_norm(params_t, lambda z: u(z, t)))
    return best


# ================================================================
# BOUNDED QUANTITIES ALONG THE IMAGINARY AXIS
# ================================================================

@dataclass(frozen=True)
class BoundedQuantities:
    ys: np.ndarray
    wave_power: np.ndarray
    flux_root: np.ndarray

    @property
    def max_wave_power(self) -> float:
        return float(np.max(self.wave_power))

    @property
    def max_flux_root(self) -> float:
        return float(np.max(self.flux_root))


def bounded_quantities(w: WeightFunction, fraction: float = 0.99, n_samples: int = 1000) -> BoundedQuantities:
    """|w(iy)| |f(iy)|^(n/2) and |w(iy)| |Phi_c(f(iy))|^(1/2) for 0 <= y <= fraction * y0."""
    profile = w.profile
    ys = np.linspace(0.0, fraction * w.y0, n_samples)
    F, psi = profile.continue_vertical(ys, indices=[w.origin_index])
    F, psi = F[:, 0], psi[:, 0]
    w_mod = np.exp(-0.5 * psi.real)
    n = profile.problem.flux.degree
    return BoundedQuantities(
        ys=ys,
        wave_power=w_mod * np.abs(F) ** (n / 2.0),
        flux_root=w_mod * np.abs(profile.problem.flux(F)) ** 0.5,
    )
