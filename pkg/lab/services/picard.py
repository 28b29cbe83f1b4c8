# lab/services/picard.py - DUHAMEL OPERATOR AND PICARD ITERATION FOR THE PERTURBATION
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .flux import PolynomialFlux, taylor_horner
from .linop import LinearOperatorModel, x_derivative
from .weights import WeightFunction

logger = logging.getLogger(__name__)

MAX_ITER = 50
TOLERANCE = 1e-10
SIGMA_MAX = 0.9
TAU_TOLERANCE = 1e-4
DIVERGENCE_STREAK = 3
# differences below this fraction of the iterate are roundoff
NOISE_LEVEL = 1e-13


class PicardError(Exception):
    """Base class for integral-equation failures."""
    pass


class TauResolutionError(PicardError):
    def __init__(self, estimate: float, tol: float):
        self.estimate = estimate
        self.tol = tol
        super().__init__(f"Time grid too coarse for the Duhamel integral: error estimate {estimate:.3e} > {tol:.1e}")


# ================================================================
# REMAINDER
# ================================================================

def remainder(flux: PolynomialFlux, f_wave, h):
    """R = Phi(f + h) - Phi(f) - Phi'(f) h as sum_{k>=2} Phi^(k)(f) h^k / k!."""
    h = np.asarray(h)
    coefficients = flux.taylor_coefficients(f_wave, start=2)
    return taylor_horner(coefficients, h) * h * h


def remainder_derivative(flux: PolynomialFlux, f_wave, h):
    """dR/dh = Phi'(f + h) - Phi'(f)."""
    h = np.asarray(h)
    coefficients = [c * k for k, c in enumerate(flux.taylor_coefficients(f_wave, start=2), start=2)]
    return taylor_horner(coefficients, h) * h


# ================================================================
# NORM
# ================================================================

@dataclass(frozen=True)
class WeightedSupNorm:
    """sup over time levels of (sum w h^2 dx)^(1/2)."""
    weight: np.ndarray
    dx: float

    @classmethod
    def for_model(cls, model: LinearOperatorModel, w: WeightFunction) -> "WeightedSupNorm":
        return cls(weight=np.exp(model.interior(w.log_values)), dx=model.dx)

    def per_level(self, h) -> np.ndarray:
        h = np.atleast_2d(np.asarray(h))
        return np.sqrt(np.sum(self.weight * np.abs(h) ** 2, axis=-1) * self.dx)

    def __call__(self, h) -> float:
        return float(np.max(self.per_level(h)))


# ================================================================
# DUHAMEL OPERATOR
# ================================================================

def _series(x: np.ndarray, term: Callable[[int], float], order: int = 14) -> np.ndarray:
    acc = np.full_like(x, term(order))
    for m in range(order - 1, -1, -1):
        acc = term(m) + (-x) * acc
    return acc


def product_weights(x) -> Tuple[np.ndarray, np.ndarray]:
    """Integrals of exp(-x v) against 1 - v and v over [0, 1].

    psi1 = (x - 1 + e^-x) / x^2 and psi2 = (1 - e^-x - x e^-x) / x^2, with
    Taylor forms near zero.
    """
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 0.5
    safe = np.where(small, 1.0, x)
    decay = np.exp(-safe)
    psi1 = (safe - 1.0 + decay) / safe ** 2
    psi2 = (1.0 - decay - safe * decay) / safe ** 2
    if np.any(small):
        xs = x[small]
        fact = np.cumprod(np.r_[1.0, np.arange(1, 17)])
        psi1[small] = _series(xs, lambda m: 1.0 / fact[m + 2])
        psi2[small] = _series(xs, lambda m: 1.0 / (fact[m] * (m + 2)))
    return psi1, psi2


class DuhamelOperator:
    """B(h)(t) = -d/dx integral_0^t w^-1 exp((t - tau) A) (w R(f, h(tau))) dtau.

    R is interpolated linearly in tau between grid levels and the exponential is
    integrated exactly against it, mode by mode.
    """

    def __init__(self, model: LinearOperatorModel, w: WeightFunction, t_grid: Sequence[float]):
        t_grid = np.asarray(t_grid, dtype=float)
        if t_grid.ndim != 1 or t_grid.size < 2:
            raise PicardError("Time grid needs at least two levels")
        steps = np.diff(t_grid)
        if t_grid[0] != 0.0 or np.any(steps <= 0):
            raise PicardError("Time grid must start at 0 and increase strictly")

        self.model = model
        self.weight = w
        self.t_grid = t_grid
        self.w = np.exp(model.interior(w.log_values))
        self.f_wave = model.interior(model.profile.f_values)
        self.flux = model.profile.problem.flux
        self.taylor = self.flux.taylor_coefficients(self.f_wave, start=2)

        lam = model.eigenvalues
        self.propagators = np.exp(np.outer(steps, lam))
        psi1, psi2 = product_weights(-np.outer(steps, lam))
        self.weight_old = steps[:, None] * psi2
        self.weight_new = steps[:, None] * psi1

    @property
    def shape(self) -> Tuple[int, int]:
        return self.t_grid.size, self.model.size

    def remainder(self, h: np.ndarray) -> np.ndarray:
        return taylor_horner(self.taylor, h) * h * h

    def __call__(self, h: np.ndarray) -> np.ndarray:
        h = np.asarray(h, dtype=float)
        if h.shape != self.shape:
            raise PicardError(f"Expected samples shaped {self.shape}, got {h.shape}")
        V = self.model.eigenvectors
        coeffs = (self.w * self.remainder(h)) @ V
        accumulated = np.zeros_like(coeffs)
        for n in range(1, self.t_grid.size):
            accumulated[n] = (self.propagators[n - 1] * accumulated[n - 1]
                              + self.weight_old[n - 1] * coeffs[n - 1]
                              + self.weight_new[n - 1] * coeffs[n])
        potential = (accumulated @ V.T) / self.w
        return -x_derivative(self.model, potential.T).T


def apply_B(h: np.ndarray, model: LinearOperatorModel, w: WeightFunction, t_grid) -> np.ndarray:
    return DuhamelOperator(model, w, t_grid)(h)


def tau_resolution_error(operator: DuhamelOperator, h: np.ndarray,
                         norm: Optional[Callable] = None) -> float:
    """Coarse-grid estimate of the tau-quadrature error, relative to the size of h.

    Halving the level count and comparing gives a second-order error estimate of
    |B_fine - B_coarse| / 3.
    """
    levels = operator.t_grid.size
    usable = levels if levels % 2 else levels - 1
    if usable < 3:
        raise PicardError("Resolution check needs at least three time levels")
    coarse = DuhamelOperator(operator.model, operator.weight, operator.t_grid[:usable:2])
    norm = norm or WeightedSupNorm.for_model(operator.model, operator.weight)
    fine = operator(h)[:usable:2]
    scale = norm(h)
    if scale == 0.0:
        return 0.0
    return float(norm(fine - coarse(h[:usable:2])) / 3.0 / scale)


def check_tau_resolution(operator: DuhamelOperator, h: np.ndarray, tol: float = TAU_TOLERANCE) -> float:
    estimate = tau_resolution_error(operator, h)
    if estimate > tol:
        raise TauResolutionError(estimate, tol)
    return estimate


def linear_term(H0, model: LinearOperatorModel, w: WeightFunction, t_grid) -> np.ndarray:
    """a(., t) = d/dx [w^-1 exp(t A) (w H0)] on the interior grid for every t in t_grid."""
    t_grid = np.asarray(t_grid, dtype=float)
    w_int = np.exp(model.interior(w.log_values))
    V = model.eigenvectors
    coeffs = (w_int * model.interior(H0)) @ V
    potential = ((coeffs * np.exp(np.outer(t_grid, model.eigenvalues))) @ V.T) / w_int
    return x_derivative(model, potential.T).T


# ================================================================
# PICARD ITERATION
# ================================================================

@dataclass
class FixedPointRun:
    a: np.ndarray
    iterates: List[np.ndarray]
    differences: List[float]
    ratios: List[float]
    converged: bool
    sigma_hat: float
    residual: float
    norms: List[float] = field(default_factory=list)
    a_norm: float = 0.0

    @property
    def solution(self) -> np.ndarray:
        return self.iterates[-1]

    @property
    def iterations(self) -> int:
        return len(self.iterates) - 1

    @property
    def ball_radius(self) -> float:
        """||a|| / (1 - sigma_hat), the ball holding every iterate."""
        return self.a_norm / (1.0 - self.sigma_hat) if self.sigma_hat < 1 else float("inf")

    def rows(self) -> List[Tuple[int, float, float]]:
        return [(n + 1, diff, ratio) for n, (diff, ratio) in enumerate(zip(self.differences, self.ratios))]


def _default_norm(v) -> float:
    return float(np.max(np.abs(v))) if np.size(v) else 0.0


def picard_solve(a, apply_B: Callable, max_iter: int = MAX_ITER, tol: float = TOLERANCE,
                 norm: Optional[Callable] = None) -> FixedPointRun:
    """h_{n+1} = a + B(h_n) from h_0 = a."""
    norm = norm or _default_norm
    a = np.asarray(a, dtype=float)
    a_norm = norm(a)
    if not np.isfinite(a_norm):
        raise PicardError("Initial term is not finite")

    iterates = [a]
    norms = [a_norm]
    differences, ratios = [], []
    previous = a_norm
    streak = 0
    converged = False
    first_norm = None

    for n in range(max_iter):
        current = a + apply_B(iterates[-1])
        diff = norm(current - iterates[-1])
        iterates.append(current)
        norms.append(norm(current))
        differences.append(diff)
        if not np.isfinite(diff):
            logger.warning(f"[Picard] Non-finite iterate at step {n + 1}")
            break
        if first_norm is None:
            first_norm = norms[-1]

        if previous > NOISE_LEVEL * max(norms[-2], 1e-300):
            ratio = diff / previous
            streak = streak + 1 if ratio > 1.0 else 0
        else:
            ratio = float("nan")
        ratios.append(ratio)
        previous = diff

        if diff <= tol * first_norm:
            converged = True
            break
        if streak >= DIVERGENCE_STREAK:
            logger.info(f"[Picard] Diverging after {n + 1} iterations (ratio {ratio:.3g})")
            break

    measured = [r for r in ratios if np.isfinite(r)]
    sigma_hat = float(max(measured)) if measured else 0.0
    solution = iterates[-1]
    scale = norm(solution)
    if converged and scale > 0:
        residual = norm(solution - a - apply_B(solution)) / scale
    elif converged:
        residual = 0.0
    else:
        residual = float("nan")

    logger.info(
        f"[Picard] {'Converged' if converged else 'Stopped'} after {len(iterates) - 1} iterations, "
        f"sigma_hat={sigma_hat:.4g}, residual={residual:.3e}"
    )
    return FixedPointRun(a=a, iterates=iterates, differences=differences, ratios=ratios,
                         converged=converged, sigma_hat=sigma_hat, residual=residual,
                         norms=norms, a_norm=a_norm)


# ================================================================
# WAITING TIME
# ================================================================

@dataclass
class TstarEstimate:
    t_star: Optional[float]
    sigma_hat: Optional[float]
    attempts: Dict[float, Tuple[bool, float]]
    E_H_at_Tstar: Optional[float] = None
    E_H_initial: Optional[float] = None

    @property
    def found(self) -> bool:
        return self.t_star is not None


def estimate_Tstar(trial_times: Sequence[float], attempt: Callable[[float], FixedPointRun],
                   sigma_max: float = SIGMA_MAX,
                   energies: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> TstarEstimate:
    """Earliest trial time from which the Picard scheme contracts with sigma_hat <= sigma_max.

    attempt(T) launches picard_solve from the evolved state at T; success is
    assumed monotone in T and the trial times are bisected.
    energies, when given, is (t, E_H) and is sampled at T*.
    """
    times = sorted(float(t) for t in trial_times)
    if not times:
        raise PicardError("No trial times given")
    attempts: Dict[float, Tuple[bool, float]] = {}

    def succeeds(i: int) -> bool:
        T = times[i]
        if T not in attempts:
            run = attempt(T)
            ok = bool(run.converged and run.sigma_hat <= sigma_max)
            attempts[T] = (ok, run.sigma_hat)
            logger.info(f"[Picard] Trial T={T:g}: converged={run.converged} sigma_hat={run.sigma_hat:.4g}")
        return attempts[T][0]

    if succeeds(0):
        found = 0
    elif not succeeds(len(times) - 1):
        logger.warning(f"[Picard] No trial time up to {times[-1]:g} satisfies the smallness condition")
        return TstarEstimate(t_star=None, sigma_hat=None, attempts=attempts)
    else:
        lo, hi = 0, len(times) - 1
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if succeeds(mid):
                hi = mid
            else:
                lo = mid
        found = hi

    t_star = times[found]
    estimate = TstarEstimate(t_star=t_star, sigma_hat=attempts[t_star][1], attempts=attempts)
    if energies is not None:
        t, E_H = (np.asarray(v, dtype=float) for v in energies)
        estimate.E_H_at_Tstar = float(np.interp(t_star, t, E_H))
        estimate.E_H_initial = float(E_H[0])
    logger.info(f"[Picard] T* = {t_star:g}")
    return estimate
