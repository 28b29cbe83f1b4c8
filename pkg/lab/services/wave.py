# lab/services/wave.py - TRAVELING WAVE PROFILE AND COMPLEX SINGULARITY LATTICE
import hashlib
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Tuple

import numpy as np
from django.conf import settings
from django.core.cache import caches
from numpy.polynomial import polynomial as P
from scipy import integrate, stats

from .flux import ShockProblem

logger = logging.getLogger(__name__)


class WaveError(Exception):
    """Base class for traveling-wave failures."""
    pass


class EndpointGapError(WaveError):
    def __init__(self, gap: float, L: float, relaxation_length: float):
        self.gap = gap
        self.L = L
        self.relaxation_length = relaxation_length
        super().__init__(
            f"Profile misses the end states at |x| = {L:g}: gap {gap:.3e} "
            f"(relaxation length {relaxation_length:.4g})"
        )


class UnsupportedRootError(WaveError):
    def __init__(self, root: complex):
        self.root = root
        super().__init__(f"Repeated root of the wave balance at F = {root:.10g}")


class ContourQuadratureError(WaveError):
    def __init__(self, message: str, diagnostics: dict):
        self.diagnostics = diagnostics
        super().__init__(f"{message}: {diagnostics}")


class SingularityProximityError(WaveError):
    def __init__(self, z: complex, distance: float, margin: float):
        self.z = z
        self.distance = distance
        self.margin = margin
        super().__init__(
            f"z = {z:.6g} is too close to the singularity lattice "
            f"(distance {distance:.3e}, margin {margin:.3e})"
        )


class BranchFitError(WaveError):
    def __init__(self, correlation: float):
        self.correlation = correlation
        super().__init__(f"Branch exponent fit correlation {correlation:.6f} below 0.999")


# ================================================================
# WAVE BALANCE  f' = P(f) = Phi_c(f) - Phi_c(alpha_plus)
# ================================================================

class WaveBalance:
    """Right-hand side of the profile equation and its partial fractions.

    Roots are ordered alpha_minus, alpha_plus, then the remaining roots;
    residues are those of 1/P.
    """
    ROOT_SEPARATION_TOL = 1e-7
    REAL_ROOT_TOL = 1e-10
    MAX_NEWTON = 100

    def __init__(self, problem: ShockProblem):
        if not problem.normalized:
            raise WaveError("Profile equation needs a normalized problem")
        self.problem = problem
        self.alpha_minus = problem.alpha_minus
        self.alpha_plus = problem.alpha_plus

        level = float(problem.flux(self.alpha_plus))
        other = float(problem.flux(self.alpha_minus))
        if abs(level - other) > 1e-12 * (abs(level) + 1.0):
            raise WaveError(f"End states are not balanced: {level!r} vs {other!r}")

        self.coeffs = problem.flux.array.copy()
        self.coeffs[0] -= level
        self.slope_coeffs = P.polyder(self.coeffs)
        self.leading = float(self.coeffs[-1])
        self.degree = problem.flux.degree
        self.roots = self._find_roots()
        self.residues = 1.0 / P.polyval(self.roots, self.slope_coeffs)

    def _find_roots(self) -> np.ndarray:
        known = np.array([self.alpha_minus, self.alpha_plus])
        quotient, _ = P.polydiv(self.coeffs, P.polyfromroots(known))
        others = P.polyroots(quotient) if len(quotient) > 1 else np.array([])
        others = np.asarray(others, dtype=complex)
        is_real = np.abs(others.imag) <= self.REAL_ROOT_TOL * (1.0 + np.abs(others))
        others = np.where(is_real, others.real + 0j, others)

        roots = np.concatenate([known.astype(complex), others])
        for i in range(len(roots)):
            for j in range(i + 1, len(roots)):
                if abs(roots[i] - roots[j]) < self.ROOT_SEPARATION_TOL * (1.0 + abs(roots[i])):
                    raise UnsupportedRootError(complex(roots[j]))
        return roots

    def __call__(self, F):
        return P.polyval(F, self.coeffs)

    def slope(self, F):
        """P'(F) = Phi_c'(F)."""
        return P.polyval(F, self.slope_coeffs)

    @property
    def residue_sum(self) -> complex:
        return complex(np.sum(self.residues))

    @property
    def min_root_separation(self) -> float:
        roots = self.roots
        return float(min(abs(a - b) for i, a in enumerate(roots) for b in roots[i + 1:]))

    @property
    def relaxation_length(self) -> float:
        return 1.0 / min(abs(self.slope(self.alpha_minus)), abs(self.slope(self.alpha_plus)))

    # ----------------------------------------------------------------
    # separable coordinate x(F) = integral of dF / P(F), x(anchor) = 0
    # ----------------------------------------------------------------
    def coordinate(self, F, anchor: float):
        F = np.asarray(F, dtype=float)
        total = np.zeros(F.shape, dtype=complex)
        for root, residue in zip(self.roots, self.residues):
            total += residue * np.log((F - root) / (anchor - root))
        return total.real

    def _side(self, side: int) -> Tuple[int, int, float]:
        # (index of the end state, index of the opposite one, direction from the end into the interval)
        return (1, 0, -1.0) if side > 0 else (0, 1, 1.0)

    def _product_without(self, F, skip: int):
        prod = self.leading * np.ones_like(F, dtype=complex)
        for idx, root in enumerate(self.roots):
            if idx != skip:
                prod = prod * (F - root)
        return prod

    def _gap_coordinate(self, s, side: int, anchor: float):
        end_idx, _, sigma = self._side(side)
        end = self.roots[end_idx].real
        F = end + sigma * np.exp(s)
        x = self.residues[end_idx].real * (s - np.log(abs(anchor - end)))
        for idx, (root, residue) in enumerate(zip(self.roots, self.residues)):
            if idx != end_idx:
                x = x + (residue * np.log((F - root) / (anchor - root))).real
        return x

    def _gap_slope(self, s, side: int):
        end_idx, _, sigma = self._side(side)
        F = self.roots[end_idx].real + sigma * np.exp(s)
        return 1.0 / self._product_without(F, end_idx).real

    def _gap_balance(self, s, side: int):
        end_idx, _, sigma = self._side(side)
        F = self.roots[end_idx].real + sigma * np.exp(s)
        return sigma * np.exp(s) * self._product_without(F, end_idx).real

    def _solve_gap_variable(self, targets: np.ndarray, side: int, anchor: float) -> np.ndarray:
        """Find s = ln(gap) with x(s) = target, one side of the anchor at a time."""
        end_idx, _, _ = self._side(side)
        end = self.roots[end_idx].real
        residue = self.residues[end_idx].real
        orient = -1.0 if side > 0 else 1.0
        s_top = np.log(abs(anchor - end))

        def g(s):
            return orient * (self._gap_coordinate(s, side, anchor) - targets)

        hi = np.full_like(targets, s_top)
        guess = np.minimum(s_top + targets / residue, s_top)
        lo = guess - 1.0
        for _ in range(200):
            outside = g(lo) >= 0
            if not outside.any():
                break
            lo[outside] -= s_top - lo[outside]

        s = np.clip(guess, lo, hi)
        for _ in range(self.MAX_NEWTON):
            gs = g(s)
            lo = np.where(gs < 0, s, lo)
            hi = np.where(gs >= 0, s, hi)
            s_new = s - gs / (orient * self._gap_slope(s, side))
            bad = ~np.isfinite(s_new) | (s_new < lo) | (s_new > hi)
            s_new = np.where(bad, 0.5 * (lo + hi), s_new)
            done = np.max(np.abs(s_new - s) / np.maximum(1.0, np.abs(s))) <= 1e-15
            s = s_new
            if done:
                break
        return s

    def profile_values(self, x, anchor: float):
        """f, distance to the nearer end state, and f' at the points x."""
        x = np.asarray(x, dtype=float)
        f_values = np.empty_like(x)
        gaps = np.empty_like(x)
        fprime = np.empty_like(x)
        for side, mask in ((1, x >= 0), (-1, x < 0)):
            if not mask.any():
                continue
            s = self._solve_gap_variable(x[mask], side, anchor)
            end_idx, _, sigma = self._side(side)
            gap = np.exp(s)
            f_values[mask] = self.roots[end_idx].real + sigma * gap
            gaps[mask] = gap
            fprime[mask] = self._gap_balance(s, side)
        return f_values, gaps, fprime


# ================================================================
# SINGULARITY LATTICE
# ================================================================

@dataclass(frozen=True)
class LatticeLine:
    base_point: complex
    spacing: complex
    residue: complex
    root: complex


@dataclass(frozen=True)
class SingularityLattice:
    lines: Tuple[LatticeLine, ...]
    branch_order: int
    y0: float
    anchor: float
    length_scale: float = 1.0
    quadrature_error: float = 0.0

    @property
    def y0_physical(self) -> float:
        return self.length_scale * self.y0

    @property
    def nearest(self) -> complex:
        """Nearest singularity in the upper half plane."""
        base = self.lines[0].base_point
        return complex(base.real, abs(base.imag))

    def points(self, depth: int = 8) -> np.ndarray:
        pts = [line.base_point + m * line.spacing
               for line in self.lines for m in range(depth + 1)]
        pts = np.asarray(pts, dtype=complex)
        return np.concatenate([pts, np.conj(pts)])

    def distance_to(self, z, depth: int = 8) -> float:
        return float(np.min(np.abs(self.points(depth) - complex(z))))


def _ray_log_increment(start: float, root: complex) -> complex:
    """Change of log(F - root) along the vertical ray start -> start + i*inf, minus log(i*inf)."""
    v0 = start - root
    phi0 = np.angle(v0)
    if v0.real < 0 and v0.imag < 0:
        phi0 += 2.0 * np.pi
    return -np.log(abs(v0)) + 1j * (np.pi / 2 - phi0)


def _base_point(balance: WaveBalance, anchor: float) -> Tuple[complex, dict]:
    """Integral of dF/P(F) from the anchor to infinity in the upper half plane."""
    # detour sideways if a root sits over the ray
    rounding = 0.1 * balance.min_root_separation
    shift = 0.0
    for root in balance.roots:
        if root.imag > 0 and abs(root.real - anchor) < rounding:
            shift = rounding if root.real <= anchor else -rounding

    start = anchor + shift
    closed = sum(
        residue * _ray_log_increment(start, root)
        for root, residue in zip(balance.roots, balance.residues)
    )
    if shift:
        closed += sum(
            residue * np.log((start - root) / (anchor - root))
            for root, residue in zip(balance.roots, balance.residues)
        )

    def leg(s):
        return 1j / balance(start + 1j * s)

    opts = dict(limit=400, epsabs=1e-12, epsrel=1e-10)
    re, re_err = integrate.quad(lambda s: leg(s).real, 0.0, np.inf, **opts)
    im, im_err = integrate.quad(lambda s: leg(s).imag, 0.0, np.inf, **opts)
    quad_value = complex(re, im)
    if shift:
        hre, _ = integrate.quad(lambda u: 1.0 / balance(u), anchor, start, **opts)
        quad_value += hre

    diagnostics = {
        "anchor": anchor,
        "shift": shift,
        "quadrature": quad_value,
        "closed_form": complex(closed),
        "quad_error_estimate": re_err + im_err,
    }
    mismatch = abs(quad_value - closed)
    if not np.isfinite(mismatch) or mismatch > 1e-8 * (1.0 + abs(closed)):
        raise ContourQuadratureError("Contour quadrature disagrees with the residue sum", diagnostics)
    diagnostics["mismatch"] = mismatch
    return complex(closed), diagnostics


def locate_singularities(problem: ShockProblem, anchor: Optional[float] = None) -> SingularityLattice:
    """Singularities of the wave as lines z_inf + m * 2 pi i res_j, m >= 0, one per root of P.

    All lines start from z_inf, the value of x(F) = integral dF/P(F) as F -> inf
    in the upper half plane. A contour deformed to wind once around the root r_j
    gains exactly 2 pi i res_j, so the base point of line j computed on such a
    contour is z_inf plus one step of that line and coincides with it modulo the
    lattice.
    """
    balance = WaveBalance(problem)
    anchor = problem.midpoint if anchor is None else float(anchor)
    if not problem.alpha_minus < anchor < problem.alpha_plus:
        raise WaveError(f"Anchor {anchor} outside ({problem.alpha_minus}, {problem.alpha_plus})")

    base, diagnostics = _base_point(balance, anchor)
    if abs(base.imag) == 0.0:
        raise ContourQuadratureError("Base point lies on the real axis", diagnostics)

    outward = np.sign(base.imag)
    lines = []
    for root, residue in zip(balance.roots, balance.residues):
        spacing = 2j * np.pi * residue
        if spacing.imag * outward < 0:
            spacing = -spacing
        lines.append(LatticeLine(base_point=base, spacing=complex(spacing),
                                 residue=complex(residue), root=complex(root)))

    lattice = SingularityLattice(
        lines=tuple(lines),
        branch_order=balance.degree - 1,
        y0=abs(base.imag),
        anchor=anchor,
        length_scale=problem.length_scale,
        quadrature_error=diagnostics["mismatch"],
    )
    logger.info(f"[Wave] Singularity lattice: z0={base:.8g}, y0={lattice.y0:.10g}, {len(lines)} lines")
    return lattice


# ================================================================
# PROFILE
# ================================================================

@dataclass
class WaveProfile:
    problem: ShockProblem
    x: np.ndarray
    f_values: np.ndarray
    fprime_values: np.ndarray
    gaps: np.ndarray
    anchor: float
    balance: WaveBalance = field(repr=False)

    @property
    def dx(self) -> float:
        return float(self.x[1] - self.x[0])

    @property
    def fprime_at_anchor(self) -> float:
        return float(self.balance(self.anchor))

    @property
    def log_fprime(self) -> np.ndarray:
        return np.log(self.fprime_values)

    @cached_property
    def lattice(self) -> SingularityLattice:
        return locate_singularities(self.problem, self.anchor)

    def resample(self, x) -> "WaveProfile":
        return sample_profile(self.problem, x, self.anchor, balance=self.balance)

    def ode_residual(self) -> np.ndarray:
        return np.abs(self.fprime_values - self.balance(self.f_values))

    def check_invariants(self) -> None:
        residual = float(np.max(self.ode_residual()))
        if residual >= 1e-8:
            raise WaveError(f"Profile ODE residual {residual:.3e}")
        if np.any(self.gaps <= 0) or np.any(self.fprime_values <= 0):
            raise WaveError("Profile leaves the open interval between the end states")
        # strict increase wherever the spacing is representable in double precision
        steps = np.diff(self.f_values)
        resolvable = np.minimum(self.gaps[:-1], self.gaps[1:]) > 1e-12
        if np.any(steps[resolvable] <= 0) or np.any(steps < 0):
            raise WaveError("Profile is not monotone increasing")

    def nearest_index(self, x: float) -> int:
        return int(np.clip(np.rint((x - self.x[0]) / self.dx), 0, len(self.x) - 1))

    # ----------------------------------------------------------------
    # complex continuation
    # ----------------------------------------------------------------
    def continue_to(self, z) -> Tuple[np.ndarray, np.ndarray]:
        """f and psi = integral_0^z Phi_c'(f) along straight segments from real grid points."""
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        idx = np.array([self.nearest_index(v.real) for v in z])
        starts = self.x[idx].astype(complex)
        F0 = self.f_values[idx].astype(complex)
        psi0 = (self.log_fprime[idx] - np.log(self.fprime_at_anchor)).astype(complex)
        return integrate_segments(self.balance, starts, F0, psi0, z)

    def continue_vertical(self, ys, indices=None) -> Tuple[np.ndarray, np.ndarray]:
        """f and psi on the vertical lines x_j + i*y for y >= 0, shaped (len(ys), len(indices))."""
        ys = np.asarray(ys, dtype=float)
        if np.any(ys < 0):
            raise WaveError("Vertical continuation takes non-negative heights")
        indices = np.arange(len(self.x)) if indices is None else np.asarray(indices)
        m = len(indices)
        F0 = self.f_values[indices].astype(complex)
        psi0 = (self.log_fprime[indices] - np.log(self.fprime_at_anchor)).astype(complex)
        heights, inverse = np.unique(ys, return_inverse=True)
        if heights[-1] == 0.0:
            return np.tile(F0, (len(ys), 1)), np.tile(psi0, (len(ys), 1))

        balance = self.balance

        def rhs(_, state):
            F = state[:m]
            return np.concatenate([1j * balance(F), 1j * balance.slope(F)])

        sol = integrate.solve_ivp(
            rhs, (0.0, float(heights[-1])), np.concatenate([F0, psi0]),
            method="DOP853", t_eval=heights, rtol=1e-11, atol=1e-13,
        )
        if not sol.success:
            raise WaveError(f"Vertical continuation failed: {sol.message}")
        inverse = inverse.reshape(-1)
        return sol.y[:m].T[inverse], sol.y[m:].T[inverse]


def integrate_segments(balance: WaveBalance, starts, F0, psi0, ends,
                       rtol: float = 1e-12, atol: float = 1e-14):
    """Integrate f' = P(f), psi' = P'(f) along the straight segments starts -> ends."""
    starts = np.asarray(starts, dtype=complex)
    ends = np.asarray(ends, dtype=complex)
    dz = ends - starts
    m = len(dz)
    if np.all(dz == 0):
        return np.asarray(F0, dtype=complex).copy(), np.asarray(psi0, dtype=complex).copy()

    def rhs(_, state):
        F = state[:m]
        return np.concatenate([dz * balance(F), dz * balance.slope(F)])

    sol = integrate.solve_ivp(
        rhs, (0.0, 1.0), np.concatenate([F0, psi0]).astype(complex),
        method="DOP853", rtol=rtol, atol=atol,
    )
    if not sol.success:
        raise WaveError(f"Complex continuation failed: {sol.message}")
    return sol.y[:m, -1], sol.y[m:, -1]


def sample_profile(problem: ShockProblem, x, anchor: Optional[float] = None,
                   balance: Optional[WaveBalance] = None) -> WaveProfile:
    balance = balance or WaveBalance(problem)
    anchor = problem.midpoint if anchor is None else float(anchor)
    if not problem.alpha_minus < anchor < problem.alpha_plus:
        raise WaveError(f"Anchor {anchor} outside ({problem.alpha_minus}, {problem.alpha_plus})")
    x = np.asarray(x, dtype=float)
    f_values, gaps, fprime = balance.profile_values(x, anchor)
    return WaveProfile(problem=problem, x=x, f_values=f_values, fprime_values=fprime,
                       gaps=gaps, anchor=anchor, balance=balance)


def solve_profile(problem: ShockProblem, L: float, dx: float,
                  anchor: Optional[float] = None) -> WaveProfile:
    if not problem.normalized:
        raise WaveError("solve_profile needs a normalized problem")
    n = int(round(2.0 * L / dx))
    if n < 2 or abs(n * dx - 2.0 * L) > 1e-9 * L:
        raise WaveError(f"Grid spacing {dx} does not divide [-{L}, {L}]")
    step = 2.0 * L / n
    x = step * (np.arange(n + 1) - n // 2)

    profile = sample_profile(problem, x, anchor)
    gap = float(max(profile.gaps[0], profile.gaps[-1]))
    if gap >= 1e-8:
        raise EndpointGapError(gap, L, profile.balance.relaxation_length)
    profile.check_invariants()
    logger.debug(f"[Wave] Profile on [-{L:g}, {L:g}] with {n + 1} points, endpoint gap {gap:.2e}")
    return profile


def get_profile(problem: ShockProblem, L: float, dx: float,
                anchor: Optional[float] = None) -> WaveProfile:
    """solve_profile memoized in the numerics cache."""
    key = "profile:" + hashlib.md5(repr((problem, L, dx, anchor)).encode()).hexdigest()
    cache = caches["numerics"]
    cached = cache.get(key)
    if cached is not None:
        logger.info(f"[Cache HIT] Wave profile L={L:g} dx={dx:g}")
        return cached
    profile = solve_profile(problem, L, dx, anchor)
    cache.set(key, profile, timeout=settings.LAB['PROFILE_CACHE_TIMEOUT'])
    return profile


def continue_profile(profile: WaveProfile, z: complex, margin: Optional[float] = None) -> complex:
    lattice = profile.lattice
    margin = settings.LAB['SINGULARITY_MARGIN'] * lattice.y0 if margin is None else margin
    z = complex(z)
    distance = lattice.distance_to(z)
    if abs(z.imag) >= lattice.y0 - margin or distance < margin:
        raise SingularityProximityError(z, distance, margin)
    F, _ = profile.continue_to([z])
    return complex(F[0])


# ================================================================
# BRANCH ORDER
# ================================================================

def fit_branch_exponent(func: Callable, z0: complex, y0: float, theta: float = -np.pi / 2,
                        n_radii: int = 40, lo: float = 1e-4, hi: float = 1e-1) -> float:
    """Slope of log|func| against log distance along a ray into z0."""
    radii = y0 * np.logspace(np.log10(lo), np.log10(hi), n_radii)
    points = z0 + radii * np.exp(1j * theta)
    values = np.asarray(func(points))
    fit = stats.linregress(np.log(radii), np.log(np.abs(values)))
    if abs(fit.rvalue) < 0.999:
        raise BranchFitError(float(fit.rvalue))
    return float(fit.slope)


def fit_branch_order(profile: WaveProfile, lattice: Optional[SingularityLattice] = None) -> float:
    lattice = lattice or profile.lattice
    z0 = lattice.nearest

    def along_ray(points):
        # points sit on a vertical ray below z0: reach the farthest, then climb
        heights = points.imag
        far = points[np.argmin(heights)]
        F_far, _ = profile.continue_to([far])
        balance = profile.balance

        order = np.argsort(heights)
        sol = integrate.solve_ivp(
            lambda _, F: 1j * balance(F), (float(heights[order[0]]), float(heights[order[-1]])),
            F_far.astype(complex), method="DOP853", t_eval=heights[order], rtol=1e-11, atol=1e-13,
        )
        if not sol.success:
            raise WaveError(f"Continuation toward the singularity failed: {sol.message}")
        values = np.empty(len(points), dtype=complex)
        values[order] = sol.y[0]
        return values

    exponent = fit_branch_exponent(along_ray, z0, lattice.y0)
    logger.info(f"[Wave] Branch exponent {exponent:.4f} (expected {-1.0 / lattice.branch_order:.4f})")
    return exponent
