# lab/services/strip.py - ANALYTICITY-STRIP ESTIMATES AND THE GROWTH-LAW VERDICT
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .evolve import SPECTRAL_FLOOR

logger = logging.getLogger(__name__)

SKIP_MODES = 4
MIN_MODES = 8
TAIL_FRACTION = 0.5
TRANSIENT_FRACTION = 0.8
MONOTONE_TOLERANCE = 1e-3
SATURATION_FRACTION = 0.95
SLOPE_RANGE = (0.4, 0.6)


class StripError(Exception):
    """Base class for strip-estimate failures."""
    pass


class InsufficientModesError(StripError):
    def __init__(self, count: int, required: int = MIN_MODES):
        self.count = count
        self.required = required
        super().__init__(f"Only {count} resolved modes in the fit window, need {required}")


# ================================================================
# SINGLE-TIME ESTIMATE
# ================================================================

@dataclass(frozen=True)
class StripEstimate:
    t: float
    delta: float
    beta: float
    logC: float
    fit_r2: float
    k_window: Tuple[float, float]
    n_modes: int
    cap: float


def strip_cap(k: np.ndarray, floor: float = SPECTRAL_FLOOR, skip: int = SKIP_MODES,
              min_modes: int = MIN_MODES) -> float:
    """Largest delta whose spectrum still keeps min_modes fitted modes above the floor.

    This bounds what the fit can report, which is looser than ln(1/floor) / k_cut,
    the grid cap used for complex evaluation in evolve.resolvability_cap.
    """
    index = min(skip + min_modes - 1, len(k) - 1)
    return float(np.log(1.0 / floor) / k[index])


def estimate_delta(k, amplitudes, floor: float = SPECTRAL_FLOOR, t: float = 0.0,
                   skip: int = SKIP_MODES, min_modes: int = MIN_MODES) -> StripEstimate:
    """Fit ln|h_k| = ln C - beta ln k - delta k on the tail of the resolved window.

    The window runs from the first unskipped mode to the last mode above floor * max|h_k|.
    Only its tail is fitted: the modes whose running upper envelope sits within
    TAIL_FRACTION of the window's height above the floor (in log units), at least
    min_modes of them. Faster-decaying components die out before the tail, so the
    slope there is set by the nearest complex singularity. The tail is weighted by a
    tent in log height, vanishing at the floor and at the tail start, so the estimate
    varies continuously as modes cross either edge.
    """
    k = np.asarray(k, dtype=float)
    amplitudes = np.abs(np.asarray(amplitudes, dtype=float))
    if k.shape != amplitudes.shape or k.ndim != 1:
        raise StripError(f"Wavenumbers {k.shape} and amplitudes {amplitudes.shape} differ")
    if np.any(k <= 0):
        raise StripError("Strip fit takes positive wavenumbers only")

    peak = float(np.max(amplitudes)) if amplitudes.size else 0.0
    if not peak > 0:
        raise InsufficientModesError(0, min_modes)
    threshold = floor * peak
    envelope = np.maximum.accumulate(amplitudes[::-1])[::-1]
    above = np.nonzero(amplitudes > threshold)[0]
    last = int(above[-1])
    window = np.arange(skip, last + 1)
    if window.size < min_modes:
        raise InsufficientModesError(int(max(window.size, 0)), min_modes)

    heights = np.log(envelope[window] / threshold)
    cut = TAIL_FRACTION * float(heights[0])
    # heights are non-increasing, so the tail is a suffix of the window
    start = min(int(np.searchsorted(-heights, -cut, side="left")), window.size - min_modes)
    window, heights = window[start:], heights[start:]
    cut = max(cut, float(heights[0]))
    weights = heights * (cut - heights) / cut if cut > 0 else np.ones_like(heights)
    if not np.any(weights > 0):
        weights = np.ones_like(heights)

    kw = k[window]
    y = np.log(envelope[window])
    design = np.column_stack([np.ones_like(kw), -np.log(kw), -kw])
    root_w = np.sqrt(weights)
    coef, *_ = np.linalg.lstsq(design * root_w[:, None], y * root_w, rcond=None)
    logC, beta, delta = (float(v) for v in coef)

    fitted = design @ coef
    mean = np.sum(weights * y) / np.sum(weights)
    total = float(np.sum(weights * (y - mean) ** 2))
    resid = float(np.sum(weights * (y - fitted) ** 2))
    r2 = 1.0 if total == 0.0 else float(np.clip(1.0 - resid / total, 0.0, 1.0))

    cap = strip_cap(k, floor, skip, min_modes)
    if delta > cap:
        logger.warning(f"[Strip] t={t:.4g}: fitted delta {delta:.4g} above resolvable cap {cap:.4g}")
    delta = float(np.clip(delta, 0.0, cap))
    return StripEstimate(t=float(t), delta=delta, beta=beta, logC=logC, fit_r2=r2,
                         k_window=(float(kw[0]), float(kw[-1])), n_modes=int(window.size), cap=cap)


# ================================================================
# GROWTH LAW AND VERDICT
# ================================================================

@dataclass(frozen=True)
class TheoremVerdict:
    """min(y0, delta(t)) >= min(y0 (1 - eps), M sqrt(nu (t - T*))) checked on a strip series."""
    epsilon: float
    y0: float
    nu: float
    fitted_M: float
    fitted_Tstar: float
    transient_slope: float
    monotone_ok: bool
    sqrt_law_ok: bool
    saturation_ok: bool
    active_cap: str
    cap: float
    series: Tuple[StripEstimate, ...] = field(repr=False)
    diagnostics: Tuple[str, ...] = ()

    @property
    def passed(self) -> bool:
        return self.monotone_ok and self.sqrt_law_ok and self.saturation_ok

    @property
    def final_delta(self) -> float:
        return self.series[-1].delta if self.series else float("nan")

    @property
    def strip_of_solution(self) -> float:
        """Half-width of the strip of f = wave + h."""
        return min(self.y0, self.final_delta)

    def recompute(self) -> "TheoremVerdict":
        return fit_growth_law(self.series, self.nu, self.y0, self.epsilon, cap=self.cap)

    def as_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "y0": self.y0,
            "fitted_M": self.fitted_M,
            "fitted_Tstar": self.fitted_Tstar,
            "transient_slope": self.transient_slope,
            "final_delta": self.final_delta,
            "strip_of_solution": self.strip_of_solution,
            "monotone_ok": self.monotone_ok,
            "sqrt_law_ok": self.sqrt_law_ok,
            "saturation_ok": self.saturation_ok,
            "active_cap": self.active_cap,
        }


def is_monotone(values, tol: float = MONOTONE_TOLERANCE) -> bool:
    """Non-decreasing up to tol relative to the running maximum."""
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        return True
    running = np.maximum.accumulate(values)[:-1]
    return bool(np.all(values[1:] >= running - tol * np.maximum(np.abs(running), 1e-300)))


def fit_growth_law(series: Sequence[StripEstimate], nu: float, y0: float, epsilon: float,
                   cap: Optional[float] = None) -> TheoremVerdict:
    if not 0 < epsilon <= 1:
        raise StripError(f"epsilon must lie in (0, 1], got {epsilon}")
    series = tuple(series)
    cap = float("inf") if cap is None else float(cap)
    target = y0 * (1.0 - epsilon)
    diagnostics = []

    ts = np.array([s.t for s in series], dtype=float)
    # the solution f = wave + h is analytic in the smaller of the two strips
    ds = np.minimum(np.array([s.delta for s in series], dtype=float), y0)
    monotone_ok = is_monotone(ds)
    if not monotone_ok:
        diagnostics.append("delta(t) decreases beyond tolerance")

    M = T_star = slope = float("nan")
    transient = (ds > 0) & (ds < TRANSIENT_FRACTION * target)
    if np.count_nonzero(transient) >= 3 and np.ptp(ts[transient]) > 0:
        growth = stats.linregress(ts[transient], ds[transient] ** 2)
        if growth.slope > 0:
            M = float(np.sqrt(growth.slope / nu))
            T_star = float(-growth.intercept / growth.slope)
            late = transient & (ts > T_star)
            if np.count_nonzero(late) >= 3:
                slope = float(stats.linregress(np.log(ts[late] - T_star), np.log(ds[late])).slope)
        else:
            diagnostics.append("delta^2 does not grow on the transient window")
    else:
        diagnostics.append("fewer than 3 transient points")

    saturation_target = SATURATION_FRACTION * target
    resolution_target = SATURATION_FRACTION * cap
    active_cap = "y0" if saturation_target <= resolution_target else "resolution"
    threshold = min(saturation_target, resolution_target)
    final = float(ds[-1]) if ds.size else float("nan")
    saturation_ok = bool(ds.size) and final >= threshold
    if ds.size and not saturation_ok:
        diagnostics.append(f"final delta {final:.4g} under saturation threshold {threshold:.4g}")

    if target <= 0.0:
        # epsilon = 1: the bound reduces to delta >= 0
        sqrt_law_ok = True
        saturation_ok = bool(ds.size) and bool(np.all(ds >= 0))
        diagnostics.append("vacuous bound at epsilon = 1")
    else:
        sqrt_law_ok = bool(np.isfinite(slope) and SLOPE_RANGE[0] <= slope <= SLOPE_RANGE[1])

    verdict = TheoremVerdict(
        epsilon=float(epsilon), y0=float(y0), nu=float(nu),
        fitted_M=M, fitted_Tstar=T_star, transient_slope=slope,
        monotone_ok=monotone_ok, sqrt_law_ok=sqrt_law_ok, saturation_ok=saturation_ok,
        active_cap=active_cap, cap=cap, series=series, diagnostics=tuple(diagnostics),
    )
    logger.info(
        f"[Strip] Verdict: M={M:.4g} T*={T_star:.4g} slope={slope:.4g} "
        f"monotone={monotone_ok} sqrt={sqrt_law_ok} saturation={saturation_ok} ({active_cap})"
    )
    return verdict
