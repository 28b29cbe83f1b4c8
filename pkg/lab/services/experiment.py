# lab/services/experiment.py - PIPELINE ORCHESTRATION, REPORTS AND SWEEPS
import dataclasses
import io
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from django.conf import settings
from dotenv import dotenv_values
from dotenv.parser import parse_stream
from scipy import stats
from tqdm import tqdm

from ..utils.csv_writer import write_csv, write_key_values
from .evolve import (EvolutionBlowUpError, EvolveError, Evolver, InitialDataParams,
                     PerturbationState, SpectralGrid, make_initial_data, potential_at,
                     potential_of, sample_field, spectrum_of)
from .flux import FluxError, InadmissibleProblemError, PolynomialFlux, ShockProblem, normalize, require_admissible
from .linop import LinopError, get_linear_operator, similarity_check, spectral_gap
from .picard import (DuhamelOperator, PicardError, WeightedSupNorm, check_tau_resolution,
                     estimate_Tstar, linear_term, picard_solve)
from .strip import InsufficientModesError, StripError, StripEstimate, TheoremVerdict, estimate_delta, fit_growth_law
from .wave import BranchFitError, WaveError, fit_branch_order, get_profile
from .weights import WeightError, build_weight, weighted_energy

logger = logging.getLogger(__name__)

SERVICE_ERRORS = (FluxError, WaveError, WeightError, LinopError, EvolveError, StripError, PicardError)

# first strip estimate after this many steps
STRIP_WARMUP_STEPS = 10


class ExperimentError(Exception):
    """Raised for configs that cannot be turned into a run."""
    pass


class ConfigFileError(ExperimentError):
    def __init__(self, message: str, line_number: int):
        self.line_number = line_number
        super().__init__(f"line {line_number}: {message}")


class ExitCode:
    PASSED = 0
    VERDICT_FAILED = 1
    INVALID_INPUT = 2
    NUMERIC_FAILURE = 3


# ================================================================
# CONFIG
# ================================================================

@dataclass(frozen=True)
class ExperimentConfig:
    flux: Tuple[float, ...]
    alpha_minus: float
    alpha_plus: float
    t_end: float
    amplitude: float
    name: str = "experiment"
    nu: float = 1.0
    L: float = 40.0
    N: int = 2048
    dt: Optional[float] = None
    record_every: float = 0.1
    dense_record_until: float = 0.0
    datum: str = "deriv_bump"
    x0: float = 0.0
    w0: float = 1.0
    separation: Optional[float] = None
    epsilon: float = 0.05
    trial_times: Tuple[float, ...] = (0.0,)
    snapshot_times: Tuple[float, ...] = ()
    energy_window: Optional[Tuple[float, float]] = None
    output_dir: Optional[str] = None
    run_picard: bool = True
    run_linop_checks: bool = True
    project_defect: bool = True

    NUMERIC_FIELDS = ("alpha_minus", "alpha_plus", "nu", "L", "N", "dt", "t_end", "record_every",
                      "dense_record_until", "amplitude", "x0", "w0", "separation", "epsilon")

    @classmethod
    def from_validated(cls, data: Dict[str, Any]) -> "ExperimentConfig":
        values = dict(data)
        for key in ("flux", "trial_times", "snapshot_times"):
            if values.get(key) is not None:
                values[key] = tuple(float(v) for v in values[key])
        if values.get("energy_window") is not None:
            values["energy_window"] = tuple(float(v) for v in values["energy_window"])
        if not values.get("output_dir"):
            values["output_dir"] = None
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in values.items() if k in names})

    @property
    def time_step(self) -> float:
        return self.dt if self.dt is not None else SpectralGrid(self.L, self.N).default_dt()

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def with_value(self, axis: str, value: float) -> "ExperimentConfig":
        if axis not in self.NUMERIC_FIELDS:
            raise ExperimentError(f"Sweep axis '{axis}' is not a numeric config field {self.NUMERIC_FIELDS}")
        value = int(value) if axis == "N" else float(value)
        return validate_config({**self.as_dict(), axis: value, "name": f"{self.name}-{axis}={value:g}"})

    def as_dict(self) -> Dict[str, Any]:
        data = dataclasses.asdict(self)
        for key, value in data.items():
            if isinstance(value, tuple):
                data[key] = list(value)
        return data


def validate_config(raw: Dict[str, Any]) -> ExperimentConfig:
    from ..serializers import ExperimentConfigSerializer

    serializer = ExperimentConfigSerializer(data=raw)
    if not serializer.is_valid():
        errors = "; ".join(f"{key}: {' '.join(str(m) for m in msgs)}"
                           for key, msgs in serializer.errors.items())
        raise ExperimentError(f"Invalid config: {errors}")
    return ExperimentConfig.from_validated(serializer.validated_data)


def read_config_file(path) -> Dict[str, Optional[str]]:
    """Raw `key = value` strings of a config file, read with python-dotenv.

    Lines dotenv cannot parse, repeated keys and keys without a value are rejected
    with their line number; the serializer converts the strings.
    """
    path = Path(path)
    if not path.is_file():
        raise ExperimentError(f"Config file not found: {path}")
    text = path.read_text(encoding="utf-8")

    seen = set()
    for binding in parse_stream(io.StringIO(text)):
        original = binding.original.string
        # a binding's mark sits on the blank lines preceding it
        line = binding.original.line + original[:len(original) - len(original.lstrip())].count("\n")
        if binding.error:
            raise ConfigFileError(f"cannot parse '{original.strip()}'", line)
        if binding.key is None:
            continue
        if binding.key in seen:
            raise ConfigFileError(f"duplicate key '{binding.key}'", line)
        if binding.value is None:
            raise ConfigFileError(f"missing value for '{binding.key}'", line)
        seen.add(binding.key)
    return dict(dotenv_values(stream=io.StringIO(text), interpolate=False))


def load_config(path) -> ExperimentConfig:
    return validate_config(read_config_file(path))


# ================================================================
# REPORT
# ================================================================

@dataclass(frozen=True)
class EnergyFit:
    """E_H(t) ~ C1 exp(-C2 t) over a late window."""
    C1: float
    C2: float
    r2: float
    window: Tuple[float, float]
    gap_ratio: float

    @classmethod
    def empty(cls) -> "EnergyFit":
        nan = float("nan")
        return cls(C1=nan, C2=nan, r2=nan, window=(nan, nan), gap_ratio=nan)


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    status: str
    exit_code: int
    output_dir: Optional[str] = None
    message: str = ""
    y0: float = float("nan")
    y0_normalized: float = float("nan")
    lattice: Dict[str, Any] = field(default_factory=dict)
    omega: float = float("nan")
    essential_edge: float = float("nan")
    similarity_residual: float = float("nan")
    branch_exponent: float = float("nan")
    series: Tuple[StripEstimate, ...] = ()
    verdict: Optional[TheoremVerdict] = None
    energy_fit: EnergyFit = field(default_factory=EnergyFit.empty)
    t_star: float = float("nan")
    sigma_hat: float = float("nan")
    picard_iterations: int = 0
    tau_error: float = float("nan")
    cross_solver_error: float = float("nan")
    timings: Dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.exit_code == ExitCode.PASSED

    def scalars(self) -> Dict[str, Any]:
        """Every number printed in report.txt, in print order."""
        values: Dict[str, Any] = {
            "status": self.status,
            "exit_code": self.exit_code,
            "y0": self.y0,
            "y0_normalized": self.y0_normalized,
        }
        values.update({f"lattice_{k}": v for k, v in self.lattice.items()})
        values.update({
            "omega": self.omega,
            "essential_edge": self.essential_edge,
            "similarity_residual": self.similarity_residual,
            "branch_exponent": self.branch_exponent,
            "strip_estimates": len(self.series),
        })
        if self.verdict is not None:
            values.update({f"verdict_{k}": v for k, v in self.verdict.as_dict().items()})
        values.update({
            "energy_C1": self.energy_fit.C1,
            "energy_C2": self.energy_fit.C2,
            "energy_r2": self.energy_fit.r2,
            "energy_window_start": self.energy_fit.window[0],
            "energy_window_end": self.energy_fit.window[1],
            "energy_rate_over_2omega": self.energy_fit.gap_ratio,
            "t_star": self.t_star,
            "sigma_hat": self.sigma_hat,
            "picard_iterations": self.picard_iterations,
            "tau_error": self.tau_error,
            "cross_solver_error": self.cross_solver_error,
        })
        return values

    def render(self) -> str:
        from ..utils.csv_writer import format_value

        lines = [f"# {self.config.name}", "", "[config]"]
        lines += [f"{k} = {format_value(v) if not isinstance(v, list) else v}"
                  for k, v in self.config.as_dict().items()]
        lines += ["", "[results]"]
        lines += [f"{k} = {format_value(v)}" for k, v in self.scalars().items()]
        if self.message:
            lines += ["", f"message: {self.message}"]
        if self.verdict is not None and self.verdict.diagnostics:
            lines += ["", "[diagnostics]"] + [f"- {d}" for d in self.verdict.diagnostics]
        if self.config.run_picard:
            lines += ["", "note: the Picard solve runs on the real axis with a w-weighted norm;",
                      "strip recovery for the evolved solution is measured spectrally."]
        return "\n".join(lines) + "\n"


# ================================================================
# RUNNER
# ================================================================

class ExperimentRunner:
    """flux -> wave -> weights -> linop -> evolve -> strip -> picard, with CSV output."""

    def __init__(self, config: ExperimentConfig, output_dir=None, progress: bool = False):
        self.config = config
        self.lab = settings.LAB
        root = output_dir or config.output_dir or Path(self.lab['OUTPUT_ROOT']) / config.name
        self.output_dir = Path(root)
        self.progress = progress
        self.timings: Dict[str, float] = {}

    # ----------------------------------------------------------------
    def run(self, dry_run: bool = False) -> ExperimentReport:
        if dry_run:
            logger.info(f"[Run] Dry run of '{self.config.name}'")
            return ExperimentReport(config=self.config, status="dry_run", exit_code=ExitCode.PASSED)

        report = ExperimentReport(config=self.config, status="passed", exit_code=ExitCode.PASSED,
                                  output_dir=str(self.output_dir))
        started = time.perf_counter()
        try:
            self._execute(report)
        except InadmissibleProblemError as e:
            report.status, report.exit_code = "refused", ExitCode.INVALID_INPUT
            report.message = f"inadmissible: {e.predicate} ({e.message})"
            logger.warning(f"[Run] Refused '{self.config.name}': {e.predicate}")
        except ExperimentError as e:
            report.status, report.exit_code = "refused", ExitCode.INVALID_INPUT
            report.message = str(e)
            logger.warning(f"[Run] Refused '{self.config.name}': {e}")
        except EvolutionBlowUpError as e:
            report.status, report.exit_code = "numeric_failure", ExitCode.NUMERIC_FAILURE
            report.message = f"evolution failed at t={e.t:.6g}"
            logger.error(f"[Run] {report.message}")
        except SERVICE_ERRORS as e:
            report.status, report.exit_code = "numeric_failure", ExitCode.NUMERIC_FAILURE
            report.message = f"{type(e).__name__}: {e}"
            logger.error(f"[Run] Numeric failure: {report.message}")
        report.timings = dict(self.timings, total=time.perf_counter() - started)

        self.output_dir.mkdir(parents=True, exist_ok=True)
        write_csv(self.output_dir / "summary.csv", ["key", "value"], list(report.scalars().items()))
        (self.output_dir / "report.txt").write_text(report.render(), encoding="utf-8")
        logger.info(f"[Run] '{self.config.name}' finished: {report.status} (exit {report.exit_code})")
        return report

    def _timed(self, stage: str, started: float) -> None:
        self.timings[stage] = time.perf_counter() - started
        logger.info(f"[Run] {stage} stage took {self.timings[stage]:.2f}s")

    # ----------------------------------------------------------------
    def _execute(self, report: ExperimentReport) -> None:
        cfg = self.config
        self.output_dir.mkdir(parents=True, exist_ok=True)

        problem = ShockProblem.create(PolynomialFlux.from_sequence(cfg.flux), cfg.alpha_minus, cfg.alpha_plus, cfg.nu)
        require_admissible(problem)
        problem = normalize(problem)

        started = time.perf_counter()
        profile = get_profile(problem, self.lab['LINOP_L'], self.lab['LINOP_DX'])
        lattice = profile.lattice
        report.y0 = lattice.y0_physical
        report.y0_normalized = lattice.y0
        report.lattice = {
            "re_base": lattice.nearest.real,
            "im_base": lattice.nearest.imag,
            "lines": len(lattice.lines),
            "branch_order": lattice.branch_order,
        }
        self._write_singularities(lattice)
        weight = build_weight(profile)
        self._timed("wave", started)

        gap = None
        if cfg.run_linop_checks:
            started = time.perf_counter()
            gap = self._linop_stage(report, problem, profile, weight)
            self._timed("linop", started)

        started = time.perf_counter()
        evolution = self._evolve_stage(problem, profile)
        self._timed("evolve", started)

        started = time.perf_counter()
        report.series = tuple(evolution.series)
        if len(report.series) < 3:
            raise StripError(f"Only {len(report.series)} strip estimates recorded")
        verdict = fit_growth_law(report.series, nu=1.0, y0=lattice.y0, epsilon=cfg.epsilon,
                                 cap=report.series[-1].cap)
        report.verdict = verdict
        write_key_values(self.output_dir / "verdict.txt", {
            "epsilon": verdict.epsilon,
            "y0": verdict.y0,
            "fitted_M": verdict.fitted_M,
            "fitted_Tstar": verdict.fitted_Tstar,
            "monotone_ok": verdict.monotone_ok,
            "sqrt_law_ok": verdict.sqrt_law_ok,
            "saturation_ok": verdict.saturation_ok,
            "active_cap": verdict.active_cap,
        })
        report.energy_fit = self._fit_energy(evolution, report.omega)
        self._timed("strip", started)

        picard_ok = True
        if cfg.run_picard:
            started = time.perf_counter()
            picard_ok = self._picard_stage(report, problem, evolution)
            self._timed("picard", started)

        linop_ok = gap is None or gap.stable
        if not (verdict.passed and picard_ok and linop_ok):
            report.status, report.exit_code = "verdict_failed", ExitCode.VERDICT_FAILED
            failed = [name for name, ok in (("strip", verdict.passed), ("picard", picard_ok),
                                            ("linop", linop_ok)) if not ok]
            report.message = "failed: " + ", ".join(failed)

    # ----------------------------------------------------------------
    def _write_singularities(self, lattice) -> None:
        rows = [
            (i, line.base_point.real, line.base_point.imag, line.spacing.real, line.spacing.imag,
             line.residue.real, line.residue.imag, lattice.branch_order)
            for i, line in enumerate(lattice.lines)
        ]
        write_csv(self.output_dir / "singularities.csv",
                  ["line_index", "re_base", "im_base", "re_spacing", "im_spacing",
                   "re_residue", "im_residue", "branch_order"], rows)

    def _linop_stage(self, report, problem, profile, weight):
        model = get_linear_operator(problem, self.lab['LINOP_L'], self.lab['LINOP_DX'])
        gap = spectral_gap(model)
        report.omega = gap.omega
        report.essential_edge = gap.essential_edge
        report.similarity_residual = similarity_check(model, weight, lambda x: np.exp(-x ** 2))
        try:
            report.branch_exponent = fit_branch_order(profile)
        except BranchFitError as e:
            logger.warning(f"[Run] Branch exponent fit rejected: {e}")
        write_csv(self.output_dir / "spectrum.csv", ["index", "eigenvalue"],
                  [(i, lam) for i, lam in enumerate(model.eigenvalues[::-1])])
        return gap

    # ----------------------------------------------------------------
    def _evolve_stage(self, problem, profile) -> "Evolution":
        cfg = self.config
        grid = SpectralGrid(cfg.L, cfg.N)
        dt = cfg.time_step
        evolver = Evolver(profile, grid, dt, project_defect=cfg.project_defect)
        weight = build_weight(evolver.wave)
        floor = self.lab['SPECTRAL_FLOOR']

        state = make_initial_data(cfg.datum, InitialDataParams(cfg.amplitude, cfg.x0, cfg.w0, cfg.separation), grid)
        n_steps = int(round(cfg.t_end / dt))
        record = max(1, int(round(cfg.record_every / dt)))
        horizon = self.lab['PICARD_HORIZON']
        keep = {int(round(t / dt)) for t in cfg.trial_times}
        if cfg.run_picard:
            keep |= {int(round((t + horizon) / dt)) for t in cfg.trial_times}
        snapshot_steps = {int(round(t / dt)): t for t in cfg.snapshot_times}

        evolution = Evolution(grid=grid, dt=dt, wave=evolver.wave)
        for n in tqdm(range(n_steps + 1), desc=cfg.name, disable=not self.progress):
            if n > 0:
                state = evolver.step(state)
            if n in keep:
                evolution.states[n] = state
            if n in snapshot_steps:
                self._write_snapshot(snapshot_steps[n], state, evolver.wave.f_values)
            if n >= STRIP_WARMUP_STEPS and (n % record == 0 or n * dt <= cfg.dense_record_until):
                evolution.rows.append(self._record(state, weight, floor, evolution))
        write_csv(self.output_dir / "timeseries.csv",
                  ["t", "delta", "beta", "fit_r2", "E_H", "E_h", "mass", "max_h"], evolution.rows)
        return evolution

    def _record(self, state: PerturbationState, weight, floor: float, evolution: "Evolution") -> tuple:
        k, amplitudes = spectrum_of(state)
        try:
            estimate = estimate_delta(k, amplitudes, floor=floor, t=state.t)
            evolution.series.append(estimate)
            delta, beta, r2 = estimate.delta, estimate.beta, estimate.fit_r2
        except InsufficientModesError as e:
            logger.warning(f"[Strip] t={state.t:.4g}: {e}")
            delta = beta = r2 = float("nan")
        H = potential_of(state)
        E_H = weighted_energy(weight, H).value
        E_h = weighted_energy(weight, state.values).value
        return (state.t, delta, beta, r2, E_H, E_h, state.mass, state.max_abs)

    def _write_snapshot(self, t: float, state: PerturbationState, f_wave: np.ndarray) -> None:
        x = state.grid.x
        rows = zip(x, f_wave, state.values, potential_of(state))
        write_csv(self.output_dir / f"fields_t{t:g}.csv", ["x", "f_wave", "h", "H"], list(rows))
        k, amplitudes = spectrum_of(state)
        write_csv(self.output_dir / f"spectrum_t{t:g}.csv", ["k", "abs_h_hat"], list(zip(k, amplitudes)))

    # ----------------------------------------------------------------
    def _fit_energy(self, evolution: "Evolution", omega: float) -> EnergyFit:
        cfg = self.config
        window = cfg.energy_window or (0.5 * cfg.t_end, cfg.t_end)
        t = np.array([row[0] for row in evolution.rows])
        E_H = np.array([row[4] for row in evolution.rows])
        mask = (t >= window[0]) & (t <= window[1]) & (E_H > 0)
        if np.count_nonzero(mask) < 3:
            logger.warning("[Run] Too few energy samples for the decay fit")
            return EnergyFit.empty()
        fit = stats.linregress(t[mask], np.log(E_H[mask]))
        rate = -float(fit.slope)
        # E_H is quadratic in H, so its rate is compared with 2 omega
        ratio = rate / (2.0 * omega) if np.isfinite(omega) and omega > 0 else float("nan")
        return EnergyFit(C1=float(np.exp(fit.intercept)), C2=rate, r2=float(fit.rvalue ** 2),
                         window=(float(window[0]), float(window[1])), gap_ratio=ratio)

    # ----------------------------------------------------------------
    def _picard_stage(self, report, problem, evolution: "Evolution") -> bool:
        cfg, lab = self.config, self.lab
        model = get_linear_operator(problem, lab['PICARD_L'], lab['PICARD_DX'])
        weight = build_weight(model.profile)
        norm = WeightedSupNorm.for_model(model, weight)
        horizon = lab['PICARD_HORIZON']
        t_grid = np.linspace(0.0, horizon, lab['PICARD_STEPS'])
        operator = DuhamelOperator(model, weight, t_grid)
        runs = {}

        def attempt(T: float):
            state = evolution.state_at(T)
            a = linear_term(potential_at(state, model.x), model, weight, t_grid)
            runs[T] = picard_solve(a, operator, max_iter=lab['PICARD_MAX_ITER'], tol=lab['PICARD_TOL'], norm=norm)
            return runs[T]

        t = np.array([row[0] for row in evolution.rows])
        E_H = np.array([row[4] for row in evolution.rows])
        estimate = estimate_Tstar(cfg.trial_times, attempt, sigma_max=lab['PICARD_SIGMA_MAX'],
                                  energies=(t, E_H) if t.size else None)
        if not estimate.found:
            report.message = "no trial time satisfies the smallness condition"
            write_csv(self.output_dir / "picard_run.csv", ["n", "residual", "ratio"], [])
            return False

        run = runs[estimate.t_star]
        report.t_star = estimate.t_star
        report.sigma_hat = run.sigma_hat
        report.picard_iterations = run.iterations
        write_csv(self.output_dir / "picard_run.csv", ["n", "residual", "ratio"], run.rows())
        report.tau_error = check_tau_resolution(operator, run.solution, lab['PICARD_TAU_TOL'])

        try:
            reference = evolution.state_at(estimate.t_star + horizon)
        except ExperimentError:
            logger.warning(f"[Picard] T* + {horizon:g} lies beyond t_end, cross-solver check skipped")
            return True
        expected = sample_field(reference.modes, reference.grid, model.x).real
        scale = float(np.linalg.norm(expected))
        if scale > 0:
            report.cross_solver_error = float(np.linalg.norm(run.solution[-1] - expected) / scale)
        logger.info(f"[Picard] Cross-solver relative error {report.cross_solver_error:.3e}")
        return True


@dataclass
class Evolution:
    grid: SpectralGrid
    dt: float
    wave: Any
    states: Dict[int, PerturbationState] = field(default_factory=dict)
    rows: List[tuple] = field(default_factory=list)
    series: List[StripEstimate] = field(default_factory=list)

    def state_at(self, t: float) -> PerturbationState:
        step = int(round(t / self.dt))
        if step not in self.states:
            raise ExperimentError(f"No stored state at t={t:g}; it lies beyond t_end or was not requested")
        return self.states[step]


def run(config: ExperimentConfig, output_dir=None, dry_run: bool = False,
        progress: bool = False) -> ExperimentReport:
    return ExperimentRunner(config, output_dir=output_dir, progress=progress).run(dry_run=dry_run)


# ================================================================
# SWEEP
# ================================================================

SWEEP_HEADER = ["axis", "value", "status", "exit_code", "y0", "omega", "fitted_M",
                "fitted_Tstar", "t_star", "sigma_hat", "message"]


@dataclass
class SweepRow:
    axis: str
    value: float
    report: Optional[ExperimentReport]
    error: str = ""

    def as_row(self) -> list:
        r = self.report
        if r is None:
            nan = float("nan")
            return [self.axis, self.value, "numeric_failure", ExitCode.NUMERIC_FAILURE,
                    nan, nan, nan, nan, nan, nan, self.error]
        verdict = r.verdict
        return [self.axis, self.value, r.status, r.exit_code, r.y0, r.omega,
                verdict.fitted_M if verdict else float("nan"),
                verdict.fitted_Tstar if verdict else float("nan"),
                r.t_star, r.sigma_hat, r.message]


def _run_one(config: ExperimentConfig, axis: str, value: float, output_dir: str) -> SweepRow:
    try:
        cfg = config.with_value(axis, value)
        return SweepRow(axis=axis, value=value, report=run(cfg, output_dir=output_dir))
    except ExperimentError as e:
        return SweepRow(axis=axis, value=value, report=None, error=f"ExperimentError: {e}")
    except Exception as e:
        logger.exception(f"[Sweep] {axis}={value} crashed")
        return SweepRow(axis=axis, value=value, report=None, error=f"{type(e).__name__}: {e}")


def _init_worker() -> None:
    import django
    from django.apps import apps

    if not apps.ready:
        django.setup()


def sweep(config: ExperimentConfig, axis: str, values: Sequence[float], output_root=None,
          workers: int = 1) -> List[SweepRow]:
    if axis not in ExperimentConfig.NUMERIC_FIELDS:
        raise ExperimentError(f"Sweep axis '{axis}' is not a numeric config field {ExperimentConfig.NUMERIC_FIELDS}")
    root = Path(output_root or config.output_dir or Path(settings.LAB['OUTPUT_ROOT']) / f"{config.name}-sweep")
    root.mkdir(parents=True, exist_ok=True)
    tasks = [(float(v), str(root / f"{axis}={float(v):g}")) for v in values]
    logger.info(f"[Sweep] {axis} over {len(tasks)} values with {workers} worker(s)")

    rows: Dict[int, SweepRow] = {}
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker) as pool:
            futures = {pool.submit(_run_one, config, axis, v, out): i for i, (v, out) in enumerate(tasks)}
            for future in tqdm(as_completed(futures), total=len(futures), desc=f"sweep {axis}"):
                rows[futures[future]] = future.result()
    else:
        for i, (v, out) in enumerate(tqdm(tasks, desc=f"sweep {axis}", disable=len(tasks) < 2)):
            rows[i] = _run_one(config, axis, v, out)

    ordered = [rows[i] for i in range(len(tasks))]
    write_csv(root / "sweep_summary.csv", SWEEP_HEADER, [row.as_row() for row in ordered])
    return ordered


# ================================================================
# LEDGER
# ================================================================

def _nullable(value) -> Optional[float]:
    if value is None:
        return None
    value = float(value)
    return value if math.isfinite(value) else None


def record_run(report: ExperimentReport, sweep_axis: str = "", sweep_value: Optional[float] = None):
    """Store the run in the ExperimentRun ledger; failures are logged, never raised."""
    from django.db import DatabaseError

    from ..models import ExperimentRun

    verdict = report.verdict
    try:
        return ExperimentRun.objects.create(
            name=report.config.name,
            config=report.config.as_dict(),
            output_dir=report.output_dir or "",
            status=report.status,
            exit_code=report.exit_code,
            y0=_nullable(report.y0),
            omega=_nullable(report.omega),
            fitted_M=_nullable(verdict.fitted_M) if verdict else None,
            fitted_Tstar=_nullable(verdict.fitted_Tstar) if verdict else None,
            t_star=_nullable(report.t_star),
            sigma_hat=_nullable(report.sigma_hat),
            message=report.message,
            duration_seconds=float(report.timings.get("total", 0.0)),
            sweep_axis=sweep_axis,
            sweep_value=_nullable(sweep_value),
        )
    except DatabaseError as e:
        logger.warning(f"[Run] Could not record run '{report.config.name}': {e}")
        return None
