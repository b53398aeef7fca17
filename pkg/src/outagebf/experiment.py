"""Monte Carlo validation, bisection refinement and the experiment protocols.

Streams: trial t uses channels from ``stream(seed, CHANNELS, t)``; the
pipeline for (trial, gamma index, method index) uses the key path
``(seed, PIPELINE, t, g, m)`` with sub-keys for randomization and
validation. Nothing depends on the order cells are evaluated in.

CSV schemas::

    sweep       method, gamma_db, value, n_trials
    histogram   method, bin_lo, bin_hi, count
    validation  trial, user, p_hat, radius, pass
    runtime     method, n_t, k, median_s, iqr_s, n_runs, variables, rows
"""

from __future__ import annotations

import csv
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .conic import SolverOptions
from .conic.admm import OPTIMAL, PRIMAL_INFEASIBLE
from .model import (
    BeamformerSet,
    BeamformingInstance,
    GaussianCov,
    UniformIID,
    db_to_linear,
    generate_channels,
    make_instance,
    sample_errors,
    sinr,
    stream,
)
from .recovery import (
    DEFAULT_ROUNDS,
    RandomizationResult,
    RarSolution,
    beamformers_from_powers,
    extract_beamformers,
    gaussian_randomization,
    power_allocation,
    rank_one_check,
    solve_rar,
)
from .restriction import (
    DECOMP_BOUNDED,
    NONROBUST,
    SPHERE,
    Method,
    build_rar,
    sphere_radius,
    user_margins,
    with_override,
)

# stream key roles
CHANNELS, PIPELINE, RANDOMIZE, VALIDATE, BISECT = 1, 2, 3, 4, 5

# designs meet their constraints only to solver accuracy (~1e-7 relative), so
# an SINR this close below target still counts; the band has no probability
# mass under continuous errors but decides error-free cases
SINR_RTOL = 1e-6


# -- validation ------------------------------------------------------------------------------

@dataclass
class ValidationReport:
    p_hat: np.ndarray
    n: int
    rho: np.ndarray

    @property
    def radius(self) -> np.ndarray:
        return 3.0 * np.sqrt(self.p_hat * (1.0 - self.p_hat) / self.n)

    @property
    def passes(self) -> np.ndarray:
        """p_hat_i >= 1 - rho_i - radius_i."""
        return self.p_hat >= 1.0 - self.rho - self.radius

    @property
    def point_passes(self) -> np.ndarray:
        """p_hat_i >= 1 - rho_i (the rule used inside bisection)."""
        return self.p_hat >= 1.0 - self.rho

    @property
    def min_p_hat(self) -> float:
        return float(self.p_hat.min())

    def records(self, trial: int = 0) -> list[dict]:
        return [{"trial": trial, "user": i, "p_hat": float(p), "radius": float(r), "pass": bool(ok)}
                for i, (p, r, ok) in enumerate(zip(self.p_hat, self.radius, self.passes))]

    def to_dict(self) -> dict:
        return {"n": self.n, "p_hat": self.p_hat.tolist(), "radius": self.radius.tolist(),
                "rho": self.rho.tolist(), "pass": self.passes.tolist()}


def validate_mc(w: BeamformerSet, inst: BeamformingInstance, n: int = 10_000, seed: int = 0,
                keys: tuple = ()) -> ValidationReport:
    """Empirical Prob{SINR_i >= gamma_i} over n draws of the CSI errors."""
    if n < 1:
        raise ValueError("need at least one Monte Carlo sample")
    e = sample_errors(inst.error_model, stream(seed, *keys), n, inst.n_t)
    h = inst.channels[None, :, :] + e
    p_hat = np.empty(inst.k)
    for i in range(inst.k):
        s = sinr(w, h[:, i, :], float(inst.noise_powers[i]), i)
        p_hat[i] = np.count_nonzero(s >= inst.sinr_targets[i] * (1.0 - SINR_RTOL)) / n
    return ValidationReport(p_hat, n, np.asarray(inst.outage_caps, dtype=float).copy())


# -- pipeline --------------------------------------------------------------------------------

FEASIBLE = "feasible"
INFEASIBLE = "infeasible"
FAILED = "failed"


@dataclass(frozen=True)
class PipelineOptions:
    rounds: int = DEFAULT_ROUNDS
    mc_samples: int = 10_000  # 0 skips validation
    seed: int = 0
    keys: tuple = ()
    solver: SolverOptions | None = None
    backend: str = "admm"
    margin_tol: float = 1e-6


@dataclass
class PipelineResult:
    status: str
    method: Method
    stage: str = ""  # where an infeasible/failed outcome arose
    rar: RarSolution | None = None
    beamformers: BeamformerSet | None = None
    path: str = ""
    validation: ValidationReport | None = None
    randomization: RandomizationResult | None = field(default=None, repr=False)
    timings: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return self.status == FEASIBLE

    @property
    def total_power(self) -> float:
        return self.beamformers.total_power if self.beamformers is not None else math.inf


def _margins_ok(inst, method, bf: BeamformerSet, tol: float) -> bool:
    ws = bf.covariances()
    scale = 1.0 + bf.total_power * (1.0 + float(np.max(np.abs(inst.channels)) ** 2))
    return bool(np.all(user_margins(inst, method, ws) >= -tol * scale))


def run_pipeline(inst: BeamformingInstance, method: Method, options: PipelineOptions | None = None) -> PipelineResult:
    """Relaxed solve, rank check, extraction or randomization, then validation.

    Paths: ``rank-one`` (direct decomposition), ``rank-one+power`` (principal
    directions kept, powers re-solved because the truncated matrices missed
    the constraints), ``randomization``.
    """
    opt = options or PipelineOptions()
    timings: dict = {}
    t0 = time.perf_counter()
    rar = solve_rar(inst, method, opt.solver, opt.backend)
    timings["relaxation"] = time.perf_counter() - t0
    res = PipelineResult(FEASIBLE, method, rar=rar, timings=timings)
    if rar.status != OPTIMAL:
        res.status = INFEASIBLE if rar.status == PRIMAL_INFEASIBLE else FAILED
        res.stage = f"relaxation:{rar.status}"
        return res

    t0 = time.perf_counter()
    rank_one, _ = rank_one_check(rar)
    bf = None
    if rank_one:
        bf = extract_beamformers(rar)
        res.path = "rank-one"
        if not _margins_ok(inst, method, bf, opt.margin_tol):
            norms = np.linalg.norm(bf.vectors, axis=1)
            if np.all(norms > 0):
                u = bf.vectors / norms[:, None]
                pa = power_allocation(u, inst, method, opt.solver, opt.backend)
                bf = beamformers_from_powers(u, pa.powers) if pa.feasible else None
            else:
                bf = None
            res.path = "rank-one+power"
    if bf is None:
        rnd = gaussian_randomization(rar, inst, method, opt.rounds, opt.seed, opt.keys + (RANDOMIZE,),
                                     opt.solver, opt.backend)
        res.randomization = rnd
        res.path = "randomization"
        bf = rnd.beamformers
    timings["recovery"] = time.perf_counter() - t0
    if bf is None:
        res.status = INFEASIBLE
        res.stage = "randomization"
        return res
    res.beamformers = bf

    if opt.mc_samples:
        t0 = time.perf_counter()
        res.validation = validate_mc(bf, inst, opt.mc_samples, opt.seed, opt.keys + (VALIDATE,))
        timings["validation"] = time.perf_counter() - t0
    return res


# -- bisection ---------------------------------------------------------------------------------

@dataclass
class BisectionResult:
    nominal: PipelineResult
    refined: PipelineResult
    knob_nominal: float
    knob: float
    history: list = field(default_factory=list)  # (knob, status, power, passed)
    nominal_failed: bool = False
    boundary: bool = False

    @property
    def improvement_db(self) -> float:
        if not (self.nominal.feasible and self.refined.feasible):
            return math.nan
        return float(10 * np.log10(self.nominal.total_power / self.refined.total_power))


def knob_range(inst: BeamformingInstance, method: Method, rho_max: float = 0.9) -> tuple[float, float]:
    """(nominal, loosest) value of the conservatism knob."""
    if method.kind == NONROBUST:
        raise ValueError("the non-robust design has no conservatism knob")
    if method.kind == SPHERE:
        rho = float(np.max(inst.outage_caps))
        return sphere_radius(inst.n_t, rho), 0.0
    rho = float(np.min(inst.outage_caps))
    if not rho < rho_max < 1.0:
        raise ValueError("rho_max must lie between the outage cap and 1")
    return rho, rho_max


def bisection_refine(inst: BeamformingInstance, method: Method, iters: int = 6,
                     options: PipelineOptions | None = None, rho_max: float = 0.9) -> BisectionResult:
    """Loosen the knob (radius d, or the rho used to build II-IV) while validation still passes.

    A candidate passes when every user has p_hat_i >= 1 - rho_i on the same
    N validation draws; only passing candidates that do not cost more power
    than the current best are kept.
    """
    if iters < 0:
        raise ValueError("iters must be nonnegative")
    opt = options or PipelineOptions()
    if opt.mc_samples < 1:
        raise ValueError("bisection needs Monte Carlo validation (mc_samples >= 1)")
    nominal_knob, loose = knob_range(inst, method, rho_max)
    val_keys = opt.keys + (BISECT,)

    def attempt(knob, tag):
        m = with_override(Method(method.kind), knob)
        o = replace(opt, keys=opt.keys + (tag,))
        r = run_pipeline(inst, m, o)
        if r.feasible:
            r.validation = validate_mc(r.beamformers, inst, opt.mc_samples, opt.seed, val_keys)
        ok = r.feasible and bool(np.all(r.validation.point_passes))
        return r, ok

    nominal = run_pipeline(inst, Method(method.kind), replace(opt, keys=opt.keys + (0,)))
    if nominal.feasible:
        nominal.validation = validate_mc(nominal.beamformers, inst, opt.mc_samples, opt.seed, val_keys)
    out = BisectionResult(nominal, nominal, nominal_knob, nominal_knob)
    if not nominal.feasible:
        return out
    if not np.all(nominal.validation.point_passes):
        warnings.warn("nominal design fails Monte Carlo validation; returned unchanged", stacklevel=2)
        out.nominal_failed = True
        return out
    out.history.append((nominal_knob, nominal.status, nominal.total_power, True))
    if iters == 0:
        return out

    best, best_knob = nominal, nominal_knob
    r, ok = attempt(loose, 1)
    out.history.append((loose, r.status, r.total_power, ok))
    if ok and r.total_power <= best.total_power + 1e-9:
        out.refined, out.knob, out.boundary = r, loose, True
        return out
    safe, risky = nominal_knob, loose
    for step in range(iters):
        mid = 0.5 * (safe + risky)
        r, ok = attempt(mid, 2 + step)
        out.history.append((mid, r.status, r.total_power, ok))
        if ok:
            safe = mid
            if r.total_power <= best.total_power + 1e-9:
                best, best_knob = r, mid
        else:
            risky = mid
    out.refined, out.knob = best, best_knob
    return out


# -- experiment grids ------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    n_t: int = 3
    k: int = 3
    sigma2: float = 0.1
    gamma_db: tuple = (11.0,)
    methods: tuple = ("sphere", "bernstein", "decomp_gaussian", "nonrobust")
    rho: float = 0.1
    error: str = "gaussian"  # or "uniform"
    sigma_e2: float = 0.002
    correlation: float = 0.0
    epsilon: float = 0.02
    trials: int = 100
    mc_samples: int = 5_000
    seed: int = 0
    rounds: int = DEFAULT_ROUNDS
    pickup_gamma_db: float | None = None
    bisection: bool = False
    bisection_iters: int = 6
    rho_max: float = 0.9
    bin_width: float = 0.05
    workers: int = 1
    backend: str = "admm"
    tol: float = 1e-7
    max_iters: int = 50_000

    def __post_init__(self):
        object.__setattr__(self, "gamma_db", tuple(float(g) for g in np.atleast_1d(self.gamma_db)))
        object.__setattr__(self, "methods", tuple(self.methods))
        if not self.gamma_db:
            raise ValueError("gamma grid must be nonempty")
        if not self.methods:
            raise ValueError("method list must be nonempty")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.mc_samples < 0 or self.rounds < 1 or self.workers < 1:
            raise ValueError("counts must be positive")
        if self.n_t < 1 or self.k < 1:
            raise ValueError("need n_t >= 1 and k >= 1")
        if not 0.0 < self.bin_width < 1.0:
            raise ValueError("bin width must lie in (0, 1)")
        if self.error not in ("gaussian", "uniform"):
            raise ValueError("error must be 'gaussian' or 'uniform'")
        for m in self.parsed_methods:
            if m.kind == NONROBUST:
                continue
            if (m.kind == DECOMP_BOUNDED) != (self.error == "uniform"):
                raise ValueError(f"{m.label} does not match the {self.error} error model")

    @property
    def parsed_methods(self) -> list[Method]:
        return [Method.parse(m) for m in self.methods]

    def error_model(self):
        if self.error == "uniform":
            return UniformIID.common(self.epsilon, self.k)
        if self.correlation:
            return GaussianCov.correlated(self.sigma_e2, self.correlation, self.n_t, self.k)
        return GaussianCov.iid(self.sigma_e2, self.n_t, self.k)

    def instance(self, trial: int, gamma_db: float) -> BeamformingInstance:
        h = generate_channels(self.n_t, self.k, self.seed, CHANNELS, trial)
        return make_instance(h, gamma_db, self.rho, self.error_model(), self.sigma2)

    def pipeline_options(self, trial: int, g: int, m: int) -> PipelineOptions:
        return PipelineOptions(rounds=self.rounds, mc_samples=self.mc_samples, seed=self.seed,
                               keys=(PIPELINE, trial, g, m), backend=self.backend,
                               solver=SolverOptions(tol=self.tol, max_iters=self.max_iters))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gamma_db"] = list(self.gamma_db)
        d["methods"] = list(self.methods)
        return d


@dataclass
class TrialRecord:
    trial: int
    gamma_db: float
    method: str
    status: str
    stage: str
    power: float
    path: str
    min_rank_ratio: float
    rank_one: bool
    p_hat: list
    solve_time: float
    total_time: float
    bisection: dict | None = None

    @property
    def feasible(self) -> bool:
        return self.status == FEASIBLE

    @property
    def min_p_hat(self) -> float:
        return min(self.p_hat) if self.p_hat else math.nan


def run_cell(config: ExperimentConfig, trial: int, g: int, m: int) -> TrialRecord:
    method = config.parsed_methods[m]
    gamma = config.gamma_db[g]
    inst = config.instance(trial, gamma)
    opt = config.pipeline_options(trial, g, m)
    t0 = time.perf_counter()
    bis = None
    if config.bisection and method.robust:
        b = bisection_refine(inst, method, config.bisection_iters, opt, config.rho_max)
        res = b.refined
        bis = {"nominal_power": b.nominal.total_power, "knob_nominal": b.knob_nominal, "knob": b.knob,
               "nominal_failed": b.nominal_failed, "boundary": b.boundary,
               "nominal_min_p_hat": b.nominal.validation.min_p_hat if b.nominal.validation else math.nan}
    else:
        res = run_pipeline(inst, method, opt)
    rar = res.rar
    ratios = rar.rank_ratios if rar is not None and rar.feasible else np.array([])
    return TrialRecord(
        trial=trial, gamma_db=gamma, method=method.kind, status=res.status, stage=res.stage,
        power=res.total_power, path=res.path,
        min_rank_ratio=float(ratios.min()) if ratios.size else math.nan,
        rank_one=bool(ratios.size and ratios.min() >= 0.99),
        p_hat=res.validation.p_hat.tolist() if res.validation is not None else [],
        solve_time=res.timings.get("relaxation", math.nan), total_time=time.perf_counter() - t0,
        bisection=bis)


def _cell_star(args):
    return run_cell(*args)


def run_grid(config: ExperimentConfig) -> list[TrialRecord]:
    cells = [(config, t, g, m) for g in range(len(config.gamma_db))
             for t in range(config.trials) for m in range(len(config.methods))]
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as ex:
            return list(ex.map(_cell_star, cells, chunksize=4))
    return [run_cell(*c) for c in cells]


def _method_names(config: ExperimentConfig) -> list[str]:
    return [m.kind for m in config.parsed_methods]


def feasibility_sweep(config: ExperimentConfig, records: list[TrialRecord] | None = None) -> list[dict]:
    """Fraction of trials where the relaxed problem is feasible and beamformers were recovered."""
    records = run_grid(config) if records is None else records
    rows = []
    for m in _method_names(config):
        for g in config.gamma_db:
            cell = [r for r in records if r.method == m and r.gamma_db == g]
            rows.append({"method": m, "gamma_db": g,
                         "value": sum(r.feasible for r in cell) / len(cell) if cell else math.nan,
                         "n_trials": len(cell)})
    return rows


def common_feasible_trials(records: list[TrialRecord], methods: list[str], gamma_db: float) -> list[int]:
    by_trial: dict[int, set] = {}
    for r in records:
        if r.gamma_db == gamma_db and r.feasible:
            by_trial.setdefault(r.trial, set()).add(r.method)
    return sorted(t for t, ms in by_trial.items() if set(methods) <= ms)


def power_sweep(config: ExperimentConfig, records: list[TrialRecord] | None = None) -> list[dict]:
    """Mean total power per (method, gamma) over the trials all methods solve at the pick-up gamma.

    A trial in that set that is infeasible at some other gamma is left out
    of that cell only; ``n_trials`` reports the count actually averaged. An
    empty set gives value NaN with n_trials 0.
    """
    records = run_grid(config) if records is None else records
    methods = _method_names(config)
    pickup = config.pickup_gamma_db if config.pickup_gamma_db is not None else max(config.gamma_db)
    common = set(common_feasible_trials(records, methods, pickup))
    rows = []
    for m in methods:
        for g in config.gamma_db:
            vals = [r.power for r in records
                    if r.method == m and r.gamma_db == g and r.trial in common and r.feasible]
            rows.append({"method": m, "gamma_db": g, "value": float(np.mean(vals)) if vals else math.nan,
                         "n_trials": len(vals)})
    return rows


def histogram_bins(values, bin_width: float) -> tuple[np.ndarray, np.ndarray]:
    """Counts on [0, 1] with bins [lo, lo + w); 1.0 falls in the last bin."""
    nb = int(round(1.0 / bin_width))
    edges = np.arange(nb + 1) * bin_width
    edges[-1] = 1.0
    v = np.asarray(values, dtype=float)
    idx = np.floor(np.round(v / bin_width, 9)).astype(int)
    idx = np.clip(idx, 0, nb - 1)
    return np.bincount(idx, minlength=nb), edges


def histogram_satisfaction(config: ExperimentConfig, records: list[TrialRecord] | None = None,
                           gamma_db: float | None = None) -> list[dict]:
    """Per method, counts of the min-over-users satisfaction probability of feasible trials."""
    records = run_grid(config) if records is None else records
    g = config.gamma_db[0] if gamma_db is None else gamma_db
    rows = []
    for m in _method_names(config):
        vals = [r.min_p_hat for r in records if r.method == m and r.gamma_db == g and r.feasible and r.p_hat]
        counts, edges = histogram_bins(vals, config.bin_width)
        for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
            rows.append({"method": m, "bin_lo": round(float(lo), 12), "bin_hi": round(float(hi), 12),
                         "count": int(c)})
    return rows


def validation_rows(records: list[TrialRecord], n: int, rho: float) -> list[dict]:
    """One row per (trial, user) of validated designs; radius and pass as in ValidationReport."""
    rows = []
    for r in records:
        if not r.p_hat:
            continue
        rep = ValidationReport(np.asarray(r.p_hat), n, np.full(len(r.p_hat), rho))
        for row in rep.records(r.trial):
            rows.append({**row, "method": r.method, "gamma_db": r.gamma_db})
    return rows


def bench_runtime(config: ExperimentConfig, sizes=(3, 8), repeats: int = 5, warmup: int = 1) -> list[dict]:
    """Median and IQR of the relaxed-problem solve time per method and size (n_t = k)."""
    if warmup < 1:
        raise ValueError("at least one warm-up run is required")
    from .conic import solve

    rows = []
    for n in sizes:
        cfg = replace(config, n_t=n, k=n)
        for m in cfg.parsed_methods:
            times, prog = [], None
            for rep in range(warmup + repeats):
                inst = cfg.instance(rep, cfg.gamma_db[0])
                prog = build_rar(inst, m).build()
                sol = solve(prog, SolverOptions(tol=cfg.tol, max_iters=cfg.max_iters), cfg.backend)
                if rep >= warmup:
                    times.append(sol.solve_time)
            q1, med, q3 = np.percentile(times, [25, 50, 75])
            rows.append({"method": m.kind, "n_t": n, "k": n, "median_s": float(med), "iqr_s": float(q3 - q1),
                         "n_runs": len(times), "variables": prog.n, "rows": prog.m})
    return rows


def write_csv(path, rows: list[dict], columns: list[str] | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = columns or (list(rows[0]) if rows else [])
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
