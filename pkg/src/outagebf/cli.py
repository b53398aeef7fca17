"""Command-line front end: ``outagebf {solve,validate,experiment,bisect,bench}``.

Settings come from, in increasing precedence: built-in defaults, a
``--preset``, a ``--config`` file (JSON, or YAML when PyYAML is present)
and command-line flags. Config files use the long flag names with dashes
turned into underscores; unknown keys are rejected. A run manifest written
by a previous invocation is also accepted as a config file, which reruns it.

SINR targets are given in dB; outage caps, noise powers and error
variances are linear.

Every run writes ``manifest.json`` (command, resolved config, versions,
wall time) next to its results. Exit status: 0 success, 2 infeasible
outcome, 1 error.

File layout: instance and beamformer files are JSON; complex vectors are
stored as interleaved float lists ``[re0, im0, re1, im1, ...]`` (see
:mod:`outagebf.model`), written with full double precision.
"""

from __future__ import annotations

import argparse
import json
import math
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .conic import SolverOptions
from .experiment import (
    FAILED,
    INFEASIBLE,
    ExperimentConfig,
    PipelineOptions,
    bench_runtime,
    bisection_refine,
    feasibility_sweep,
    histogram_satisfaction,
    power_sweep,
    run_grid,
    run_pipeline,
    validate_mc,
    validation_rows,
    write_csv,
)
from .model import BeamformerSet, BeamformingInstance, GaussianCov, UniformIID, generate_channels, make_instance
from .restriction import Method, build_rar

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE = 0, 1, 2

# key -> (default, help). Units are part of the help text.
OPTIONS = {
    "seed": (0, "master random seed"),
    "out": ("results", "output directory"),
    "backend": ("admm", "conic solver backend (admm is bundled; clarabel if installed)"),
    "tol": (1e-7, "solver relative tolerance"),
    "max_iters": (50_000, "solver iteration cap"),
    "mc_samples": (10_000, "Monte Carlo error draws per validation"),
    "rounds": (100, "Gaussian randomization rounds"),
    "instance": (None, "instance JSON file (overrides the generator settings)"),
    "nt": (3, "transmit antennas N_t"),
    "k": (3, "users K"),
    "trial": (0, "channel draw index used by the generator"),
    "gamma_db": ([11.0], "SINR target(s) in dB"),
    "rho": (0.1, "outage cap, linear in (0, 1]"),
    "sigma2": (0.1, "noise power, linear"),
    "error": ("gaussian", "error model: gaussian or uniform"),
    "sigma_e2": (0.002, "Gaussian error variance per antenna, linear"),
    "correlation": (0.0, "Gaussian error correlation c, [C]_mn = sigma_e2 c^|m-n|"),
    "epsilon": (0.02, "uniform error half-width for real and imaginary parts, linear"),
    "method": (None, "restriction: sphere|bernstein|decomp-gaussian|decomp-bounded|nonrobust (or I..IV)"),
    "beamformers": (None, "beamformer JSON file to validate"),
    "preset": (None, "experiment preset: fig1 fig2 fig4a fig4c fig5 fig6"),
    "trials": (100, "channel realizations"),
    "pickup_gamma_db": (None, "gamma in dB fixing the common-feasible set (default: largest)"),
    "bin_width": (0.05, "histogram bin width, probability units"),
    "workers": (1, "worker processes"),
    "bisection": (False, "refine robust methods by bisection"),
    "iters": (6, "bisection steps"),
    "rho_max": (0.9, "loosest effective rho tried by bisection (methods II-IV)"),
    "sizes": ([3, 8], "problem sizes N_t = K to benchmark"),
    "repeats": (5, "timed runs per method and size"),
    "warmup": (1, "untimed warm-up runs"),
    "plot": (False, "also write SVG plots"),
}

GENERATOR = ["instance", "nt", "k", "trial", "gamma_db", "rho", "sigma2", "error", "sigma_e2", "correlation",
             "epsilon"]
SOLVER = ["backend", "tol", "max_iters"]
COMMANDS = {
    "solve": ["seed", "out", *SOLVER, "mc_samples", "rounds", *GENERATOR, "method"],
    "validate": ["seed", "out", "mc_samples", *GENERATOR, "beamformers"],
    "experiment": ["seed", "out", *SOLVER, "mc_samples", "rounds", "preset", "nt", "k", "gamma_db", "rho",
                   "sigma2", "error", "sigma_e2", "correlation", "epsilon", "method", "trials",
                   "pickup_gamma_db", "bin_width", "workers", "bisection", "iters", "rho_max", "plot"],
    "bisect": ["seed", "out", *SOLVER, "mc_samples", "rounds", *GENERATOR, "method", "iters", "rho_max"],
    "bench": ["seed", "out", *SOLVER, "nt", "k", "gamma_db", "rho", "sigma2", "error", "sigma_e2", "correlation",
              "epsilon", "method", "sizes", "repeats", "warmup"],
}
GAUSSIAN_METHODS = ["sphere", "bernstein", "decomp_gaussian", "nonrobust"]

PRESETS = {
    "fig1": dict(nt=3, k=3, gamma_db=[11.0], rho=0.1, sigma_e2=0.002, method=GAUSSIAN_METHODS, trials=100),
    "fig2": dict(nt=3, k=3, gamma_db=[3.0, 7.0, 11.0, 15.0], rho=0.1, sigma_e2=0.002, method=GAUSSIAN_METHODS,
                 trials=100, pickup_gamma_db=11.0, mc_samples=5_000),
    "fig4a": dict(nt=8, k=8, gamma_db=[1.0, 3.0, 5.0, 7.0], rho=0.01, sigma_e2=0.002, correlation=0.9,
                  method=GAUSSIAN_METHODS, trials=20, pickup_gamma_db=7.0, mc_samples=5_000),
    "fig4c": dict(nt=8, k=6, gamma_db=[5.0, 9.0, 13.0], rho=0.01, sigma_e2=0.01, correlation=0.9,
                  method=GAUSSIAN_METHODS, trials=20, pickup_gamma_db=13.0, mc_samples=5_000),
    "fig5": dict(nt=5, k=5, gamma_db=[3.0, 6.0, 9.0], rho=0.1, sigma_e2=0.002,
                 method=["sphere", "bernstein", "decomp_gaussian"], trials=20, pickup_gamma_db=9.0,
                 bisection=True),
    "fig6": dict(nt=3, k=3, gamma_db=[1.0, 3.0, 5.0, 7.0], rho=0.1, error="uniform", epsilon=0.02,
                 method=["decomp_bounded", "nonrobust"], trials=100, pickup_gamma_db=7.0, mc_samples=5_000),
}


class UsageError(Exception):
    pass


# -- parsing -------------------------------------------------------------------------------------

def _add(p: argparse.ArgumentParser, key: str):
    default, text = OPTIONS[key]
    flag = "--" + key.replace("_", "-")
    shown = "none" if default is None else default
    kw = dict(dest=key, default=argparse.SUPPRESS, help=f"{text} [default: {shown}]")
    if isinstance(default, bool):
        p.add_argument(flag, action="store_true", **kw)
    elif key == "method":
        p.add_argument(flag, action="append", **kw)
    elif key in ("gamma_db",):
        p.add_argument(flag, type=float, nargs="+", **kw)
    elif key == "sizes":
        p.add_argument(flag, type=int, nargs="+", **kw)
    elif key == "preset":
        p.add_argument(flag, choices=sorted(PRESETS), **kw)
    elif key == "error":
        p.add_argument(flag, choices=["gaussian", "uniform"], **kw)
    else:
        typ = type(default) if default is not None and not isinstance(default, list) else (
            float if key == "pickup_gamma_db" else str)
        p.add_argument(flag, type=typ, **kw)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="outagebf",
        description="Outage-constrained robust downlink beamforming: solve, validate and run experiments.",
        epilog="Units: --gamma-db in dB; every other quantity is linear. Exit status 0 ok, 2 infeasible, 1 error.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="{solve,validate,experiment,bisect,bench}")
    helps = {
        "solve": "design beamformers for one instance",
        "validate": "Monte Carlo check of saved beamformers",
        "experiment": "run a feasibility / power / histogram sweep",
        "bisect": "refine one design by bisection on its conservatism knob",
        "bench": "time the relaxed-problem solves",
    }
    for name, keys in COMMANDS.items():
        sp = sub.add_parser(name, help=helps[name], description=helps[name])
        sp.add_argument("--config", dest="config", default=argparse.SUPPRESS,
                        help="JSON/YAML file of settings (flag names with underscores), or a run manifest")
        for key in keys:
            _add(sp, key)
    return parser


def _read_config_file(path: str) -> dict:
    text = Path(path).read_text()
    if path.endswith((".yaml", ".yml")):
        import yaml

        data = yaml.safe_load(text)
    else:
        data = json.loads(text)
    if not isinstance(data, dict):
        raise UsageError(f"config file {path} must hold a mapping")
    if "config" in data and "command" in data:  # a run manifest
        data = data["config"]
    return data


def parse_config(argv: list[str] | None = None) -> tuple[str, dict]:
    """Resolve (command, settings) with defaults < preset < config file < flags."""
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as e:
        if not e.code:
            raise  # --help or --version
        raise UsageError("invalid arguments") from None
    if ns.command is None:
        parser.print_usage(sys.stderr)
        raise UsageError("missing subcommand")
    command = ns.command
    flags = {k: v for k, v in vars(ns).items() if k not in ("command", "config")}
    allowed = set(COMMANDS[command])
    file_cfg = {}
    if hasattr(ns, "config"):
        file_cfg = _read_config_file(ns.config)
        unknown = sorted(set(file_cfg) - allowed)
        if unknown:
            raise UsageError(f"unknown config key {unknown[0]!r} for '{command}'")
    cfg = {k: OPTIONS[k][0] for k in COMMANDS[command]}
    preset = flags.get("preset", file_cfg.get("preset"))
    if preset is not None:
        if preset not in PRESETS:
            raise UsageError(f"unknown preset {preset!r}")
        cfg.update(PRESETS[preset])
    cfg.update(file_cfg)
    cfg.update(flags)
    if isinstance(cfg.get("method"), str):
        cfg["method"] = [cfg["method"]]
    if "gamma_db" in cfg:
        cfg["gamma_db"] = [float(g) for g in np.atleast_1d(cfg["gamma_db"])]
    _check(command, cfg)
    return command, cfg


def _check(command: str, cfg: dict):
    methods = cfg.get("method")
    if command in ("solve", "bisect"):
        if not methods or len(methods) != 1:
            raise UsageError(f"'{command}' needs exactly one --method")
        if len(cfg["gamma_db"]) != 1:
            raise UsageError(f"'{command}' takes a single --gamma-db value")
    if command == "validate" and not cfg.get("beamformers"):
        raise UsageError("'validate' needs --beamformers")
    if methods:
        for m in methods:
            try:
                Method.parse(m)
            except ValueError as e:
                raise UsageError(str(e)) from None
    if "rho" in cfg and not 0.0 < cfg["rho"] <= 1.0:
        raise UsageError("--rho must lie in (0, 1]")


# -- helpers -------------------------------------------------------------------------------------

def _instance(cfg: dict) -> BeamformingInstance:
    if cfg.get("instance"):
        return BeamformingInstance.load(cfg["instance"])
    if cfg["error"] == "uniform":
        model = UniformIID.common(cfg["epsilon"], cfg["k"])
    elif cfg["correlation"]:
        model = GaussianCov.correlated(cfg["sigma_e2"], cfg["correlation"], cfg["nt"], cfg["k"])
    else:
        model = GaussianCov.iid(cfg["sigma_e2"], cfg["nt"], cfg["k"])
    h = generate_channels(cfg["nt"], cfg["k"], cfg["seed"], 1, cfg["trial"])
    return make_instance(h, cfg["gamma_db"][0], cfg["rho"], model, cfg["sigma2"])


def _solver(cfg: dict) -> SolverOptions:
    return SolverOptions(tol=cfg["tol"], max_iters=cfg["max_iters"])


def _pipeline_options(cfg: dict) -> PipelineOptions:
    return PipelineOptions(rounds=cfg["rounds"], mc_samples=cfg["mc_samples"], seed=cfg["seed"],
                           solver=_solver(cfg), backend=cfg["backend"])


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else repr(v)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=1, sort_keys=True) + "\n")


def _manifest(out: Path, command: str, cfg: dict, started: float, status: str, artifacts: list[str]):
    _write_json(out / "manifest.json", {
        "command": command,
        "config": cfg,
        "status": status,
        "artifacts": sorted(artifacts),
        "wall_time_s": round(time.perf_counter() - started, 3),
        "versions": {"outagebf": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
    })


def _pipeline_summary(res) -> dict:
    d = {"status": res.status, "stage": res.stage, "method": res.method.kind, "path": res.path,
         "total_power": res.total_power, "timings_s": res.timings}
    if res.rar is not None and res.rar.feasible:
        d["relaxed_objective"] = res.rar.objective
        d["rank_ratios"] = res.rar.rank_ratios
    if res.validation is not None:
        d["validation"] = res.validation.to_dict()
    return d


# -- subcommands ---------------------------------------------------------------------------------

def cmd_solve(cfg, out: Path) -> tuple[int, list[str]]:
    inst = _instance(cfg)
    method = Method.parse(cfg["method"][0])
    inst.save(out / "instance.json")
    res = run_pipeline(inst, method, _pipeline_options(cfg))
    arts = ["instance.json", "result.json"]
    _write_json(out / "result.json", _pipeline_summary(res))
    if res.beamformers is not None:
        res.beamformers.save(out / "beamformers.json")
        arts.append("beamformers.json")
    if res.status == FAILED:
        build_rar(inst, method).build().dump(out / "diagnostic_program.txt")
        arts.append("diagnostic_program.txt")
        print(f"solver failure ({res.stage}); program dumped to {out / 'diagnostic_program.txt'}", file=sys.stderr)
        return EXIT_ERROR, arts
    print(f"{method.label}: {res.status}" + (f", total power {res.total_power:.6g} via {res.path}"
                                             if res.feasible else f" at {res.stage}"))
    return (EXIT_OK if res.feasible else EXIT_INFEASIBLE), arts


def cmd_validate(cfg, out: Path) -> tuple[int, list[str]]:
    inst = _instance(cfg)
    bf = BeamformerSet.load(cfg["beamformers"])
    if bf.vectors.shape != (inst.k, inst.n_t):
        raise UsageError("beamformer file does not match the instance dimensions")
    rep = validate_mc(bf, inst, cfg["mc_samples"], cfg["seed"], (4,))
    _write_json(out / "validation.json", rep.to_dict())
    write_csv(out / "validation.csv", rep.records(cfg["trial"]), ["trial", "user", "p_hat", "radius", "pass"])
    for i, (p, r) in enumerate(zip(rep.p_hat, rep.radius)):
        print(f"user {i}: p_hat = {p:.4f} +- {r:.4f}")
    return EXIT_OK, ["validation.json", "validation.csv"]


def _experiment_config(cfg) -> ExperimentConfig:
    return ExperimentConfig(
        n_t=cfg["nt"], k=cfg["k"], sigma2=cfg["sigma2"], gamma_db=tuple(cfg["gamma_db"]),
        methods=tuple(Method.parse(m).kind for m in (cfg["method"] or GAUSSIAN_METHODS)),
        rho=cfg["rho"], error=cfg["error"], sigma_e2=cfg["sigma_e2"], correlation=cfg["correlation"],
        epsilon=cfg["epsilon"], trials=cfg.get("trials", 1), mc_samples=cfg.get("mc_samples", 0),
        seed=cfg["seed"], rounds=cfg.get("rounds", 100), pickup_gamma_db=cfg.get("pickup_gamma_db"),
        bisection=cfg.get("bisection", False), bisection_iters=cfg.get("iters", 6),
        rho_max=cfg.get("rho_max", 0.9), bin_width=cfg.get("bin_width", 0.05), workers=cfg.get("workers", 1),
        backend=cfg["backend"], tol=cfg["tol"], max_iters=cfg["max_iters"])


def cmd_experiment(cfg, out: Path) -> tuple[int, list[str]]:
    ec = _experiment_config(cfg)
    records = run_grid(ec)
    sweep_cols = ["method", "gamma_db", "value", "n_trials"]
    feas = feasibility_sweep(ec, records)
    power = power_sweep(ec, records)
    write_csv(out / "feasibility.csv", feas, sweep_cols)
    write_csv(out / "power.csv", power, sweep_cols)
    arts = ["feasibility.csv", "power.csv", "records.json"]
    if ec.mc_samples:
        hist = []
        for g in ec.gamma_db:
            hist += [{**r, "gamma_db": g} for r in histogram_satisfaction(ec, records, g)]
        write_csv(out / "histogram.csv", hist, ["method", "gamma_db", "bin_lo", "bin_hi", "count"])
        write_csv(out / "validation.csv", validation_rows(records, ec.mc_samples, ec.rho),
                  ["trial", "method", "gamma_db", "user", "p_hat", "radius", "pass"])
        arts += ["histogram.csv", "validation.csv"]
    _write_json(out / "records.json", [r.__dict__ for r in records])
    if cfg.get("plot"):
        arts += _plots(out, ec, feas, power, records)
    for row in feas:
        print(f"{row['method']:16s} {row['gamma_db']:6.1f} dB  feasible {row['value']:.2f}")
    return EXIT_OK, arts


def cmd_bisect(cfg, out: Path) -> tuple[int, list[str]]:
    inst = _instance(cfg)
    method = Method.parse(cfg["method"][0])
    inst.save(out / "instance.json")
    b = bisection_refine(inst, method, cfg["iters"], _pipeline_options(cfg), cfg["rho_max"])
    summary = {"nominal": _pipeline_summary(b.nominal), "refined": _pipeline_summary(b.refined),
               "knob_nominal": b.knob_nominal, "knob": b.knob, "nominal_failed": b.nominal_failed,
               "boundary": b.boundary, "history": [list(h) for h in b.history]}
    _write_json(out / "bisect.json", summary)
    arts = ["instance.json", "bisect.json"]
    if b.refined.beamformers is not None:
        b.refined.beamformers.save(out / "beamformers.json")
        arts.append("beamformers.json")
    if not b.nominal.feasible:
        print(f"{method.label}: nominal design {b.nominal.status}")
        return (EXIT_ERROR if b.nominal.status == FAILED else EXIT_INFEASIBLE), arts
    print(f"{method.label}: power {b.nominal.total_power:.6g} -> {b.refined.total_power:.6g} "
          f"(knob {b.knob_nominal:.4g} -> {b.knob:.4g})")
    return EXIT_OK, arts


def cmd_bench(cfg, out: Path) -> tuple[int, list[str]]:
    cfg = {**cfg, "trials": 1, "mc_samples": 0}
    ec = _experiment_config({**cfg, "method": cfg["method"] or ["sphere", "bernstein", "decomp_gaussian"]})
    rows = bench_runtime(ec, cfg["sizes"], cfg["repeats"], cfg["warmup"])
    write_csv(out / "runtime.csv", rows, ["method", "n_t", "k", "median_s", "iqr_s", "n_runs", "variables", "rows"])
    for r in rows:
        print(f"{r['method']:16s} N_t=K={r['n_t']}  median {r['median_s']:.3f}s  IQR {r['iqr_s']:.3f}s")
    return EXIT_OK, ["runtime.csv"]


def _plots(out: Path, ec: ExperimentConfig, feas, power, records) -> list[str]:
    import matplotlib

    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    names = []
    for rows, fname, ylabel, tr in ((feas, "feasibility.svg", "feasibility rate", lambda v: v),
                                    (power, "power.svg", "average total power (dB)",
                                     lambda v: 10 * np.log10(v))):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for m in ec.methods:
            pts = [(r["gamma_db"], tr(r["value"])) for r in rows if r["method"] == m and r["value"] == r["value"]]
            if pts:
                ax.plot(*zip(*pts), marker="o", label=m)
        ax.set_xlabel("SINR target (dB)")
        ax.set_ylabel(ylabel)
        ax.legend()
        fig.tight_layout()
        fig.savefig(out / fname, metadata={"Date": None})
        plt.close(fig)
        names.append(fname)
    if ec.mc_samples:
        fig, ax = plt.subplots(figsize=(5, 3.5))
        g = ec.gamma_db[0]
        for m in ec.methods:
            vals = [r.min_p_hat for r in records if r.method == m and r.gamma_db == g and r.p_hat]
            if vals:
                ax.hist(vals, bins=np.linspace(0, 1, int(round(1 / ec.bin_width)) + 1), alpha=0.5, label=m)
        ax.set_xlabel("min-user satisfaction probability")
        ax.set_ylabel("trials")
        ax.legend()
        fig.tight_layout()
        fig.savefig(out / "histogram.svg", metadata={"Date": None})
        plt.close(fig)
        names.append("histogram.svg")
    return names


HANDLERS = {"solve": cmd_solve, "validate": cmd_validate, "experiment": cmd_experiment,
            "bisect": cmd_bisect, "bench": cmd_bench}


def run(command: str, cfg: dict) -> int:
    started = time.perf_counter()
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    code, arts = HANDLERS[command](cfg, out)
    status = {EXIT_OK: "ok", EXIT_INFEASIBLE: INFEASIBLE, EXIT_ERROR: "error"}[code]
    _manifest(out, command, cfg, started, status, arts)
    return code


def main(argv: list[str] | None = None) -> int:
    try:
        command, cfg = parse_config(argv)
    except UsageError as e:
        print(f"outagebf: error: {e}", file=sys.stderr)
        return EXIT_ERROR
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)
    try:
        return run(command, cfg)
    except (UsageError, ValueError, OSError) as e:
        print(f"outagebf: error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
