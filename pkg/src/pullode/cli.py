"""Experiment runner: reproduces the comparison studies at desk scale.

Reads an experiment config (TOML or JSON), runs the selected propagators,
and writes plain CSV/JSON artifacts for external plotting. Every run also
writes a manifest echoing the exact config and seed, so results can be
reproduced byte-for-byte.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import toml

from . import __version__
from .gp_core import GpPosterior, KernelConfig, TrainingSet, condition, load_training_csv
from .linear_prototype import (
    CorrelatedState,
    LinearModelDist,
    analytic_moments,
    corrected_euler_step,
    corrected_flow_step,
    exact_fixed_point_var,
    iter_flow_fixed_point,
    naive_euler_fixed_point,
    naive_euler_step,
    naive_iter_flow_step,
    sample_prototype,
)
from .mc_oracle import EnsembleConfig, ensemble_stats, integrate_ode
from .moment_matching import mm_trajectory
from .pull_euler import FULL, NONE_HISTORY, pull_trajectory
from .trajectory import GaussianState, TrajectoryDistribution, TrajectoryMeta, time_grid

EXPERIMENTS = ("prototype", "nonlinear", "bifurcation", "convergence")
PROTOTYPE_METHODS = ("analytic", "naive_euler", "naive_flow", "corrected_euler",
                     "corrected_flow", "mc")
GP_METHODS = ("mm", "pull_full", "pull_none", "mc")

_DEFAULTS = {
    # (mu0, sigma0_sq, horizon, step_sizes, methods)
    "prototype": (1.0, 0.25, 10.0, (0.5, 0.1), PROTOTYPE_METHODS),
    "nonlinear": (0.6, 0.005, 8.0, (0.1, 0.05), GP_METHODS),
    "bifurcation": (0.05, 0.01, 8.0, (0.05,), ("mc", "pull_full")),
    "convergence": (0.6, 0.005, 8.0, (0.2, 0.1, 0.05, 0.025), ("pull_full", "mc")),
}

PAPER_SCALE = (5000, 150)


class ConfigError(ValueError):
    """Invalid experiment configuration; message lists offending fields."""


@dataclass(frozen=True)
class McSettings:
    n_fields: int = 500
    n_initial: int = 50
    pairing: str = "cross_product"
    grid_span: tuple[float, float] = (-4.0, 4.0)
    grid_points: int = 400
    integrator: str = "rk4"
    interpolation: str = "cubic"


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    # linear prototype parameters
    a: float = 1.0
    beta: float = 1.0
    # nonlinear dataset spec (generated unless dataset_csv is given)
    n_data: int = 9
    data_span: tuple[float, float] = (-4.0, 4.0)
    data_noise_var: float = 1e-4
    dataset_csv: str | None = None
    lengthscale: float = 1.0
    amplitude: float = 1.0
    # initial distribution and integration
    mu0: float = 0.0
    sigma0_sq: float = 0.0
    step_sizes: tuple[float, ...] = ()
    horizon: float = 0.0
    methods: tuple[str, ...] = ()
    mc: McSettings = McSettings()
    hist_bins: int = 41
    seed: int = 0
    out_dir: str = "runs"

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        """Build a fully-resolved config from a parsed file, validating fields."""
        errors = []
        data = dict(raw)
        experiment = data.get("experiment")
        if experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment: must be one of {EXPERIMENTS}, got {experiment!r}")
        mu0, sigma0_sq, horizon, steps, methods = _DEFAULTS[experiment]
        data.setdefault("mu0", mu0)
        data.setdefault("sigma0_sq", sigma0_sq)
        data.setdefault("horizon", horizon)
        data.setdefault("step_sizes", steps)
        data.setdefault("methods", methods)

        mc_raw = data.pop("mc", {})
        if isinstance(mc_raw, McSettings):
            mc = mc_raw
        else:
            try:
                mc = McSettings(**{k: tuple(v) if k == "grid_span" else v
                                   for k, v in mc_raw.items()})
            except TypeError as e:
                raise ConfigError(f"mc: {e}") from None

        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            errors.append(f"unknown fields: {sorted(unknown)}")
        data = {k: v for k, v in data.items() if k in known}
        for key in ("step_sizes", "methods", "data_span"):
            if key in data:
                data[key] = tuple(data[key])
        cfg = cls(mc=mc, **data)

        if not cfg.step_sizes or any(h <= 0 for h in cfg.step_sizes):
            errors.append(f"step_sizes: must be nonempty and positive, got {cfg.step_sizes}")
        if not cfg.methods:
            errors.append("methods: at least one method is required")
        allowed = PROTOTYPE_METHODS if cfg.experiment == "prototype" else GP_METHODS
        bad = [m for m in cfg.methods if m not in allowed]
        if bad:
            errors.append(f"methods: {bad} not valid for {cfg.experiment} (allowed: {allowed})")
        if cfg.experiment == "prototype":
            if cfg.a <= 0:
                errors.append(f"a: must be positive, got {cfg.a}")
            if cfg.beta < 0:
                errors.append(f"beta: must be nonnegative, got {cfg.beta}")
            for h in cfg.step_sizes:
                if cfg.a * h >= 2.0:
                    errors.append(
                        f"step_sizes: a*h = {cfg.a * h:g} violates the explicit Euler "
                        "stability limit a*h < 2 required for the naive fixed point"
                    )
        if cfg.experiment == "convergence" and len(cfg.step_sizes) < 3:
            errors.append("step_sizes: convergence study needs at least 3 step sizes")
        if cfg.horizon <= 0:
            errors.append(f"horizon: must be positive, got {cfg.horizon}")
        if cfg.sigma0_sq < 0:
            errors.append(f"sigma0_sq: must be nonnegative, got {cfg.sigma0_sq}")
        if cfg.data_noise_var < 0:
            errors.append(f"data_noise_var: must be nonnegative, got {cfg.data_noise_var}")
        if cfg.pairing_invalid():
            errors.append(f"mc.pairing: cross_product or one_to_one, got {cfg.mc.pairing}")
        if errors:
            raise ConfigError("; ".join(errors))
        return cfg

    def pairing_invalid(self) -> bool:
        return self.mc.pairing not in ("cross_product", "one_to_one")


def load_config_file(path) -> dict:
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".toml":
        return toml.loads(text)
    if path.suffix == ".json":
        return json.loads(text)
    raise ConfigError(f"config file must end in .toml or .json, got {path.name}")


# ---------------------------------------------------------------------------
# output writers (17 significant digits, fixed column order)
# ---------------------------------------------------------------------------


def _g17(x) -> str:
    return format(float(x), ".17g")


def write_trajectory_csv(path, dist: TrajectoryDistribution) -> None:
    with open(path, "w", newline="") as f:
        f.write("t,mean,var\n")
        for t, m, v in zip(dist.times, dist.means, dist.variances):
            f.write(f"{_g17(t)},{_g17(m)},{_g17(v)}\n")


def write_comparison_csv(path, times: np.ndarray, columns: dict[str, np.ndarray]) -> None:
    with open(path, "w", newline="") as f:
        f.write("t," + ",".join(f"std_{name}" for name in columns) + "\n")
        for i, t in enumerate(times):
            f.write(_g17(t) + "," + ",".join(_g17(col[i]) for col in columns.values()) + "\n")


def write_histogram_csv(path, edges: np.ndarray, counts: np.ndarray) -> None:
    with open(path, "w", newline="") as f:
        f.write("bin_lo,bin_hi,count\n")
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            f.write(f"{_g17(lo)},{_g17(hi)},{int(c)}\n")


def write_json(path, obj) -> None:
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


# ---------------------------------------------------------------------------
# dataset and model construction
# ---------------------------------------------------------------------------


def build_dataset(cfg: ExperimentConfig) -> TrainingSet:
    """Observations of x*cos(x): evenly spaced inputs plus seeded Gaussian noise."""
    if cfg.dataset_csv is not None:
        return load_training_csv(cfg.dataset_csv, cfg.data_noise_var)
    xs = np.linspace(cfg.data_span[0], cfg.data_span[1], cfg.n_data)
    rng = np.random.default_rng([cfg.seed, 101])
    ys = xs * np.cos(xs) + math.sqrt(cfg.data_noise_var) * rng.standard_normal(cfg.n_data)
    return TrainingSet(xs, ys, cfg.data_noise_var)


def build_gp(cfg: ExperimentConfig) -> GpPosterior:
    return condition(build_dataset(cfg), KernelConfig(cfg.lengthscale, cfg.amplitude))


def _ensemble_config(cfg: ExperimentConfig, h: float) -> EnsembleConfig:
    return EnsembleConfig(
        n_fields=cfg.mc.n_fields,
        n_initial=cfg.mc.n_initial,
        pairing=cfg.mc.pairing,
        grid_span=cfg.mc.grid_span,
        grid_points=cfg.mc.grid_points,
        integrator=cfg.mc.integrator,
        interpolation=cfg.mc.interpolation,
        h=h,
        T=cfg.horizon,
        seed=cfg.seed,
    )


# ---------------------------------------------------------------------------
# prototype propagators
# ---------------------------------------------------------------------------


def prototype_trajectory(model: LinearModelDist, x0: GaussianState, h: float, T: float,
                         method: str, mc_samples: int = 0, seed: int = 0) -> TrajectoryDistribution:
    """Run one prototype method over [0, T] on the grid of step h."""
    if method == "mc":
        return sample_prototype(model, x0, h, T, mc_samples, seed)
    times = time_grid(h, T)
    means = np.empty(times.size)
    variances = np.empty(times.size)
    means[0], variances[0] = x0.mean, x0.var
    if method == "analytic":
        for i, t in enumerate(times):
            s = analytic_moments(model, x0, float(t))
            means[i], variances[i] = s.mean, s.var
    elif method == "naive_euler":
        s = x0
        for i in range(1, times.size):
            s = naive_euler_step(model, s, h)
            means[i], variances[i] = s.mean, s.var
    elif method == "naive_flow":
        s = x0
        for i in range(1, times.size):
            s = naive_iter_flow_step(model, s, h)
            means[i], variances[i] = s.mean, s.var
    elif method == "corrected_euler":
        cs = CorrelatedState(x0)
        for i in range(1, times.size):
            cs = corrected_euler_step(model, cs, h)
            means[i], variances[i] = cs.state.mean, cs.state.var
    elif method == "corrected_flow":
        s = x0
        for i in range(1, times.size):
            s = corrected_flow_step(model, s, h, i - 1)
            means[i], variances[i] = s.mean, s.var
    else:
        raise ValueError(f"unknown prototype method {method!r}")
    return TrajectoryDistribution(times, means, variances, TrajectoryMeta(method, h))


def run_prototype(cfg: ExperimentConfig, out: Path, timings: dict) -> list[str]:
    model = LinearModelDist(cfg.a, cfg.beta)
    x0 = GaussianState(cfg.mu0, cfg.sigma0_sq)
    mc_samples = cfg.mc.n_fields * cfg.mc.n_initial
    files = []
    summary = {
        "exact_fixed_point_var": exact_fixed_point_var(model),
        "per_step_size": {},
    }
    for h in cfg.step_sizes:
        terminal = {}
        for method in cfg.methods:
            tic = time.perf_counter()
            dist = prototype_trajectory(model, x0, h, cfg.horizon, method,
                                        mc_samples=mc_samples, seed=cfg.seed)
            timings[f"{method}_h{h:g}"] = time.perf_counter() - tic
            name = f"prototype_{method}_h{h:g}.csv"
            write_trajectory_csv(out / name, dist)
            files.append(name)
            terminal[method] = float(dist.terminal.var)
        summary["per_step_size"][f"{h:g}"] = {
            "naive_euler_fixed_point": naive_euler_fixed_point(model, h),
            "iter_flow_fixed_point": iter_flow_fixed_point(model, h),
            "terminal_var": terminal,
        }
    write_json(out / "prototype_summary.json", summary)
    files.append("prototype_summary.json")
    return files


# ---------------------------------------------------------------------------
# GP experiments
# ---------------------------------------------------------------------------


def _gp_method_trajectory(gp: GpPosterior, x0: GaussianState, h: float, T: float,
                          method: str) -> TrajectoryDistribution:
    if method == "pull_full":
        return pull_trajectory(gp, x0, h, T, policy=FULL)
    if method == "pull_none":
        return pull_trajectory(gp, x0, h, T, policy=NONE_HISTORY)
    if method == "mm":
        return mm_trajectory(gp, x0, h, T)
    raise ValueError(f"unknown GP method {method!r}")


def _write_dataset(cfg: ExperimentConfig, gp: GpPosterior, out: Path, files: list) -> None:
    name = "dataset.csv"
    with open(out / name, "w", newline="") as f:
        f.write("x,y\n")
        for x, y in zip(gp.training.inputs, gp.training.outputs):
            f.write(f"{_g17(x)},{_g17(y)}\n")
    files.append(name)


def _raw_dump_sink(handle):
    def sink(field_index, x0_indices, times, block):
        for row, x0_id in zip(block, x0_indices):
            for t, x in zip(times, row):
                handle.write(f"{field_index},{int(x0_id)},{_g17(t)},{_g17(x)}\n")
    return sink


def _run_mc(cfg: ExperimentConfig, gp: GpPosterior, x0: GaussianState, h: float,
            out: Path, prefix: str, files: list, timings: dict,
            dump_raw: bool = False, terminal_collector: list | None = None):
    sinks = []
    raw_handle = None
    if dump_raw:
        raw_name = f"{prefix}_mc_raw_h{h:g}.csv"
        raw_handle = open(out / raw_name, "w", newline="")
        raw_handle.write("field_id,x0_id,t,x\n")
        sinks.append(_raw_dump_sink(raw_handle))
        files.append(raw_name)
    if terminal_collector is not None:
        sinks.append(lambda i, idx, times, block: terminal_collector.append(block[:, -1]))

    def sink(i, idx, times, block):
        for s in sinks:
            s(i, idx, times, block)

    tic = time.perf_counter()
    try:
        dist = ensemble_stats(gp, x0, _ensemble_config(cfg, h), raw_sink=sink if sinks else None)
    finally:
        if raw_handle is not None:
            raw_handle.close()
    timings[f"mc_h{h:g}"] = time.perf_counter() - tic
    name = f"{prefix}_mc_h{h:g}.csv"
    write_trajectory_csv(out / name, dist)
    files.append(name)
    return dist


def run_nonlinear(cfg: ExperimentConfig, out: Path, timings: dict,
                  dump_raw: bool = False) -> list[str]:
    gp = build_gp(cfg)
    x0 = GaussianState(cfg.mu0, cfg.sigma0_sq)
    files: list[str] = []
    _write_dataset(cfg, gp, out, files)

    h_mc = min(cfg.step_sizes)
    mc_dist = None
    if "mc" in cfg.methods:
        mc_dist = _run_mc(cfg, gp, x0, h_mc, out, "nonlinear", files, timings, dump_raw=dump_raw)

    for h in cfg.step_sizes:
        columns: dict[str, np.ndarray] = {}
        times = time_grid(h, cfg.horizon)
        if mc_dist is not None:
            columns["mc"] = np.interp(times, mc_dist.times, mc_dist.stds)
        for method in cfg.methods:
            if method == "mc":
                continue
            tic = time.perf_counter()
            dist = _gp_method_trajectory(gp, x0, h, cfg.horizon, method)
            timings[f"{method}_h{h:g}"] = time.perf_counter() - tic
            name = f"nonlinear_{method}_h{h:g}.csv"
            write_trajectory_csv(out / name, dist)
            files.append(name)
            columns[method] = dist.stds
        if columns:
            name = f"nonlinear_comparison_h{h:g}.csv"
            write_comparison_csv(out / name, times, columns)
            files.append(name)
    return files


def run_bifurcation(cfg: ExperimentConfig, out: Path, timings: dict,
                    dump_raw: bool = False) -> list[str]:
    gp = build_gp(cfg)
    x0 = GaussianState(cfg.mu0, cfg.sigma0_sq)
    files: list[str] = []
    _write_dataset(cfg, gp, out, files)

    h = min(cfg.step_sizes)
    terminals: list[np.ndarray] = []
    if "mc" in cfg.methods:
        _run_mc(cfg, gp, x0, h, out, "bifurcation", files, timings,
                dump_raw=dump_raw, terminal_collector=terminals)
        terminal_states = np.concatenate(terminals)
        counts, edges = np.histogram(terminal_states, bins=cfg.hist_bins)
        write_histogram_csv(out / "bifurcation_terminal_histogram.csv", edges, counts)
        files.append("bifurcation_terminal_histogram.csv")

    for method in cfg.methods:
        if method == "mc":
            continue
        tic = time.perf_counter()
        dist = _gp_method_trajectory(gp, x0, h, cfg.horizon, method)
        timings[f"{method}_h{h:g}"] = time.perf_counter() - tic
        name = f"bifurcation_{method}_h{h:g}.csv"
        write_trajectory_csv(out / name, dist)
        files.append(name)
    return files


def reference_mean_path(gp: GpPosterior, mu0: float, h_ref: float, T: float) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic fine-step RK4 path on the posterior mean."""
    times = time_grid(h_ref, T)
    states = integrate_ode(gp.posterior_mean, mu0, "rk4", h_ref, T)
    return times, states


def run_convergence(cfg: ExperimentConfig, out: Path, timings: dict) -> list[str]:
    gp = build_gp(cfg)
    x0 = GaussianState(cfg.mu0, cfg.sigma0_sq)
    files: list[str] = []
    _write_dataset(cfg, gp, out, files)

    h_mc = min(cfg.step_sizes)
    mc_dist = _run_mc(cfg, gp, x0, h_mc, out, "convergence", files, timings)

    h_ref = min(cfg.step_sizes) / 10.0
    ref_times, ref_states = reference_mean_path(gp, cfg.mu0, h_ref, cfg.horizon)

    rows = []
    for h in sorted(cfg.step_sizes, reverse=True):
        tic = time.perf_counter()
        dist = pull_trajectory(gp, x0, h, cfg.horizon, policy=FULL)
        timings[f"pull_full_h{h:g}"] = time.perf_counter() - tic
        name = f"convergence_pull_full_h{h:g}.csv"
        write_trajectory_csv(out / name, dist)
        files.append(name)
        idx = np.rint(dist.times / h_ref).astype(int)
        idx = np.clip(idx, 0, ref_times.size - 1)
        mean_error = float(np.max(np.abs(dist.means - ref_states[idx])))
        var_error = abs(dist.terminal.var - mc_dist.terminal.var) / mc_dist.terminal.var
        rows.append((h, mean_error, var_error))

    with open(out / "convergence_errors.csv", "w", newline="") as f:
        f.write("h,mean_error_vs_reference,var_error_vs_mc\n")
        for h, me, ve in rows:
            f.write(f"{_g17(h)},{_g17(me)},{_g17(ve)}\n")
    files.append("convergence_errors.csv")
    return files


# ---------------------------------------------------------------------------
# top-level runner
# ---------------------------------------------------------------------------


def run(cfg: ExperimentConfig, dump_raw: bool = False) -> dict:
    """Execute one experiment and write all artifacts plus a manifest.

    Returns the manifest dictionary. The 'wall_times' section varies between
    runs; everything else, and every output file, is reproducible byte-for-byte
    from the config.
    """
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    timings: dict[str, float] = {}
    if cfg.experiment == "prototype":
        files = run_prototype(cfg, out, timings)
    elif cfg.experiment == "nonlinear":
        files = run_nonlinear(cfg, out, timings, dump_raw=dump_raw)
    elif cfg.experiment == "bifurcation":
        files = run_bifurcation(cfg, out, timings, dump_raw=dump_raw)
    else:
        files = run_convergence(cfg, out, timings)
    manifest = {
        "config": dataclasses.asdict(cfg),
        "version": f"pullode {__version__}",
        "outputs": sorted(files),
        "wall_times": {k: round(v, 6) for k, v in sorted(timings.items())},
    }
    write_json(out / "manifest.json", manifest)
    return manifest


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="pullode",
        description="Trajectory-distribution experiments for GP vector-field ODEs",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    runp = sub.add_parser("run", help="run an experiment from a TOML or JSON config")
    runp.add_argument("config", help="path to the experiment config (.toml or .json)")
    runp.add_argument("--seed", type=int, default=None, help="override the config seed")
    runp.add_argument("--out-dir", default=None, help="override the output directory")
    runp.add_argument("--paper-scale", action="store_true",
                      help="use the full 5000x150 sampling ensemble")
    runp.add_argument("--dump-raw", action="store_true",
                      help="dump raw sampled trajectories to CSV")
    args = parser.parse_args(argv)

    raw = load_config_file(args.config)
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.out_dir is not None:
        raw["out_dir"] = args.out_dir
    if args.paper_scale:
        mc = dict(raw.get("mc", {}))
        mc["n_fields"], mc["n_initial"] = PAPER_SCALE
        raw["mc"] = mc
    try:
        cfg = ExperimentConfig.from_dict(raw)
    except ConfigError as e:
        parser.error(str(e))
    manifest = run(cfg, dump_raw=args.dump_raw)
    for name in manifest["outputs"]:
        print(f"wrote {Path(cfg.out_dir) / name}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
