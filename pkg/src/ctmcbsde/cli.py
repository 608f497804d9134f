"""Command-line experiment runner.

Experiments are described by a YAML file (or the name of a packaged preset)::

    problem: bs_linear        # bs_linear | bs_nonlinear | heston_sabr | hyphyp | sabr | basket
    params: {sigma: 0.2}      # model parameter overrides
    grid: {half_count: 1000, g: 50}   # builder keywords, or {axes: [...]}
    scheme: [hochost4]
    n_steps: [100, 200]
    krylov_m: 100
    probes: [[100.0]]
    oracle: auto              # auto | none
    window: [[80, 120]]       # per-axis (lo, hi) or null
    sparse: {q: [7, 8], g: 5}
    lsmc: {n_paths: 262144, n_steps: 9, basis_degree: 9, seed: 0, n_runs: 20}
    output: results.csv

Exit status is 0 on success, 2 on configuration errors and 3 on numerical
failures.
"""

from __future__ import annotations

import csv
import io
import os
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

import click
import numpy as np
import yaml
from threadpoolctl import threadpool_limits

from . import problems as P
from .generator import check_structural_condition, check_validity
from .grid import TensorGrid, concat_grids, tavella_randall_grid, uniform_grid
from .integrators import SolverError, solve_backward, tableau
from .montecarlo import LSMCConfig, lsmc_runs, runs_csv_text, write_runs_csv
from .sparsegrid import count_points, evaluate_combined, interpolate_many, solve_combination

EXIT_CONFIG = 2
EXIT_NUMERIC = 3
THREADS_ENV = "CTMCBSDE_THREADS"
SOLVE_HEADER = ["scheme", "N_t", "probe", "value", "abs_error", "sup_error_window", "wall_time"]
SPARSE_HEADER = ["scheme", "N_t", "q", "points", "probe", "value", "abs_error", "sup_error_window", "wall_time"]

_BUILDERS = {
    "bs_linear": P.bs_linear,
    "bs_nonlinear": P.bs_nonlinear,
    "heston_sabr": P.heston_sabr_put,
    "hyphyp": P.hyphyp_combination,
    "sabr": P.sabr_call,
    "basket": P.basket_heston_sabr,
}
_SPARSE_FAMILIES = {"sabr": P.sabr_axis_families, "basket": P.basket_axis_families}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    problem: str
    params: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)
    scheme: list = field(default_factory=lambda: ["hochost4"])
    n_steps: list = field(default_factory=lambda: [100])
    krylov_m: int = 100
    probes: list | None = None
    oracle: str = "auto"
    window: list | None = None
    sparse: dict | None = None
    lsmc: dict | None = None
    output: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


_LSMC_KEYS = {"n_paths", "n_steps", "basis_degree", "seed", "n_runs", "x0"}
_SPARSE_KEYS = {"q", "g"}
_AXIS_KEYS = {"kind", "left", "center", "right", "half_count", "g1", "g2", "parts"}


def _where(lines: dict, key: str) -> str:
    return f" (line {lines[key]})" if key in lines else ""


def _as_list(value, name, lines):
    if isinstance(value, (list, tuple)):
        return list(value)
    if value is None:
        raise ConfigError(f"{name}: must not be empty{_where(lines, name)}")
    return [value]


def _positive_ints(values, name, lines):
    out = []
    for v in values:
        if isinstance(v, bool) or not isinstance(v, int) or v < 1:
            raise ConfigError(f"{name}: expected positive integers, got {v!r}{_where(lines, name)}")
        out.append(v)
    if not out:
        raise ConfigError(f"{name}: must not be empty{_where(lines, name)}")
    return out


def _key_lines(text: str) -> dict:
    try:
        node = yaml.compose(text)
    except yaml.YAMLError:
        return {}
    if not isinstance(node, yaml.MappingNode):
        return {}
    return {k.value: k.start_mark.line + 1 for k, _ in node.value}


def parse_config(data: dict, lines: dict | None = None) -> ExperimentConfig:
    """Validate a raw mapping; unknown keys and malformed values raise :class:`ConfigError`."""
    lines = lines or {}
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping")
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]!r}{_where(lines, unknown[0])}")
    if "problem" not in data:
        raise ConfigError("missing required key 'problem'")
    d = dict(data)
    if d["problem"] not in _BUILDERS:
        raise ConfigError(f"problem: unknown problem {d['problem']!r}{_where(lines, 'problem')}")
    for key in ("params", "grid"):
        if d.get(key) is None:
            d[key] = {}
        if not isinstance(d[key], dict):
            raise ConfigError(f"{key}: must be a mapping{_where(lines, key)}")
    for name, value in d["params"].items():
        flat = value if isinstance(value, (list, tuple)) else [value]
        flat = [c for v in flat for c in (v if isinstance(v, (list, tuple)) else [v])]
        if any(isinstance(c, bool) or not isinstance(c, (int, float)) for c in flat):
            raise ConfigError(
                f"params.{name}: expected a number, got {value!r} "
                f"(write exponents with a sign, e.g. 1.0e+3){_where(lines, 'params')}"
            )
    if "scheme" in d:
        names = _as_list(d["scheme"], "scheme", lines)
        if not names:
            raise ConfigError(f"scheme: must not be empty{_where(lines, 'scheme')}")
        try:
            d["scheme"] = [tableau(str(s)).name for s in names]
        except ValueError as exc:
            raise ConfigError(f"scheme: {exc}{_where(lines, 'scheme')}") from exc
    if "n_steps" in d:
        d["n_steps"] = _positive_ints(_as_list(d["n_steps"], "n_steps", lines), "n_steps", lines)
    if "krylov_m" in d:
        d["krylov_m"] = _positive_ints([d["krylov_m"]], "krylov_m", lines)[0]
    if d.get("oracle", "auto") not in ("auto", "none"):
        raise ConfigError(f"oracle: expected 'auto' or 'none'{_where(lines, 'oracle')}")
    if d.get("probes") is not None:
        try:
            d["probes"] = [[float(c) for c in _as_list(p, "probes", lines)] for p in d["probes"]]
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"probes: {exc}{_where(lines, 'probes')}") from exc
    if d.get("window") is not None:
        d["window"] = [None if w is None else [float(w[0]), float(w[1])] for w in d["window"]]
    for key, allowed in (("sparse", _SPARSE_KEYS), ("lsmc", _LSMC_KEYS)):
        block = d.get(key)
        if block is None:
            continue
        if not isinstance(block, dict):
            raise ConfigError(f"{key}: must be a mapping{_where(lines, key)}")
        d[key] = block = dict(block)
        extra = sorted(set(block) - allowed)
        if extra:
            raise ConfigError(f"{key}.{extra[0]}: unknown key{_where(lines, key)}")
    if d.get("sparse") is not None:
        if d["problem"] not in _SPARSE_FAMILIES:
            raise ConfigError(f"sparse: no level families for problem {d['problem']!r}{_where(lines, 'sparse')}")
        d["sparse"]["q"] = _positive_ints(_as_list(d["sparse"].get("q"), "sparse.q", lines), "sparse.q", lines)
    if d.get("lsmc") is not None:
        blk = d["lsmc"]
        missing = sorted({"n_paths", "n_steps", "basis_degree"} - set(blk))
        if missing:
            raise ConfigError(f"lsmc.{missing[0]}: required{_where(lines, 'lsmc')}")
        try:
            LSMCConfig(blk["n_paths"], blk["n_steps"], blk["basis_degree"], blk.get("seed", 0))
        except ValueError as exc:
            raise ConfigError(f"lsmc: {exc}{_where(lines, 'lsmc')}") from exc
        _positive_ints([blk.get("n_runs", 20)], "lsmc.n_runs", lines)
    return ExperimentConfig(**d)


def load_config(source: str) -> ExperimentConfig:
    """Read a YAML file, or a packaged preset when ``source`` names one."""
    path = Path(source)
    if not path.exists():
        presets = preset_names()
        if source not in presets:
            raise ConfigError(f"no such file or preset: {source}")
        text = _preset_text(source)
    else:
        text = path.read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}") from exc
    return parse_config(data, _key_lines(text))


def preset_names() -> list:
    root = resources.files("ctmcbsde") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def _preset_text(name: str) -> str:
    return (resources.files("ctmcbsde") / "presets" / f"{name}.yaml").read_text()


def _axis(spec: dict):
    extra = sorted(set(spec) - _AXIS_KEYS)
    if extra:
        raise ConfigError(f"grid.axes: unknown key {extra[0]!r}")
    kind = spec.get("kind")
    try:
        if kind == "concat":
            parts = [_axis(p) for p in spec["parts"]]
            out = parts[0]
            for p in parts[1:]:
                out = concat_grids(out, p)
            return out
        bounds = (spec["left"], spec["center"], spec["right"], spec["half_count"])
        if kind == "uniform":
            return uniform_grid(*bounds)
        if kind == "tr":
            return tavella_randall_grid(*bounds, spec.get("g1", 1.0), spec.get("g2", 1.0))
    except KeyError as exc:
        raise ConfigError(f"grid.axes: missing {exc.args[0]!r}") from exc
    raise ConfigError(f"grid.axes: unknown kind {kind!r}")


def build_setup(cfg: ExperimentConfig) -> P.Setup:
    kwargs = dict(cfg.grid)
    if "axes" in kwargs:
        kwargs = {"grid": TensorGrid(tuple(_axis(a) for a in kwargs.pop("axes"))), **kwargs}
    try:
        return _BUILDERS[cfg.problem](**kwargs, **cfg.params)
    except TypeError as exc:
        raise ConfigError(f"grid/params: {exc}") from exc


def _probe_label(p) -> str:
    return "(" + ";".join(f"{c:g}" for c in p) + ")"


def _fmt(x) -> str:
    return "" if x is None else f"{x:.10g}"


def _rows_to_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _emit(text: str, output: str | None) -> None:
    if output:
        Path(output).write_text(text)
    else:
        click.echo(text, nl=False)


def _window_of(cfg, grid):
    if cfg.window is None:
        return None
    if len(cfg.window) != grid.ndim:
        raise ConfigError(f"window: needs {grid.ndim} intervals")
    return cfg.window


def run_solve(cfg: ExperimentConfig, timing: bool = True) -> list:
    """Full-grid runs; one row per (scheme, N_t, probe), sorted."""
    setup = build_setup(cfg)
    probes = cfg.probes or setup.probes
    oracle = setup.oracle if cfg.oracle == "auto" else None
    window = _window_of(cfg, setup.grid)
    rows = []
    for scheme in cfg.scheme:
        for n in cfg.n_steps:
            start = time.perf_counter()
            traj = solve_backward(scheme, setup.problem, n, cfg.krylov_m,
                                  store=oracle is not None and window is not None)
            wall = time.perf_counter() - start
            sup = None
            if oracle is not None and window is not None:
                sup = P.sup_error_window(traj.times, lambda k: traj.values[k], oracle, setup.grid, window)
            vals = interpolate_many(setup.grid, traj.values[0], np.array(probes))
            for p, v in zip(probes, vals):
                err = abs(v - oracle(0.0, np.array([p]))[0]) if oracle is not None else None
                rows.append([scheme, n, _probe_label(p), _fmt(v), _fmt(err), _fmt(sup),
                             f"{wall:.3f}" if timing else ""])
    return sorted(rows, key=lambda r: (r[0], r[1], r[2]))


def run_sparse(cfg: ExperimentConfig, timing: bool = True) -> list:
    """Combination-technique runs; one row per (scheme, N_t, q, probe), sorted."""
    if cfg.sparse is None:
        raise ConfigError("sparse: block required for the sparse command")
    ref = build_setup(cfg)
    probes = cfg.probes or ref.probes
    oracle = ref.oracle if cfg.oracle == "auto" else None
    window = _window_of(cfg, ref.grid)
    families = _SPARSE_FAMILIES[cfg.problem](**({"g": cfg.sparse["g"]} if "g" in cfg.sparse else {}))
    d = len(families)

    def factory(grid):
        return _BUILDERS[cfg.problem](grid=grid, **cfg.params).problem

    rows = []
    for scheme in cfg.scheme:
        for n in cfg.n_steps:
            for q in cfg.sparse["q"]:
                start = time.perf_counter()
                sol = solve_combination(q, families, factory, scheme, n, cfg.krylov_m,
                                        store=oracle is not None and window is not None)
                wall = time.perf_counter() - start
                sup = None
                if oracle is not None and window is not None:
                    sup = P.sup_error_window(
                        sol.times, lambda k: evaluate_combined(sol, k, ref.grid.points()),
                        oracle, ref.grid, window)
                vals = evaluate_combined(sol, 0, np.array(probes))
                for p, v in zip(probes, vals):
                    err = abs(v - oracle(0.0, np.array([p]))[0]) if oracle is not None else None
                    rows.append([scheme, n, q, count_points(q, d), _probe_label(p), _fmt(v), _fmt(err),
                                 _fmt(sup), f"{wall:.3f}" if timing else ""])
    return sorted(rows, key=lambda r: (r[0], r[1], r[2], r[4]))


def run_lsmc(cfg: ExperimentConfig):
    if cfg.lsmc is None:
        raise ConfigError("lsmc: block required for the lsmc command")
    blk = cfg.lsmc
    spec = P.sde_spec(cfg.problem, x0=blk.get("x0"), **cfg.params)
    lcfg = LSMCConfig(blk["n_paths"], blk["n_steps"], blk["basis_degree"], blk.get("seed", 0))
    return lsmc_runs(spec.drift, spec.diffusion, spec.driver, spec.payoff, spec.x0, spec.T,
                     lcfg, blk.get("n_runs", 20))


def _threads_default():
    raw = os.environ.get(THREADS_ENV)
    return int(raw) if raw and raw.isdigit() else None


def _guarded(fn):
    """Map errors onto exit codes."""
    try:
        return fn()
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except (SolverError, FloatingPointError, np.linalg.LinAlgError) as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        sys.exit(EXIT_NUMERIC)


@click.group()
@click.option("--threads", type=click.IntRange(min=1), default=_threads_default,
              help=f"BLAS thread limit (default: ${THREADS_ENV} or library default); 1 is deterministic.")
@click.pass_context
def main(ctx, threads):
    """Exponential-integrator BSDE solver on CTMC-approximated state spaces."""
    if threads is not None:
        ctx.with_resource(threadpool_limits(limits=threads))


def _config_command(name, runner, header=None, help_text=""):
    @main.command(name, help=help_text)
    @click.argument("config")
    @click.option("-o", "--output", default=None, help="CSV path (overrides the config).")
    @click.option("--no-timing", is_flag=True, help="Leave wall_time blank for reproducible output.")
    def cmd(config, output, no_timing):
        def body():
            cfg = load_config(config)
            rows = runner(cfg, timing=not no_timing)
            _emit(_rows_to_csv(header, rows), output or cfg.output)

        _guarded(body)

    return cmd


_config_command("solve", run_solve, SOLVE_HEADER, "Full-grid solves over schemes and N_t.")
_config_command("sparse", run_sparse, SPARSE_HEADER, "Sparse-grid combination solves over q.")


@main.command("lsmc")
@click.argument("config")
@click.option("-o", "--output", default=None, help="CSV path (overrides the config).")
def lsmc_cmd(config, output):
    """Repeated LSMC runs with a mean/std summary."""

    def body():
        cfg = load_config(config)
        results = run_lsmc(cfg)
        target = output or cfg.output
        if target:
            write_runs_csv(results, target)
        else:
            click.echo(runs_csv_text(results), nl=False)

    _guarded(body)


@main.command("validate")
@click.argument("config")
def validate_cmd(config):
    """Report whether the configured generator is a valid Q-matrix."""

    def body():
        cfg = load_config(config)
        setup = build_setup(cfg)
        rep = check_validity(setup.generator)
        click.echo(f"problem: {cfg.problem}")
        click.echo(f"states: {setup.generator.dimension}")
        click.echo(f"valid: {rep.valid}")
        click.echo(f"min_offdiag: {rep.min_offdiag:.6e}")
        click.echo(f"max_row_sum: {rep.max_row_sum:.6e}")
        click.echo(f"violations: {len(rep.violations)}")
        click.echo(f"structural_condition: {check_structural_condition(setup.generator)}")
        if rep.step_condition is not None:
            click.echo(f"step_condition: {rep.step_condition} (max dx {rep.max_step:.4g}, bound {rep.step_bound:.4g})")
        if not rep.valid:
            sys.exit(EXIT_NUMERIC)

    _guarded(body)


@main.group("presets")
def presets_group():
    """Packaged experiment presets."""


@presets_group.command("list")
def presets_list():
    for name in preset_names():
        first = _preset_text(name).splitlines()[0]
        desc = first[1:].strip() if first.startswith("#") else ""
        click.echo(f"{name}\t{desc}")


@presets_group.command("show")
@click.argument("name")
def presets_show(name):
    if name not in preset_names():
        click.echo(f"config error: no preset {name!r}", err=True)
        sys.exit(EXIT_CONFIG)
    click.echo(_preset_text(name), nl=False)


if __name__ == "__main__":
    main()
