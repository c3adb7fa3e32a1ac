"""Batch front end: strict JSON/flag configuration, seeded runs, CSV/JSON artifacts.

Every artifact starts with a ``#``-prefixed metadata block carrying the tool
version, a hash of the canonical config echo and the seed, followed by a
header row and data rows; a JSON sidecar holds the full echoed config.  With
a fixed config and seed the data sections are byte-identical between runs.
Exit codes: 0 success, 1 numeric failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import __version__, gaussian, tails
from .controls import greedy_partition
from .rde import RdeDivergenceError, jacobian_flow, solve_linear_rde, solve_rde
from .roughpath import control_from_rough_path, lift_piecewise_linear, p_variation
from .selftest import run_selftest

__all__ = ["ConfigError", "RunConfig", "parse_config", "execute", "main"]


class ConfigError(ValueError):
    """Invalid configuration; maps to exit code 2."""


class NumericFailure(RuntimeError):
    """Numeric failure during execution; maps to exit code 1."""


def _positive(name):
    def check(v):
        if not v > 0:
            raise ConfigError(f"{name}: must be positive, got {v!r}")
        return v
    return check


def _p_range(v):
    if not 2.0 < v < 3.0:
        raise ConfigError(f"p: value {v!r} outside the supported range (2, 3)")
    return v


def _choice(name, options):
    def check(v):
        if v not in options:
            raise ConfigError(f"{name}: {v!r} not one of {sorted(options)}")
        return v
    return check


def _nonneg_int(name):
    def check(v):
        if v < 0:
            raise ConfigError(f"{name}: must be >= 0, got {v!r}")
        return v
    return check


@dataclass(frozen=True)
class Field:
    name: str
    type: type
    default: object = None
    required: bool = False
    validator: object = None
    help: str = ""


_MODEL_FIELDS = (
    Field("model", str, validator=_choice("model", {"brownian", "fbm", "she"}),
          help="driver family"),
    Field("hurst", float, help="Hurst parameter for fbm"),
    Field("eps", float, help="smoothing parameter for she"),
    Field("dimension", int, default=1, validator=_positive("dimension"),
          help="number of iid components"),
    Field("horizon", float, default=1.0, validator=_positive("horizon"),
          help="right end of the time interval"),
    Field("trunc", int, default=100_000, validator=_positive("trunc"),
          help="series truncation for she"),
)

_OUT_FIELDS = (
    Field("out", str, help="output artifact path"),
    Field("format", str, default="csv", validator=_choice("format", {"csv", "json"})),
)

_SCHEMAS: dict[str, tuple[Field, ...]] = {
    "sample": _MODEL_FIELDS + _OUT_FIELDS + (
        Field("grid", int, default=512, validator=_positive("grid")),
        Field("trials", int, default=1, validator=_positive("trials")),
        Field("seed", int, required=True, validator=_nonneg_int("seed")),
    ),
    "pvar": _OUT_FIELDS + (
        Field("infile", str, required=True, help="input path file"),
        Field("p", float, default=2.5, validator=_p_range),
        Field("mode", str, default="homogeneous",
              validator=_choice("mode", {"homogeneous", "level1", "level2"})),
    ),
    "nalpha": _MODEL_FIELDS + _OUT_FIELDS + (
        Field("infile", str, help="input path file (alternative to model)"),
        Field("p", float, default=2.5, validator=_p_range),
        Field("alpha", float, default=1.0, validator=_positive("alpha")),
        Field("mode", str, default="level-split",
              validator=_choice("mode", {"level-split", "homogeneous"})),
        Field("grid", int, default=512, validator=_positive("grid")),
        Field("trials", int, default=1, validator=_positive("trials")),
        Field("seed", int, validator=_nonneg_int("seed")),
    ),
    "rde": _MODEL_FIELDS + _OUT_FIELDS + (
        Field("infile", str),
        Field("grid", int, default=512, validator=_positive("grid")),
        Field("seed", int, validator=_nonneg_int("seed")),
        Field("trial", int, default=0, validator=_nonneg_int("trial")),
        Field("y0", str, default="1,1", help="comma-separated initial state"),
    ),
    "she": _OUT_FIELDS + (
        Field("eps_list", str, default="0,0.1,0.5,1"),
        Field("grid", int, default=256, validator=_positive("grid")),
        Field("trunc", int, default=100_000, validator=_positive("trunc")),
        Field("x_count", int, default=50, validator=_positive("x_count")),
    ),
    "tailfit": _MODEL_FIELDS + _OUT_FIELDS + (
        Field("statistic", str, required=True,
              validator=_choice("statistic", set(tails.STATISTICS))),
        Field("p", float, default=2.5, validator=_p_range),
        Field("alpha", float, default=1.0, validator=_positive("alpha")),
        Field("grid", int, default=512, validator=_positive("grid")),
        Field("trials", int, required=True, validator=_positive("trials")),
        Field("seed", int, required=True, validator=_nonneg_int("seed")),
        Field("q", float, validator=_positive("q")),
        Field("state_dim", int, default=2, validator=_positive("state_dim")),
        Field("y0_scale", float, default=0.0),
        Field("tail_fraction", float, default=0.10, validator=_positive("tail_fraction")),
        Field("clip_fraction", float, default=0.005, validator=_positive("clip_fraction")),
    ),
    "selftest": (),
}
_SCHEMAS["linrde"] = _SCHEMAS["rde"]
_SCHEMAS["jacobian"] = _SCHEMAS["rde"]


@dataclass(frozen=True)
class RunConfig:
    """Validated effective configuration: subcommand plus normalised parameters."""

    subcommand: str
    params: dict

    def canonical(self) -> dict:
        doc = {"subcommand": self.subcommand}
        doc.update({k: v for k, v in sorted(self.params.items()) if v is not None})
        return doc

    def canonical_json(self) -> str:
        return json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


def parse_config(subcommand: str, document: dict | None = None,
                 flags: dict | None = None) -> RunConfig:
    """Merge a JSON document and flag overrides into a validated RunConfig.

    Flags override document fields; unknown keys are rejected with a
    field-path diagnostic; a ``subcommand`` key inside the document must
    match the requested subcommand.
    """
    if subcommand not in _SCHEMAS:
        raise ConfigError(f"unknown subcommand {subcommand!r}")
    schema = {f.name: f for f in _SCHEMAS[subcommand]}
    merged: dict = {}
    for source_name, source in (("config", document or {}), ("flags", flags or {})):
        for key, value in source.items():
            if key == "subcommand":
                if value != subcommand:
                    raise ConfigError(
                        f"{source_name}.subcommand: {value!r} does not match {subcommand!r}"
                    )
                continue
            if key not in schema:
                raise ConfigError(f"{source_name}.{key}: unknown key for {subcommand!r}")
            if value is None:
                continue
            field = schema[key]
            try:
                value = field.type(value)
            except (TypeError, ValueError):
                raise ConfigError(
                    f"{source_name}.{key}: cannot interpret {value!r} as {field.type.__name__}"
                ) from None
            merged[key] = value
    params: dict = {}
    for name, field in schema.items():
        if name in merged:
            value = merged[name]
            if field.validator is not None:
                value = field.validator(value)
            params[name] = value
        elif field.required:
            raise ConfigError(f"{subcommand}.{name}: required field missing")
        else:
            params[name] = field.default
    return RunConfig(subcommand=subcommand, params=params)


def _build_model(cfg: RunConfig) -> gaussian.GaussianModel:
    p = cfg.params
    kind = p.get("model")
    if kind is None:
        raise ConfigError(f"{cfg.subcommand}.model: required when no input file is given")
    try:
        if kind == "brownian":
            return gaussian.brownian(dimension=p["dimension"], horizon=p["horizon"])
        if kind == "fbm":
            if p.get("hurst") is None:
                raise ConfigError("fbm.hurst: required field missing")
            return gaussian.fbm(p["hurst"], dimension=p["dimension"], horizon=p["horizon"])
        if p.get("eps") is None:
            raise ConfigError("she.eps: required field missing")
        return gaussian.she(p["eps"], dimension=p["dimension"], trunc=p["trunc"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


class _Artifacts:
    """Track written files so partial outputs can be removed on failure."""

    def __init__(self):
        self.paths: list[str] = []

    def register(self, path: str) -> str:
        self.paths.append(path)
        return path

    def cleanup(self) -> None:
        for path in self.paths:
            try:
                os.unlink(path)
            except OSError:
                pass


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_table(path: str, cfg: RunConfig, columns, rows, extra_meta=None) -> None:
    seed = cfg.params.get("seed")
    meta = {
        "tool": "roughnum",
        "version": __version__,
        "config-hash": cfg.config_hash,
        "seed": "none" if seed is None else str(seed),
    }
    meta.update(extra_meta or {})
    if cfg.params.get("format", "csv") == "json":
        doc = {"meta": meta, "columns": list(columns),
               "rows": [[(v if not isinstance(v, float) else v) for v in row] for row in rows]}
        body = json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(body)
        return
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key, value in meta.items():
            fh.write(f"# {key}: {value}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _write_sidecar(path: str, cfg: RunConfig, result: dict | None = None) -> str:
    sidecar = path + ".meta.json"
    doc = {
        "tool": "roughnum",
        "version": __version__,
        "config": cfg.canonical(),
        "config_hash": cfg.config_hash,
    }
    if result:
        doc["result"] = result
    with open(sidecar, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n")
    return sidecar


def _read_path_file(path: str) -> tuple[np.ndarray, np.ndarray]:
    times, rows = [], []
    with open(path, "r", encoding="utf-8") as fh:
        header = None
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if header is None:
                header = line.split(",")
                if header[0] != "t":
                    raise ConfigError(f"infile: {path!r} is not a path file (no t column)")
                continue
            vals = [float(v) for v in line.split(",")]
            times.append(vals[0])
            rows.append(vals[1:])
    if not rows:
        raise ConfigError(f"infile: {path!r} contains no data rows")
    return np.asarray(times), np.asarray(rows)


def _path_columns(d: int) -> list[str]:
    return ["t"] + [f"x_{k + 1}" for k in range(d)]


def _cmd_sample(cfg: RunConfig, artifacts: _Artifacts) -> None:
    p = cfg.params
    if p.get("out") is None:
        raise ConfigError("sample.out: required field missing")
    model = _build_model(cfg)
    grid = gaussian.default_grid(model, p["grid"])
    columns = _path_columns(model.dimension)
    stem, ext = os.path.splitext(p["out"])
    for trial in range(p["trials"]):
        path = gaussian.sample_path(model, grid, p["seed"], trial)
        rows = [(grid[k], *path[k]) for k in range(grid.size)]
        out = p["out"] if p["trials"] == 1 else f"{stem}_{trial:03d}{ext or '.csv'}"
        artifacts.register(out)
        _write_table(out, cfg, columns, rows, {"trial": str(trial)})
    _write_sidecar(p["out"], cfg)
    artifacts.register(p["out"] + ".meta.json")


def _lift_from_config(cfg: RunConfig) -> "tuple":
    p = cfg.params
    if p.get("infile"):
        times, samples = _read_path_file(p["infile"])
        return times, samples
    if p.get("seed") is None:
        raise ConfigError(f"{cfg.subcommand}.seed: required when sampling a driver")
    model = _build_model(cfg)
    grid = gaussian.default_grid(model, p["grid"])
    samples = gaussian.sample_path(model, grid, p["seed"], p.get("trial", 0))
    return grid, samples


def _cmd_pvar(cfg: RunConfig, artifacts: _Artifacts) -> None:
    p = cfg.params
    times, samples = _read_path_file(p["infile"])
    x = lift_piecewise_linear(samples, times)
    value = p_variation(x, p["p"], mode=p["mode"])
    print(f"pvar {value!r}")
    if p.get("out"):
        artifacts.register(p["out"])
        _write_table(p["out"], cfg, ["mode", "p", "value"],
                     [(p["mode"], p["p"], value)])
        _write_sidecar(p["out"], cfg, {"value": value})
        artifacts.register(p["out"] + ".meta.json")


def _cmd_nalpha(cfg: RunConfig, artifacts: _Artifacts) -> None:
    p = cfg.params
    if p.get("infile"):
        times, samples = _read_path_file(p["infile"])
        x = lift_piecewise_linear(samples, times)
        control = control_from_rough_path(x, p["p"], mode=p["mode"])
        part = greedy_partition(control, p["alpha"])
        print(f"nalpha {part.count}")
        if p.get("out"):
            rows = [(k, tau, times[tau]) for k, tau in enumerate(part.taus)]
            artifacts.register(p["out"])
            _write_table(p["out"], cfg, ["k", "tau_index", "tau_time"], rows,
                         {"count": str(part.count)})
            _write_sidecar(p["out"], cfg, {"count": part.count})
            artifacts.register(p["out"] + ".meta.json")
        return
    if p.get("seed") is None:
        raise ConfigError("nalpha.seed: required for model-driven batches")
    model = _build_model(cfg)
    config = tails.TrialConfig(model=model, statistic="nalpha-x", trials=p["trials"],
                               seed=p["seed"], p=p["p"], alpha=p["alpha"],
                               grid_size=p["grid"])
    sample = tails.run_trials(config)
    print(f"nalpha mean {float(np.mean(sample.values))!r} over {p['trials']} trials")
    if p.get("out"):
        rows = [(k, v) for k, v in enumerate(sample.values)]
        artifacts.register(p["out"])
        _write_table(p["out"], cfg, ["trial", "value"], rows,
                     {"excluded": str(len(sample.excluded))})
        _write_sidecar(p["out"], cfg, {"excluded": len(sample.excluded)})
        artifacts.register(p["out"] + ".meta.json")


def _parse_y0(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",")], dtype=float)
    except ValueError:
        raise ConfigError(f"y0: cannot parse {text!r} as comma-separated reals") from None


def _cmd_solver(cfg: RunConfig, artifacts: _Artifacts) -> None:
    p = cfg.params
    times, samples = _lift_from_config(cfg)
    x = lift_piecewise_linear(samples, times)
    y0 = _parse_y0(p["y0"])
    d = x.dim
    try:
        if cfg.subcommand == "rde":
            sol = solve_rde(tails.default_vector_field(d, y0.size), x, y0)
            values = sol.values
            columns = ["t"] + [f"y_{k + 1}" for k in range(y0.size)]
        elif cfg.subcommand == "linrde":
            sol = solve_linear_rde(tails.default_linear_field(d, y0.size), x, y0)
            values = sol.values
            columns = ["t"] + [f"y_{k + 1}" for k in range(y0.size)]
        else:
            sol = jacobian_flow(tails.default_vector_field(d, y0.size), x, y0)
            e = y0.size
            values = sol.values.reshape(len(sol.times), e * e)
            columns = ["t"] + [f"j_{a + 1}_{b + 1}" for a in range(e) for b in range(e)]
    except RdeDivergenceError as exc:
        raise NumericFailure(str(exc)) from exc
    print(f"{cfg.subcommand} final {np.array2string(values[-1], precision=6)}")
    if p.get("out"):
        rows = [(sol.times[k], *values[k]) for k in range(len(sol.times))]
        artifacts.register(p["out"])
        _write_table(p["out"], cfg, columns, rows)
        _write_sidecar(p["out"], cfg)
        artifacts.register(p["out"] + ".meta.json")


def _cmd_she(cfg: RunConfig, artifacts: _Artifacts) -> None:
    p = cfg.params
    if p.get("out") is None:
        raise ConfigError("she.out: required field missing")
    try:
        eps_values = [float(v) for v in p["eps_list"].split(",")]
    except ValueError:
        raise ConfigError(f"eps_list: cannot parse {p['eps_list']!r}") from None
    if any(e < 0 for e in eps_values):
        raise ConfigError("eps_list: entries must be >= 0")
    xs = np.linspace(-math.pi, math.pi, p["x_count"])
    rows = []
    for eps in eps_values:
        model = gaussian.she(eps, trunc=p["trunc"])
        grid = gaussian.default_grid(model, p["grid"])
        est = gaussian.rho_variation_2d(model, grid, rho=1.0)
        if eps > 0.0:
            series = gaussian.she_partial_kernel_series(eps, xs, p["trunc"])
            closed = gaussian.she_kernel_closed_reference(eps, xs)
            resid = float(np.max(np.abs(series - closed)))
        else:
            resid = float("nan")
        rows.append((eps, est.value, resid,
                     gaussian.she_series_tail_bound(eps, p["trunc"])))
    values = [r[1] for r in rows]
    print(f"she v1 range [{min(values)!r}, {max(values)!r}]")
    artifacts.register(p["out"])
    _write_table(p["out"], cfg,
                 ["eps", "v1_finest", "closed_form_residual_max", "series_tail_bound"],
                 rows)
    _write_sidecar(p["out"], cfg)
    artifacts.register(p["out"] + ".meta.json")


def _cmd_tailfit(cfg: RunConfig, artifacts: _Artifacts) -> None:
    p = cfg.params
    if p.get("out") is None:
        raise ConfigError("tailfit.out: required field missing")
    model = _build_model(cfg)
    config = tails.TrialConfig(
        model=model, statistic=p["statistic"], trials=p["trials"], seed=p["seed"],
        p=p["p"], alpha=p["alpha"], grid_size=p["grid"], q=p.get("q"),
        state_dim=p["state_dim"], y0_scale=p["y0_scale"],
    )
    sample = tails.run_trials(config)
    try:
        fit = tails.fit_weibull_shape(sample.values, p["tail_fraction"], p["clip_fraction"])
    except (ValueError, tails.InsufficientTailDataError) as exc:
        raise NumericFailure(f"tail fit failed: {exc}") from exc
    levels = np.linspace(float(np.min(sample.values)), float(np.max(sample.values)), 21)
    table = tails.survival_table(sample.values, levels[:-1])
    stem, ext = os.path.splitext(p["out"])
    artifacts.register(p["out"])
    _write_table(
        p["out"], cfg,
        ["statistic", "n", "excluded", "shape", "stderr", "scale",
         "mle_shape", "mle_scale", "n_tail_points", "tail_fraction",
         "clip_fraction", "predicted_shape", "q"],
        [(p["statistic"], fit.n, len(sample.excluded), fit.shape, fit.stderr,
          fit.scale, fit.mle_shape, fit.mle_scale, fit.n_tail_points,
          fit.tail_fraction, fit.clip_fraction, config.predicted_shape,
          config.effective_q)],
    )
    surv_path = f"{stem}_survival{ext or '.csv'}"
    artifacts.register(surv_path)
    _write_table(surv_path, cfg, ["r", "survival"],
                 [(float(r), float(s)) for r, s in table])
    _write_sidecar(p["out"], cfg, {
        "shape": fit.shape, "stderr": fit.stderr, "predicted_shape": config.predicted_shape,
        "excluded": len(sample.excluded),
    })
    artifacts.register(p["out"] + ".meta.json")
    print(f"tailfit shape {fit.shape!r} (predicted {config.predicted_shape!r}, "
          f"stderr {fit.stderr!r})")


_HANDLERS = {
    "sample": _cmd_sample,
    "pvar": _cmd_pvar,
    "nalpha": _cmd_nalpha,
    "rde": _cmd_solver,
    "linrde": _cmd_solver,
    "jacobian": _cmd_solver,
    "she": _cmd_she,
    "tailfit": _cmd_tailfit,
}


def execute(cfg: RunConfig) -> int:
    """Run a validated config; returns the process exit code."""
    if cfg.subcommand == "selftest":
        return run_selftest()
    artifacts = _Artifacts()
    try:
        _HANDLERS[cfg.subcommand](cfg, artifacts)
    except ConfigError:
        artifacts.cleanup()
        raise
    except NumericFailure as exc:
        artifacts.cleanup()
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (RdeDivergenceError, gaussian.GramFactorizationError) as exc:
        artifacts.cleanup()
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def _add_flags(parser: argparse.ArgumentParser, schema: tuple[Field, ...]) -> None:
    for field in schema:
        flag = "--" + field.name.replace("_", "-")
        if field.name == "infile":
            flag = "--in"
        parser.add_argument(flag, dest=field.name, type=field.type, default=None,
                            help=field.help or field.name)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="roughnum",
        description="Greedy partition counts, p-variation, Gaussian drivers, "
                    "equation solvers and tail fits on time grids.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name, schema in _SCHEMAS.items():
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=str, default=None, help="JSON config document")
        _add_flags(sp, schema)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = vars(parser.parse_args(argv))
    subcommand = args.pop("subcommand")
    config_path = args.pop("config", None)
    document = None
    if config_path is not None:
        try:
            with open(config_path, "r", encoding="utf-8") as fh:
                document = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            print(f"config error: cannot read {config_path!r}: {exc}", file=sys.stderr)
            return 2
        if not isinstance(document, dict):
            print("config error: document root must be an object", file=sys.stderr)
            return 2
    flags = {k: v for k, v in args.items() if v is not None}
    try:
        cfg = parse_config(subcommand, document, flags)
        return execute(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
