"""Experiment definitions for the three bundled studies and CSV result rows.

An :class:`ExperimentConfig` names an example, a method and a scaling; the
builder turns it into the model, averaged path, terminal cost and control the
sampler needs.  Results are appended to a CSV file, one row per run, with
every float written to 17 significant digits so rows round-trip exactly.
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import math
import os
import time
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from . import control as ctl
from .averaging import (
    AveragedPath,
    averaged_drift_example1,
    homogenized_drift_example3,
    rough_potential_constants,
    solve_averaged_ode,
)
from .model import (
    MultiscaleModel,
    ParameterError,
    Regime,
    ScalingParams,
    make_example1_model,
    make_example3_model,
    time_step,
)
from .sampler import EstimatorOutput, estimate

METHODS = ("nmc", "md", "ld")

DESK_SAMPLES = 250_000
PAPER_SAMPLES = {1: 2_500_000, 2: 2_500_000, 3: 5_000_000}

CSV_COLUMNS = (
    "example",
    "regime",
    "epsilon",
    "delta",
    "eps_over_delta",
    "j",
    "method",
    "theta_hat",
    "rel_err_per_sample",
    "std_error",
    "n_samples",
    "n_blowups",
    "seed",
    "wall_time_s",
    "subsolution_variant",
    "error",
)

# Per-example defaults: start point, MD exponent, regime, H target.
_DEFAULTS = {
    1: dict(x0=-1.0, y0=0.0, h_exponent=0.45, regime=2, gamma_target=3.0),
    2: dict(x0=-1.0, y0=0.0, h_exponent=0.4, regime=1, gamma_target=None),
    3: dict(x0=0.0, y0=None, h_exponent=0.4, regime=1, gamma_target=None),
}


class ConfigError(ParameterError):
    """Invalid experiment configuration, detected before any simulation."""


@dataclass(frozen=True)
class ExperimentConfig:
    """One (example, method, epsilon, delta) experiment.

    ``None`` fields take the example's defaults (see :func:`make_config`).
    ``variant`` selects the subsolution: for Examples 1-2 ``exact_constant_c``
    or ``general``, for Example 3 ``md_matched`` or ``md_beta_level``.
    """

    example_id: int
    method: str
    epsilon: float
    delta: float
    h_exponent: float
    D: float = 1.0
    T: float = 1.0
    x0: float = 0.0
    y0: float | None = None
    gamma_target: float | None = None
    regime: int = 1
    n_samples: int = DESK_SAMPLES
    base_seed: int = 0
    workers: int = 1
    out_path: str | None = None
    variant: str | None = None

    def __post_init__(self):
        validate_config(self)


def validate_config(cfg: ExperimentConfig) -> None:
    if cfg.example_id not in _DEFAULTS:
        raise ConfigError(f"example must be 1, 2 or 3, got {cfg.example_id!r}")
    if cfg.method not in METHODS:
        raise ConfigError(f"method must be one of {METHODS}, got {cfg.method!r}")
    if cfg.method == "ld" and cfg.example_id != 3:
        raise ConfigError(
            "method 'ld' needs a closed-form large-deviations subsolution, "
            f"which exists only for example 3 (got example {cfg.example_id})"
        )
    if cfg.example_id == 3 and cfg.method in ("md", "ld") and cfg.x0 != 0.0:
        raise ConfigError("the example 3 closed-form controls assume x0 = 0")
    if cfg.variant is not None:
        allowed = _VARIANTS[cfg.example_id]
        if cfg.variant not in allowed:
            raise ConfigError(f"variant for example {cfg.example_id} must be one of {allowed}")
    for name in ("epsilon", "delta", "D", "T"):
        value = getattr(cfg, name)
        if not (isinstance(value, (int, float)) and value > 0 and math.isfinite(value)):
            raise ConfigError(f"{name} must be a positive number, got {value!r}")
    if cfg.n_samples < 2:
        raise ConfigError("n_samples must be at least 2")
    if cfg.workers < 1:
        raise ConfigError("workers must be at least 1")
    try:
        Regime.parse(cfg.regime)
        _scaling(cfg)
    except ParameterError as exc:
        raise ConfigError(str(exc)) from None


_VARIANTS = {
    1: (ctl.EXACT_CONSTANT_C, ctl.GENERAL),
    2: (ctl.EXACT_CONSTANT_C, ctl.GENERAL),
    3: (ctl.MD_MATCHED, ctl.MD_BETA_LEVEL),
}

_FIELD_TYPES = {
    "example_id": int,
    "method": str,
    "epsilon": float,
    "delta": float,
    "h_exponent": float,
    "D": float,
    "T": float,
    "x0": float,
    "y0": float,
    "gamma_target": float,
    "regime": int,
    "n_samples": int,
    "base_seed": int,
    "workers": int,
    "out_path": str,
    "variant": str,
}

# Alternative spellings accepted in config files.
_ALIASES = {"example": "example_id", "seed": "base_seed", "n": "n_samples", "out": "out_path", "d": "D", "t": "T"}


def make_config(example_id: int, method: str, epsilon: float, delta: float, paper_scale: bool = False,
                **overrides) -> ExperimentConfig:
    """Build a config with the example's defaults; ``None`` overrides are ignored."""
    example_id = int(example_id)
    if example_id not in _DEFAULTS:
        raise ConfigError(f"example must be 1, 2 or 3, got {example_id!r}")
    fields = dict(_DEFAULTS[example_id])
    fields["n_samples"] = PAPER_SAMPLES[example_id] if paper_scale else DESK_SAMPLES
    fields.update({k: v for k, v in overrides.items() if v is not None})
    unknown = set(fields) - set(_FIELD_TYPES)
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    for key, kind in _FIELD_TYPES.items():
        if fields.get(key) is not None:
            fields[key] = _coerce(key, fields[key], kind)
    if example_id == 3 and method == "ld" and "h_exponent" not in overrides:
        fields["h_exponent"] = 0.5
    return ExperimentConfig(example_id=example_id, method=str(method), epsilon=float(epsilon),
                            delta=float(delta), **fields)


def _coerce(key, value, kind):
    try:
        if kind is int and isinstance(value, str):
            return int(float(value))
        return kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"cannot read {key}={value!r} as {kind.__name__}") from None


def read_config_file(path: str | os.PathLike) -> dict:
    """Parse a flat ``key = value`` file (``#`` comments) into a dict of strings."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str
    with open(path, encoding="utf-8") as fh:
        try:
            parser.read_string("[experiment]\n" + fh.read())
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
    out = {}
    for key, value in parser["experiment"].items():
        key = key.strip()
        out[_ALIASES.get(key.lower(), key)] = value.strip()
    return out


def config_from_mapping(values: dict, paper_scale: bool = False) -> ExperimentConfig:
    values = dict(values)
    try:
        example_id = values.pop("example_id")
        method = values.pop("method")
        epsilon = float(values.pop("epsilon"))
        delta = float(values.pop("delta"))
    except KeyError as exc:
        raise ConfigError(f"missing required key {exc.args[0]!r}") from None
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return make_config(int(example_id), method, epsilon, delta, paper_scale=paper_scale, **values)


# ---------------------------------------------------------------------------
# Building the simulation inputs


@dataclass(frozen=True, eq=False)
class Experiment:
    config: ExperimentConfig
    model: MultiscaleModel
    scaling: ScalingParams
    averaged: AveragedPath
    terminal_H: Callable
    control: ctl.FeedbackControl
    subsolution: ctl.Subsolution | None
    hjb: ctl.HJBCoefficients | None
    variant: str
    y0: np.ndarray | None


def _scaling(cfg: ExperimentConfig) -> ScalingParams:
    if cfg.method == "ld":
        return ScalingParams.large_deviations(cfg.epsilon, cfg.delta, cfg.regime)
    return ScalingParams(cfg.epsilon, cfg.delta, cfg.h_exponent, cfg.regime)


def default_variant(cfg: ExperimentConfig) -> str:
    """Subsolution used when the config does not name one.

    Example 1 uses the exact solution when the averaged path sits at a well
    (x0 = +-1, c = 4); Example 2 uses the general family with its target
    gamma = (1 - xbar_T)/beta; Example 3 uses the terminal-matched form.
    """
    if cfg.variant is not None:
        return cfg.variant
    if cfg.example_id == 1 and abs(cfg.x0) == 1.0:
        return ctl.EXACT_CONSTANT_C
    if cfg.example_id in (1, 2):
        return ctl.GENERAL
    return ctl.MD_MATCHED


def build_experiment(cfg: ExperimentConfig) -> Experiment:
    scaling = _scaling(cfg)
    dt = time_step(scaling)
    if cfg.example_id in (1, 2):
        return _build_two_scale(cfg, scaling, dt)
    return _build_rough(cfg, scaling, dt)


def _build_two_scale(cfg, scaling, dt) -> Experiment:
    model = make_example1_model(cfg.D)
    averaged = solve_averaged_ode(averaged_drift_example1, [cfg.x0], 0.0, cfg.T, dt, "two-scale")
    hjb, rate = ctl.example12_hjb(averaged, cfg.D, cfg.regime)
    x_bar_T = float(averaged.terminal[0])
    if cfg.example_id == 1:
        gamma = 3.0 if cfg.gamma_target is None else cfg.gamma_target
        H = ctl.quadratic_terminal_cost(gamma)
    else:
        gamma = (1.0 - x_bar_T) / scaling.beta
        H = ctl.example2_terminal_cost(x_bar_T, scaling.beta)
    y0 = np.array([0.0 if cfg.y0 is None else cfg.y0])
    if cfg.method == "nmc":
        return Experiment(cfg, model, scaling, averaged, H, ctl.zero_control(hjb), None, hjb, ctl.ZERO, y0)
    variant = default_variant(cfg)
    sub = ctl.example12_subsolution(gamma, cfg.D, rate, cfg.T, variant, terminal_H=H)
    return Experiment(cfg, model, scaling, averaged, H, ctl.md_feedback_control(sub, hjb), sub, hjb, variant, y0)


def _build_rough(cfg, scaling, dt) -> Experiment:
    constants = rough_potential_constants(cfg.D)
    model = make_example3_model(cfg.D)
    drift = homogenized_drift_example3(constants.kappa_hom)
    averaged = solve_averaged_ode(drift, [cfg.x0], 0.0, cfg.T, dt, "homogenized")
    hjb = ctl.example3_hjb(constants, cfg.D)
    x_bar_T = float(averaged.terminal[0])
    if cfg.method == "ld":
        # beta = 1 here, so eta = x - xbar and h^2 H = R(x)/eps
        def H(eta):
            return ctl.example3_cost(x_bar_T + np.asarray(eta, dtype=float)[..., 0])

        control = ctl.example3_ld_feedback(constants, cfg.D, cfg.T, cfg.delta, averaged)
        sub = ctl.example3_ld_subsolution(cfg.D, constants.kappa_hom, cfg.T)
        return Experiment(cfg, model, scaling, averaged, H, control, sub, hjb, ctl.LD_CLOSED_FORM, None)
    H = ctl.example3_terminal_cost(x_bar_T, scaling.beta)
    if cfg.method == "nmc":
        return Experiment(cfg, model, scaling, averaged, H, ctl.zero_control(hjb), None, hjb, ctl.ZERO, None)
    variant = default_variant(cfg)
    sub = ctl.example3_md_subsolution(scaling.beta, cfg.D, constants.kappa_hom, cfg.T, variant)
    return Experiment(cfg, model, scaling, averaged, H, ctl.md_feedback_control(sub, hjb), sub, hjb, variant, None)


# ---------------------------------------------------------------------------
# Running and recording


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def result_row(cfg: ExperimentConfig, out: EstimatorOutput | None, wall_time: float, variant: str,
               error: str = "") -> dict:
    scaling = _scaling(cfg)
    row = {
        "example": cfg.example_id,
        "regime": Regime.parse(cfg.regime).value,
        "epsilon": cfg.epsilon,
        "delta": cfg.delta,
        "eps_over_delta": scaling.eps_over_delta,
        "j": scaling.j,
        "method": cfg.method,
        "theta_hat": None,
        "rel_err_per_sample": None,
        "std_error": None,
        "n_samples": cfg.n_samples,
        "n_blowups": None,
        "seed": cfg.base_seed,
        "wall_time_s": float(wall_time),
        "subsolution_variant": variant,
        "error": error,
    }
    if out is not None:
        row.update(theta_hat=out.theta_hat, rel_err_per_sample=out.rel_err_per_sample,
                   std_error=out.std_error, n_samples=out.n_samples, n_blowups=out.n_blowups)
    return {k: _fmt(v) for k, v in row.items()}


def append_rows(path: str | os.PathLike, rows: Iterable[dict]) -> None:
    """Append rows, writing the header first if the file is new or empty."""
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        if new:
            writer.writeheader()
        for row in rows:
            writer.writerow(row)


def read_rows(path: str | os.PathLike) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def summary_line(row: dict) -> str:
    if row["error"]:
        return f"example {row['example']} {row['method']} eps={row['epsilon']} delta={row['delta']}: ERROR {row['error']}"
    theta = float(row["theta_hat"])
    rho = float(row["rel_err_per_sample"])
    return (f"example {row['example']} {row['method']:>3} eps={float(row['epsilon']):g} "
            f"delta={float(row['delta']):g}: theta={theta:.3e} rho={rho:.3f} "
            f"se={float(row['std_error']):.2e} N={row['n_samples']} blowups={row['n_blowups']} "
            f"[{row['subsolution_variant']}] {float(row['wall_time_s']):.1f}s")


def run_experiment(cfg: ExperimentConfig, echo: Callable[[str], None] | None = print
                   ) -> tuple[EstimatorOutput, dict]:
    """Build, simulate, and (if ``cfg.out_path`` is set) append one CSV row."""
    exp = build_experiment(cfg)
    start = time.perf_counter()
    out = estimate(exp.model, exp.scaling, exp.control, exp.averaged, exp.terminal_H, cfg.n_samples,
                   cfg.base_seed, workers=cfg.workers, y0=exp.y0, method_tag=cfg.method)
    row = result_row(cfg, out, time.perf_counter() - start, exp.variant)
    if cfg.out_path:
        append_rows(cfg.out_path, [row])
    if echo is not None:
        echo(summary_line(row))
    return out, row


def run_table(example_id: int, rows: Sequence[tuple[float, float]], methods: Sequence[str],
              n_samples: int | None = None, base_seed: int = 0, out_path: str | None = None,
              echo: Callable[[str], None] | None = print, **overrides) -> list[dict]:
    """Run every (epsilon, delta, method) combination in order.

    A failing combination is recorded with its error message and the table
    continues.  With an empty ``methods`` list only the header is written.
    """
    if not rows:
        raise ConfigError("rows must not be empty")
    results = []
    configs = []
    for eps, delta in rows:
        for method in methods:
            configs.append(make_config(example_id, method, eps, delta, n_samples=n_samples,
                                       base_seed=base_seed, **overrides))
    if out_path and not os.path.exists(out_path):
        append_rows(out_path, [])
    for cfg in configs:
        start = time.perf_counter()
        try:
            _, row = run_experiment(dataclasses.replace(cfg, out_path=None), echo=None)
        except Exception as exc:  # noqa: BLE001 - recorded in the row
            row = result_row(cfg, None, time.perf_counter() - start, "", error=f"{type(exc).__name__}: {exc}")
        if out_path:
            append_rows(out_path, [row])
        if echo is not None:
            echo(summary_line(row))
        results.append(row)
    return results


# ---------------------------------------------------------------------------
# Reference table layouts


@dataclass(frozen=True)
class TableSchedule:
    example_id: int
    regime: int
    rows: tuple
    methods: tuple


TABLE_SCHEDULES = {
    "table1": TableSchedule(3, 1, ((0.25, 0.1), (0.125, 0.04), (0.0625, 0.015), (0.03125, 0.007),
                                   (0.025, 0.005), (0.02, 0.003)), ("nmc", "ld", "md")),
    "table2": TableSchedule(2, 1, ((0.5, 0.3), (0.25, 0.1), (0.125, 0.04), (0.0625, 0.015),
                                   (0.03125, 0.0065), (0.025, 0.0045)), ("nmc", "md")),
    "table3": TableSchedule(2, 2, ((0.5, 0.5), (0.25, 0.25), (0.125, 0.125), (0.0625, 0.0625),
                                   (0.03125, 0.03125), (0.025, 0.025), (0.015, 0.015)), ("nmc", "md")),
    "table4": TableSchedule(1, 2, ((0.5, 0.5), (0.3, 0.3), (0.1, 0.1), (0.07, 0.07), (0.05, 0.05),
                                   (0.03, 0.03)), ("nmc", "md")),
}


def read_rows_file(path: str | os.PathLike) -> list[tuple[float, float]]:
    """Read ``epsilon delta`` pairs, one per line, separated by spaces or a comma."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.split("#", 1)[0].replace(",", " ").split()
            if not text:
                continue
            if len(text) != 2:
                raise ConfigError(f"{path}:{lineno}: expected 'epsilon delta'")
            try:
                rows.append((float(text[0]), float(text[1])))
            except ValueError:
                raise ConfigError(f"{path}:{lineno}: not a number") from None
    if not rows:
        raise ConfigError(f"{path}: no rows")
    return rows
