"""Controlled Euler-Maruyama simulation, Girsanov weights and estimator aggregation.

Random streams
--------------
Trajectories are grouped into consecutive blocks of ``STREAM_CHUNK``. Block
``c`` owns the stream ``SFC64(SeedSequence(base_seed, spawn_key=(c,)))`` and
draws one ``(block_size, n_noise)`` slab of standard normals per time step, so
trajectory ``i`` always sees lane ``i % STREAM_CHUNK`` of stream
``i // STREAM_CHUNK``. Worker count only decides which process simulates a
block, never what it draws.
"""

from __future__ import annotations

import logging
import math
import multiprocessing as mp
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .averaging import AveragedPath
from .control import FeedbackControl
from .model import ConstantCoefficient, MultiscaleModel, ParameterError, ScalingParams, is_zero_coefficient

log = logging.getLogger(__name__)

STREAM_CHUNK = 8192
# time steps of normals drawn per generator call (does not affect the stream)
_NORMAL_BLOCK = 16


class EstimationError(RuntimeError):
    pass


def trajectory_stream(base_seed: int, chunk_index: int) -> np.random.Generator:
    seq = np.random.SeedSequence(entropy=int(base_seed), spawn_key=(int(chunk_index),))
    return np.random.Generator(np.random.SFC64(seq))


def md_process_value(x, x_bar, beta):
    """eta = (x - xbar)/beta."""
    if not beta > 0:
        raise ParameterError("beta must be positive")
    return (np.asarray(x, dtype=float) - x_bar) / beta


def md_ld_payoff_identity(x_T, x_bar_T, scaling: ScalingParams, R: Callable, H: Callable):
    """Return (exp(-R(x_T)/eps), exp(-h^2 H(eta_T))) for the same terminal states."""
    x_T = np.asarray(x_T, dtype=float)
    eta = md_process_value(x_T, x_bar_T, scaling.beta)
    lhs = np.exp(-R(x_T) / scaling.epsilon)
    rhs = np.exp(-(scaling.h**2) * H(eta[..., None]))
    return lhs, rhs


@dataclass(frozen=True)
class TrajectoryOutcome:
    eta_T: np.ndarray
    log_weight: float
    payoff: float
    blew_up: bool


@dataclass(frozen=True, eq=False)
class BatchOutcome:
    eta_T: np.ndarray
    log_weight: np.ndarray
    payoff: np.ndarray
    blew_up: np.ndarray

    def __len__(self):
        return len(self.payoff)

    @staticmethod
    def concatenate(parts) -> "BatchOutcome":
        parts = list(parts)
        return BatchOutcome(*(np.concatenate([getattr(p, f) for p in parts]) for f in
                              ("eta_T", "log_weight", "payoff", "blew_up")))


@dataclass(frozen=True)
class EstimatorOutput:
    n_samples: int
    theta_hat: float
    var_hat: float
    rel_err_per_sample: float
    std_error: float
    seed: int
    method_tag: str
    n_blowups: int
    # Monte Carlo mean of the likelihood ratio dP/dP~ and its standard error
    weight_mean: float = math.nan
    weight_std_error: float = math.nan

    @property
    def second_moment(self) -> float:
        return self.var_hat + self.theta_hat**2


def log_weight_increment(u, z, h, dt):
    """-h^2 |u|^2 dt / 2 - h <u, dW> with dW = sqrt(dt) z, summed over the last axis.

    Its exponential has mean one for standard normal ``z`` and fixed ``u``.
    """
    u = np.asarray(u, dtype=float)
    return -0.5 * h * h * dt * np.sum(u * u, axis=-1) - h * math.sqrt(dt) * np.sum(u * z, axis=-1)


def _coefficient(coef):
    """Constant coefficients are returned as arrays, everything else as None."""
    if isinstance(coef, ConstantCoefficient):
        return coef.value
    return None


def _matvec(M, v):
    if M.shape[-2:] == (1, 1):
        return M[..., 0] * v
    if M.ndim == 2:
        return v @ M.T
    return np.einsum("nkm,nm->nk", M, v)


class _Plan:
    """Everything a block simulation needs, resolved once per experiment."""

    def __init__(self, model, scaling, control, averaged, H, y0):
        self.model = model
        self.control = control
        self.H = H
        self.eps = scaling.epsilon
        self.delta = scaling.delta
        self.beta = scaling.beta
        self.h = scaling.h
        self.times = averaged.times
        self.dts = np.diff(averaged.times)
        self.sqrt_dts = np.sqrt(self.dts)
        self.xbar = averaged.values
        if self.xbar.shape[1] != model.n_slow:
            raise ParameterError("averaged path dimension does not match the model")
        self.x0 = averaged.values[0].copy()
        self.m = model.n_wiener
        self.embedded = model.is_embedded
        if self.embedded:
            self.y0 = self.x0 / self.delta
        else:
            self.y0 = np.zeros(model.n_fast) if y0 is None else np.atleast_1d(np.asarray(y0, dtype=float))
            if self.y0.shape != (model.n_fast,):
                raise ParameterError("y0 has the wrong dimension")
        self.n_noise = self.m if self.embedded else 2 * self.m
        self.skip_b = is_zero_coefficient(model.drift_b)
        self.skip_f = is_zero_coefficient(model.drift_f)
        self.skip_g = is_zero_coefficient(model.drift_g)
        self.skip_tau1 = is_zero_coefficient(model.diffusion_tau1)
        self.skip_tau2 = is_zero_coefficient(model.diffusion_tau2)
        self.sigma_const = _coefficient(model.diffusion_sigma)
        self.tau1_const = _coefficient(model.diffusion_tau1)
        self.tau2_const = _coefficient(model.diffusion_tau2)

    def _coef(self, const, fn, x, y):
        return const if const is not None else fn(x, y)

    def run(self, rng: np.random.Generator, n: int) -> BatchOutcome:
        model, control = self.model, self.control
        eps_d, sqrt_eps, beta, h, delta = self.eps / self.delta, math.sqrt(self.eps), self.beta, self.h, self.delta
        m = self.m
        controlled = not control.is_zero
        x = np.repeat(self.x0[None, :], n, axis=0)
        y = np.repeat(self.y0[None, :], n, axis=0)
        logw = np.zeros(n)
        n_steps = len(self.dts)
        block = None
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            for k in range(n_steps):
                j = k % _NORMAL_BLOCK
                if j == 0:
                    block = rng.standard_normal((min(_NORMAL_BLOCK, n_steps - k), n, self.n_noise))
                z = block[j]
                t, dt, sdt = self.times[k], self.dts[k], self.sqrt_dts[k]
                if self.embedded:
                    y = x / delta
                sigma = self._coef(self.sigma_const, model.diffusion_sigma, x, y)

                drift = model.drift_c(x, y)
                if not self.skip_b:
                    drift = drift + eps_d * model.drift_b(x, y)
                zw = z[:, :m]
                if controlled:
                    eta = (x - self.xbar[k]) / beta
                    u1, u2 = control.u(t, eta, y)
                    drift = drift + beta * _matvec(sigma, u1)
                    if self.embedded:
                        logw += log_weight_increment(u1, zw, h, dt)
                    else:
                        logw += log_weight_increment(u1, zw, h, dt) + log_weight_increment(u2, z[:, m:], h, dt)

                if not self.embedded:
                    y = self._fast_update(x, y, z, dt, sdt, eps_d, sqrt_eps, beta, u1 if controlled else None,
                                          u2 if controlled else None)
                x = x + drift * dt + (sqrt_eps * sdt) * _matvec(sigma, zw)

        eta_T = (x - self.xbar[-1]) / beta
        with np.errstate(over="ignore", invalid="ignore"):
            payoff = np.exp(-h * h * self.H(eta_T) + logw)
        blew_up = ~(np.all(np.isfinite(x), axis=-1) & np.isfinite(logw) & np.isfinite(payoff))
        if not self.embedded:
            blew_up |= ~np.all(np.isfinite(y), axis=-1)
        payoff = np.where(blew_up, 0.0, payoff)
        return BatchOutcome(eta_T, logw, payoff, blew_up)

    def _fast_update(self, x, y, z, dt, sdt, eps_d, sqrt_eps, beta, u1, u2):
        model, m, delta = self.model, self.m, self.delta
        drift = np.zeros_like(y)
        if not self.skip_f:
            drift = drift + eps_d * model.drift_f(x, y)
        if not self.skip_g:
            drift = drift + model.drift_g(x, y)
        noise = np.zeros_like(y)
        if not self.skip_tau1:
            tau1 = self._coef(self.tau1_const, model.diffusion_tau1, x, y)
            noise = noise + _matvec(tau1, z[:, :m])
            if u1 is not None:
                drift = drift + beta * _matvec(tau1, u1)
        if not self.skip_tau2:
            tau2 = self._coef(self.tau2_const, model.diffusion_tau2, x, y)
            noise = noise + _matvec(tau2, z[:, m:])
            if u2 is not None:
                drift = drift + beta * _matvec(tau2, u2)
        return y + (dt / delta) * drift + (sqrt_eps * sdt / delta) * noise


def simulate_paths(model, scaling, control, averaged, H, rng, n_paths, y0=None) -> BatchOutcome:
    """Simulate ``n_paths`` trajectories drawing from a single generator."""
    return _Plan(model, scaling, control, averaged, H, y0).run(rng, int(n_paths))


def simulate_trajectory(
    model: MultiscaleModel,
    scaling: ScalingParams,
    control: FeedbackControl,
    averaged: AveragedPath,
    H: Callable,
    rng_stream: np.random.Generator,
    y0=None,
) -> TrajectoryOutcome:
    out = simulate_paths(model, scaling, control, averaged, H, rng_stream, 1, y0)
    return TrajectoryOutcome(out.eta_T[0], float(out.log_weight[0]), float(out.payoff[0]), bool(out.blew_up[0]))


# Set before forking so that workers inherit the (unpicklable) closures.
_ACTIVE_PLAN: tuple | None = None


def _run_block(args) -> BatchOutcome:
    chunk, size = args
    plan, seed = _ACTIVE_PLAN
    return plan.run(trajectory_stream(seed, chunk), size)


def _blocks(N: int):
    return [(c, min(STREAM_CHUNK, N - c * STREAM_CHUNK)) for c in range(math.ceil(N / STREAM_CHUNK))]


def simulate_many(model, scaling, control, averaged, H, N, base_seed, workers=1, y0=None) -> BatchOutcome:
    """Simulate trajectories ``0..N-1`` on their keyed streams, in index order."""
    global _ACTIVE_PLAN
    if N < 1:
        raise ParameterError("N must be positive")
    plan = _Plan(model, scaling, control, averaged, H, y0)
    blocks = _blocks(int(N))
    workers = max(1, min(int(workers), len(blocks)))
    _ACTIVE_PLAN = (plan, int(base_seed))
    try:
        if workers == 1:
            parts = [_run_block(b) for b in blocks]
        else:
            with mp.get_context("fork").Pool(workers) as pool:
                parts = pool.map(_run_block, blocks, chunksize=1)
    finally:
        _ACTIVE_PLAN = None
    return BatchOutcome.concatenate(parts)


def _mean_and_var(values: np.ndarray) -> tuple[float, float]:
    # exactly rounded sums, so the result is independent of any partitioning
    n = len(values)
    mean = math.fsum(values) / n
    dev = values - mean
    return mean, math.fsum(dev * dev) / (n - 1)


def summarize(outcome: BatchOutcome, seed: int, method_tag: str) -> EstimatorOutput:
    N = len(outcome)
    if N < 2:
        raise EstimationError("need at least two samples")
    n_blowups = int(np.count_nonzero(outcome.blew_up))
    if n_blowups == N:
        raise EstimationError("every trajectory blew up")
    theta, var = _mean_and_var(outcome.payoff)
    std_error = math.sqrt(var / N)
    rel = math.sqrt(var) / theta if theta > 0 else math.inf
    ok = ~outcome.blew_up
    w_mean, w_var = _mean_and_var(np.exp(outcome.log_weight[ok])) if ok.sum() > 1 else (math.nan, math.nan)
    return EstimatorOutput(
        N, theta, var, rel, std_error, int(seed), method_tag, n_blowups,
        w_mean, math.sqrt(w_var / ok.sum()),
    )


def estimate(
    model: MultiscaleModel,
    scaling: ScalingParams,
    control: FeedbackControl,
    averaged: AveragedPath,
    H: Callable,
    N: int,
    base_seed: int,
    workers: int = 1,
    y0=None,
    method_tag: str = "md",
) -> EstimatorOutput:
    """Sample mean of N independent copies of exp(-h^2 H(eta_T)) dP/dP~."""
    if N < 2:
        raise ParameterError("N must be at least 2")
    outcome = simulate_many(model, scaling, control, averaged, H, N, base_seed, workers, y0)
    result = summarize(outcome, base_seed, method_tag)
    if result.n_blowups:
        log.warning("%d of %d trajectories blew up", result.n_blowups, N)
    return result
