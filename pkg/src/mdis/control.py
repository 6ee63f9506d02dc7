"""HJB coefficients, subsolutions, their verification, and feedback controls.

Conventions: ``t`` is a scalar time; ``eta`` and ``y`` carry the state in the
last axis and may have any leading batch shape. Subsolution values and
terminal costs return arrays of the batch shape; gradients keep the trailing
state axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .averaging import AveragedPath, RoughPotentialConstants, cell_gradient_factor
from .model import ParameterError, Regime, rough_Q

# Subsolution variant labels, recorded with every result row.
GENERAL = "general"
EXACT_CONSTANT_C = "exact_constant_c"
MD_MATCHED = "md_matched"
MD_BETA_LEVEL = "md_beta_level"
LD_CLOSED_FORM = "ld_closed_form"
ZERO = "zero"


@dataclass(frozen=True, eq=False)
class HJBCoefficients:
    """Coefficients of the Hamiltonian <kappa, p> - p.q.p/2 along the averaged path.

    ``kappa_md(t, eta)`` is affine in ``eta``; ``q(t)`` is an ``(n, n)`` PSD
    matrix; ``alpha1(t, y)``/``alpha2(t, y)`` return ``(..., n, m)``.
    """

    kappa_md: Callable
    q: Callable
    alpha1: Callable
    alpha2: Callable
    label: str = ""


@dataclass(frozen=True, eq=False)
class Subsolution:
    value: Callable
    grad_eta: Callable
    dt_value: Callable
    terminal_H: Callable
    T: float
    label: str = ""
    # eta-locations where the construction switches branch
    kinks: tuple = ()


@dataclass(frozen=True, eq=False)
class FeedbackControl:
    """``u(t, eta, y) -> (u1, u2)``, each of shape ``(..., n_wiener)``."""

    u: Callable
    label: str = ""
    is_zero: bool = False


def hamiltonian(hjb: HJBCoefficients, t, eta, p) -> np.ndarray:
    eta = np.asarray(eta, dtype=float)
    p = np.asarray(p, dtype=float)
    drift = hjb.kappa_md(t, eta)
    q = np.asarray(hjb.q(t), dtype=float)
    return np.sum(drift * p, axis=-1) - 0.5 * np.einsum("...i,ij,...j->...", p, q, p)


def subsolution_residual(sub: Subsolution, hjb: HJBCoefficients, t, eta) -> np.ndarray:
    """d/dt U + Lambda(t, eta, grad U); non-negative for a subsolution."""
    eta = np.asarray(eta, dtype=float)
    return sub.dt_value(t, eta) + hamiltonian(hjb, t, eta, sub.grad_eta(t, eta))


@dataclass
class SubsolutionReport:
    min_residual: float
    argmin: tuple
    terminal_gap: float
    passed: bool
    tol: float
    terminal_tol: float
    n_points: int
    kink_points: list = field(default_factory=list)

    def lines(self) -> list[str]:
        t, eta = self.argmin
        return [
            f"passed={int(self.passed)}",
            f"min_residual={self.min_residual:.17g}",
            f"argmin_t={t:.17g}",
            "argmin_eta=" + ",".join(f"{v:.17g}" for v in np.atleast_1d(eta)),
            f"terminal_gap={self.terminal_gap:.17g}",
            f"tol={self.tol:.3g}",
            f"terminal_tol={self.terminal_tol:.3g}",
            f"n_points={self.n_points}",
            f"n_kink_points={len(self.kink_points)}",
        ]


def _as_points(eta_grid) -> np.ndarray:
    pts = np.asarray(eta_grid, dtype=float)
    return pts[:, None] if pts.ndim == 1 else pts


def verify_subsolution(
    sub: Subsolution,
    hjb: HJBCoefficients,
    t_grid=None,
    eta_grid=None,
    tol: float = 1e-8,
    terminal_tol: float | None = None,
    t0: float = 0.0,
) -> SubsolutionReport:
    """Sweep the subsolution inequalities over a tensor grid.

    Defaults to 201 x 201 nodes on ``[t0, T] x [-10, 10]``. Grid points lying on
    a kink are left out of the residual sweep and reported in ``kink_points``.
    """
    if tol < 0:
        raise ParameterError("tol must be non-negative")
    terminal_tol = tol if terminal_tol is None else terminal_tol
    t_grid = np.linspace(t0, sub.T, 201) if t_grid is None else np.asarray(t_grid, dtype=float)
    pts = _as_points(np.linspace(-10.0, 10.0, 201) if eta_grid is None else eta_grid)
    if t_grid.size == 0 or pts.size == 0:
        raise ParameterError("grids must be non-empty")

    on_kink = np.zeros(len(pts), dtype=bool)
    scale = max(1.0, float(np.max(np.abs(pts))))
    for kink in sub.kinks:
        on_kink |= np.any(np.abs(pts - kink) <= 1e-9 * scale, axis=-1)
    smooth = pts[~on_kink]

    best, argmin = math.inf, (math.nan, np.full(pts.shape[1], math.nan))
    for t in t_grid:
        res = subsolution_residual(sub, hjb, float(t), smooth)
        i = int(np.argmin(res))
        if res[i] < best:
            best, argmin = float(res[i]), (float(t), smooth[i].copy())
    kink_points = [(float(t), p.copy()) for t in t_grid for p in pts[on_kink]]

    gap = float(np.max(sub.value(sub.T, pts) - sub.terminal_H(pts)))
    passed = best >= -tol and gap <= terminal_tol
    return SubsolutionReport(
        best, argmin, gap, bool(passed), tol, terminal_tol, int(t_grid.size * len(smooth)), kink_points
    )


# ---------------------------------------------------------------------------
# Time-dependent rates c(t) and their cumulative integrals


class ConstantRate:
    def __init__(self, c: float, t0: float = 0.0):
        self.c = float(c)
        self.t0 = float(t0)
        self.is_constant = True

    def __call__(self, t):
        return np.full(np.shape(t), self.c) if np.ndim(t) else self.c

    def integral(self, t):
        return self.c * (np.asarray(t, dtype=float) - self.t0)


class GridRate:
    """Rate known on a grid; linear interpolation, trapezoid cumulative integral."""

    def __init__(self, times, values):
        self.times = np.asarray(times, dtype=float)
        self.values = np.asarray(values, dtype=float)
        self.cumulative = cumulative_trapezoid(self.values, self.times, initial=0.0)
        self.is_constant = bool(np.all(self.values == self.values[0]))

    @classmethod
    def from_averaged(cls, averaged: AveragedPath, curvature) -> "GridRate":
        return cls(averaged.times, curvature(averaged.values[:, 0]))

    def __call__(self, t):
        return np.interp(t, self.times, self.values)

    def integral(self, t):
        return np.interp(t, self.times, self.cumulative)


def example1_curvature(x):
    """V1''(x) = 6x^2 - 2."""
    return 6.0 * np.asarray(x, dtype=float) ** 2 - 2.0


# ---------------------------------------------------------------------------
# Quadratic-ratio subsolutions
#
#   U(t, eta) = (gamma - s(eta) * r(t))^2 / (1 + k (1 - r(t)^2)),
#   r(t) = exp(C(t) - C(T)),  C' = c,
#
# with s(eta) = eta, or |eta| for the mirrored (min of two branches) form.
# The un-normalised closed form divided through by exp(2 C(T)).


def _quadratic_subsolution(gamma, k, rate, T, terminal_H, label, mirrored=False) -> Subsolution:
    gamma = float(gamma)
    k = float(k)
    C_T = float(rate.integral(T))

    def parts(t, eta):
        e = np.asarray(eta, dtype=float)[..., 0]
        r = math.exp(float(rate.integral(t)) - C_T)
        s = np.abs(e) if mirrored else e
        den = 1.0 + k * (1.0 - r * r)
        return e, s, r, gamma - s * r, den

    def value(t, eta):
        _, _, _, num, den = parts(t, eta)
        return num * num / den

    def grad_eta(t, eta):
        e, _, r, num, den = parts(t, eta)
        g = -2.0 * num * r / den
        if mirrored:
            g = np.where(e >= 0.0, g, -g)
        return g[..., None]

    def dt_value(t, eta):
        _, s, r, num, den = parts(t, eta)
        c = float(rate(t))
        return -2.0 * num * s * c * r / den + 2.0 * k * c * r * r * num * num / (den * den)

    return Subsolution(value, grad_eta, dt_value, terminal_H, float(T), label, (0.0,) if mirrored else ())


def quadratic_terminal_cost(gamma: float):
    """H(eta) = (eta - gamma)^2."""

    def H(eta):
        return (np.asarray(eta, dtype=float)[..., 0] - gamma) ** 2

    return H


def example12_subsolution(gamma_target, D, c_path, T, variant=GENERAL, terminal_H=None) -> Subsolution:
    """Subsolution family for the two-scale gradient system.

    ``general`` uses the denominator weight 2D and is a subsolution whenever
    c > 1; ``exact_constant_c`` uses 2D/c (D/2 for c = 4), which solves the
    HJB equation exactly and therefore requires a constant rate.
    """
    if not D > 0:
        raise ParameterError("D must be positive")
    if terminal_H is None:
        terminal_H = quadratic_terminal_cost(gamma_target)
    if variant == GENERAL:
        k = 2.0 * D
    elif variant == EXACT_CONSTANT_C:
        if not getattr(c_path, "is_constant", False):
            raise ParameterError("the exact variant needs a constant rate c")
        c = float(c_path(T))
        if not c > 0:
            raise ParameterError("the exact variant needs c > 0")
        k = 2.0 * D / c
    else:
        raise ParameterError(f"unknown variant {variant!r}")
    return _quadratic_subsolution(gamma_target, k, c_path, T, terminal_H, variant)


def example2_terminal_cost(x_bar_T: float, beta: float):
    """H(eta; beta) = (eta - (1 - xbar_T)/beta)^2."""
    return quadratic_terminal_cost((1.0 - float(x_bar_T)) / beta)


def example3_terminal_cost(x_bar_T: float, beta: float):
    """Piecewise H(eta; beta) aiming at x = +1 or x = -1 depending on the side of 0."""
    x_bar_T = float(x_bar_T)

    def H(eta):
        e = np.asarray(eta, dtype=float)[..., 0]
        right = (e - (1.0 - x_bar_T) / beta) ** 2
        left = (e + (1.0 + x_bar_T) / beta) ** 2
        return np.where(e + x_bar_T / beta >= 0.0, right, left)

    return H


def example2_cost(x):
    """R(x) = (x - 1)^2."""
    return (np.asarray(x, dtype=float) - 1.0) ** 2


def example3_cost(x):
    x = np.asarray(x, dtype=float)
    return np.where(x >= 0.0, (x - 1.0) ** 2, (x + 1.0) ** 2)


def example3_md_subsolution(beta, D, kappa_hom, T, variant=MD_MATCHED) -> Subsolution:
    """min of the two mirrored quadratics for the rough-potential problem from x0 = 0.

    ``md_matched`` aims at eta = +-1/beta, so that U(T, .) = H(.; beta);
    ``md_beta_level`` aims at eta = +-beta; its terminal value exceeds H for
    |eta| > (beta + 1/beta)/2, so it is not a subsolution.
    """
    if not beta > 0:
        raise ParameterError("beta must be positive")
    if variant == MD_MATCHED:
        level = 1.0 / beta
    elif variant == MD_BETA_LEVEL:
        level = beta
    else:
        raise ParameterError(f"unknown variant {variant!r}")
    H = example3_terminal_cost(0.0, beta)
    return _quadratic_subsolution(level, 2.0 * D, ConstantRate(kappa_hom), T, H, variant, mirrored=True)


def example3_ld_subsolution(D, kappa_hom, T) -> Subsolution:
    """Large-deviations solution in the slow variable x (R(x) as terminal cost)."""

    def H(x):
        return example3_cost(np.asarray(x, dtype=float)[..., 0])

    return _quadratic_subsolution(1.0, 2.0 * D, ConstantRate(kappa_hom), T, H, LD_CLOSED_FORM, mirrored=True)


def zero_subsolution(terminal_H, T, n: int = 1) -> Subsolution:
    def value(t, eta):
        return np.zeros(np.shape(eta)[:-1])

    def grad_eta(t, eta):
        return np.zeros(np.shape(eta)[:-1] + (n,))

    return Subsolution(value, grad_eta, value, terminal_H, float(T), ZERO)


# ---------------------------------------------------------------------------
# Bundled HJB bindings


def _constant_alpha(value: float, n: int = 1, m: int = 1):
    mat = np.full((n, m), float(value))

    def alpha(t, y):
        y = np.asarray(y, dtype=float)
        return np.broadcast_to(mat, y.shape[:-1] + mat.shape)

    return alpha


def example12_hjb(averaged: AveragedPath, D: float, regime) -> tuple[HJBCoefficients, GridRate]:
    """HJB coefficients kappa = -c(t) eta, q = 2D along the averaged path.

    alpha1 = sqrt(2D); alpha2 = 1 in Regime 2 and 0 in Regime 1, which gives
    the controls u1 = -sqrt(2D) dU and u2 = -dU (or 0).
    """
    regime = Regime.parse(regime)
    rate = GridRate.from_averaged(averaged, example1_curvature)
    q = np.array([[2.0 * D]])

    def kappa_md(t, eta):
        return -rate(t) * np.asarray(eta, dtype=float)

    hjb = HJBCoefficients(
        kappa_md,
        lambda t: q,
        _constant_alpha(math.sqrt(2.0 * D)),
        _constant_alpha(1.0 if regime is Regime.REGIME2 else 0.0),
        f"example12-regime{regime.value}",
    )
    return hjb, rate


def example3_hjb(constants: RoughPotentialConstants, D: float) -> HJBCoefficients:
    """kappa = -kappa_hom V''(xbar) eta with V'' = 1, q = 2 kappa_hom D.

    alpha1(y) = sqrt(2D) (2 pi/L_hat) exp(Q(y)/D); alpha2 = 0.
    """
    kap = constants.kappa_hom
    q = np.array([[2.0 * kap * D]])
    root = math.sqrt(2.0 * D)

    def kappa_md(t, eta):
        return -kap * np.asarray(eta, dtype=float)

    def alpha1(t, y):
        return (root * cell_gradient_factor(np.asarray(y, dtype=float), constants))[..., None]

    return HJBCoefficients(kappa_md, lambda t: q, alpha1, _constant_alpha(0.0), "example3")


# ---------------------------------------------------------------------------
# Feedback controls


def _alpha_transpose_times(alpha, p):
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape[-2] == 1:
        return alpha[..., 0, :] * p[..., 0:1]
    return np.einsum("...nm,...n->...m", alpha, p)


def md_feedback_control(sub: Subsolution, hjb: HJBCoefficients) -> FeedbackControl:
    """u = (-alpha1^T grad U, -alpha2^T grad U) evaluated along the averaged path."""
    if sub.label == ZERO:
        return zero_control(hjb)

    def u(t, eta, y):
        p = sub.grad_eta(t, eta)
        return -_alpha_transpose_times(hjb.alpha1(t, y), p), -_alpha_transpose_times(hjb.alpha2(t, y), p)

    return FeedbackControl(u, f"md:{sub.label}")


def zero_control(hjb: HJBCoefficients | None = None, n_wiener: int = 1) -> FeedbackControl:
    def u(t, eta, y):
        z = np.zeros(np.shape(eta)[:-1] + (n_wiener,))
        return z, z.copy()

    return FeedbackControl(u, ZERO, is_zero=True)


def example3_ld_control(t, x, delta, constants: RoughPotentialConstants, D, T):
    """Explicit large-deviations control for the rough potential (x = 0 takes the x > 0 branch)."""
    x = np.asarray(x, dtype=float)
    kap = constants.kappa_hom
    factor = -math.sqrt(2.0 * D) * (2.0 * math.pi / constants.L_hat)
    factor = factor * np.exp((np.cos(x / delta) + np.sin(x / delta)) / D)
    ekt, ekT = math.exp(kap * t), math.exp(kap * T)
    den = -2.0 * D * ekt**2 + (1.0 + 2.0 * D) * ekT**2
    right = -2.0 * ekt * (ekT - x * ekt) / den
    left = 2.0 * ekt * (ekT + x * ekt) / den
    return factor * np.where(x >= 0.0, right, left)


def example3_ld_feedback(constants, D, T, delta, averaged: AveragedPath) -> FeedbackControl:
    """LD control in feedback form; under the LD embedding x = xbar(t) + eta."""

    def u(t, eta, y):
        x = averaged.at(t)[..., 0] + np.asarray(eta, dtype=float)[..., 0]
        u1 = example3_ld_control(t, x, delta, constants, D, T)[..., None]
        return u1, np.zeros_like(u1)

    return FeedbackControl(u, LD_CLOSED_FORM)


def example3_md_control_explicit(t, eta, x, beta, delta, constants, D, T):
    """Explicit MD control formula (level beta), for cross-checking the generic route."""
    eta = np.asarray(eta, dtype=float)
    kap = constants.kappa_hom
    factor = -math.sqrt(2.0 * D) * (2.0 * math.pi / constants.L_hat)
    factor = factor * np.exp((np.cos(x / delta) + np.sin(x / delta)) / D)
    ekt, ekT = math.exp(kap * t), math.exp(kap * T)
    den = -2.0 * D * ekt**2 + (1.0 + 2.0 * D) * ekT**2
    right = -2.0 * ekt * (beta * ekT - eta * ekt) / den
    left = 2.0 * ekt * (beta * ekT + eta * ekt) / den
    return factor * np.where(eta >= 0.0, right, left)
