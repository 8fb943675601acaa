"""Backward Heun integration of ``dx/dt = V(x, t)`` from the terminal law to data."""

import math
from dataclasses import dataclass, field

import numpy as np

from .core import make_rng
from .errors import DivergenceError
from .hgf import Diffusion, Oscillation, analytic_hvp

LEARNED_T_MIN = 1e-3


def edm_sigmas(n, sigma_min=0.002, sigma_max=80.0, rho=7.0):
    """``n`` noise levels from ``sigma_max`` down to ``sigma_min`` with polynomial (rho) spacing."""
    if n < 1:
        raise ValueError("need at least one noise level")
    if not 0 < sigma_min <= sigma_max:
        raise ValueError("need 0 < sigma_min <= sigma_max")
    if n == 1:
        return np.array([sigma_max], dtype=np.float64)
    i = np.arange(n) / (n - 1)
    a, b = sigma_max ** (1 / rho), sigma_min ** (1 / rho)
    return (a + i * (b - a)) ** rho


def edm_time_grid(sigmas, alpha=1.0):
    """Oscillation times ``arctan(alpha sigma) / alpha`` that see the same noise levels as ``sigma``."""
    s = np.asarray(sigmas, dtype=np.float64)
    if np.any(s <= 0):
        raise ValueError("noise levels must be positive")
    if np.any(np.diff(s) >= 0):
        raise ValueError("noise levels must be strictly decreasing")
    return np.arctan(alpha * s) / alpha


@dataclass
class Schedule:
    """Descending time grid ending at ``t_min`` (0 for exact predictors) plus the terminal law."""

    kind: object
    times: np.ndarray
    terminal: str = "default"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        if self.times.ndim != 1 or len(self.times) < 2:
            raise ValueError("time grid needs at least two points")
        if np.any(np.diff(self.times) >= 0):
            raise ValueError("time grid must be strictly decreasing")
        if self.times[-1] < 0:
            raise ValueError("time grid must end at t >= 0")

    @property
    def n_steps(self):
        return len(self.times) - 1

    def describe(self):
        return {**self.kind.describe(), "terminal": self.terminal, "times": self.times.tolist(), **self.meta}


def make_schedule(kind, steps, learned=False, terminal="default", t_min=None, rho=7.0, sigma_min=0.002,
                  sigma_max=80.0):
    """Default grid per kind: arctan-mapped polynomial noise levels for oscillation, polynomial
    noise levels for diffusion, uniform otherwise. Learned predictors stop at ``t_min = 1e-3``."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    end = (LEARNED_T_MIN if learned else 0.0) if t_min is None else float(t_min)
    T = kind.horizon
    if isinstance(kind, Oscillation) and steps >= 2:
        inner = edm_time_grid(edm_sigmas(steps - 1, sigma_min, sigma_max, rho), kind.alpha)
        inner = inner[(inner < T) & (inner > end)]
        times = np.concatenate([[T], inner, [end]])
    elif isinstance(kind, Diffusion) and steps >= 2:
        inner = edm_sigmas(steps, max(sigma_min, end) if end > 0 else sigma_min, T, rho)
        times = np.concatenate([inner[inner > end], [end]])
    else:
        times = np.linspace(T, end, steps + 1)
    return Schedule(kind, times, terminal, {"steps": steps, "learned": learned})


def terminal_sample(sched, rng, n):
    return sched.kind.terminal_sample(make_rng(rng), n, sched.terminal)


def analytic_predictor(kind):
    return lambda x, t: analytic_hvp(kind, x, t)


def net_predictor(net):
    """Wrap a velocity net as ``V(x, t)`` with scalar ``t``."""
    if net.time_conditioned:
        return lambda x, t: net.forward(x, np.full(x.shape[0], t))
    return lambda x, t: net.forward(x)


def _check(x, step):
    if not np.all(np.isfinite(x)):
        raise DivergenceError("sampler state became non-finite", step=step)


def heun_integrate(V, x, times, project=None, t_floor=0.0):
    """Heun (trapezoidal predictor-corrector) along ``times``; ``V(x, t)`` returns ``dx/dt``.

    A step whose corrector would evaluate ``V`` below ``t_floor`` falls back to Euler.
    """
    x = np.array(x, dtype=np.float64, copy=True)
    for i in range(len(times) - 1):
        t, t_next = float(times[i]), float(times[i + 1])
        h = t_next - t
        d1 = np.asarray(V(x, t))
        x_pred = x + h * d1
        if t_next < t_floor:
            x = x_pred
        else:
            d2 = np.asarray(V(x_pred if project is None else project(x_pred), t_next))
            x = x + 0.5 * h * (d1 + d2)
        if project is not None:
            x = project(x)
        _check(x, i)
    return x


def heun_sample(V, sched, rng, n, x_init=None, t_floor=0.0):
    """Draw from the terminal law and integrate the velocity-predictor ODE backward along the grid."""
    rng = make_rng(rng)
    x = terminal_sample(sched, rng, n) if x_init is None else np.asarray(x_init, dtype=np.float64)
    return heun_integrate(V, x, sched.times, sched.kind.project, t_floor)


def edm_heun_integrate(score, x, sigmas):
    """EDM probability-flow ODE ``dx/dsigma = -sigma * score(x, sigma)`` with Heun steps.

    ``sigmas`` is the descending grid including its final point; the last step
    falls back to Euler when it lands on ``sigma = 0``.
    """
    x = np.array(x, dtype=np.float64, copy=True)
    for i in range(len(sigmas) - 1):
        s, s_next = float(sigmas[i]), float(sigmas[i + 1])
        d1 = -s * score(x, s)
        x_pred = x + (s_next - s) * d1
        if s_next > 0:
            d2 = -s_next * score(x_pred, s_next)
            x = x + 0.5 * (s_next - s) * (d1 + d2)
        else:
            x = x_pred
        _check(x, i)
    return x


def mixture_smoothed_score(m):
    """Score of ``pi * N(0, sigma^2 I)`` as ``score(x, sigma)``."""
    return lambda x, s: m.smoothed(s).score(x)


def oscillation_from_edm_state(x_edm, sigma, alpha=1.0):
    """Map an EDM state at noise ``sigma`` to the oscillation location at ``arctan(alpha sigma)/alpha``.

    The oscillation location is ``cos(alpha t)`` times a ``sigma``-smoothed data point.
    """
    t = math.atan(alpha * sigma) / alpha
    return math.cos(alpha * t) * np.asarray(x_edm, dtype=np.float64)


def edm_equivalence(m, x_start, sigmas, alpha=1.0):
    """Integrate the EDM ODE and the oscillation predictor ODE on matched grids.

    Returns ``(x_edm, x_osc)``; both start from the same point (scaled by
    ``cos(alpha t)`` for the oscillation side) and end at ``t = sigma = 0``.
    """
    sig = np.asarray(sigmas, dtype=np.float64)
    full = np.concatenate([sig, [0.0]])
    x_edm = edm_heun_integrate(mixture_smoothed_score(m), x_start, full)
    kind = Oscillation(m, alpha)
    times = np.concatenate([edm_time_grid(sig, alpha), [0.0]])
    x0 = oscillation_from_edm_state(x_start, sig[0], alpha)
    x_osc = heun_integrate(analytic_predictor(kind), x0, times)
    return x_edm, x_osc


__all__ = ["Schedule", "make_schedule", "edm_sigmas", "edm_time_grid", "terminal_sample", "heun_sample",
           "heun_integrate", "edm_heun_integrate", "edm_equivalence", "analytic_predictor", "net_predictor",
           "mixture_smoothed_score"]
