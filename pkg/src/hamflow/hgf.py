"""Hamiltonian generative flows: velocity-predictor training for fixed force fields.

A *kind* pairs a data mixture with an initial velocity law and a force field,
and knows how to push ``(x, v)`` forward to time ``t``. The velocity predictor
``V(x, t) ~ E[v_t | x_t = x]`` is trained by regressing ``v_t`` on ``x_t``.
"""

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .core import GaussianMixture, alpha_from_moments, bounding_box, make_rng, sample_in_box
from .dynamics import (ForceField, PhaseState, flow_reflection, leapfrog, oscillation_coeffs,
                       reflect_into_box)
from .errors import DegenerateError, DivergenceError, UnsupportedError
from .net import AdamState, Tape, cosine_lr
from .net import tape as T


class HgfKind:
    """Base class. Subclasses define the initial law ``Pi`` and the forward flow."""

    name = "custom"
    default_horizon = 1.0

    def __init__(self, mixture: GaussianMixture, horizon=None):
        self.mixture = mixture
        self.horizon = float(self.default_horizon if horizon is None else horizon)
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")

    @property
    def d(self):
        return self.mixture.d

    def sample_data(self, rng, n):
        return self.mixture.sample(rng, n)

    def sample_initial(self, rng, n):
        x = self.sample_data(rng, n)
        return x, rng.standard_normal((n, self.d))

    def push(self, x, v, t):
        raise NotImplementedError

    def linear_coeffs(self, t):
        """``(a, b, c, d)`` if the flow is ``x_t = a x + b v, v_t = c x + d v``; else None."""
        return None

    def terminal_sample(self, rng, n, mode="default"):
        if mode in ("default", "exact"):
            x, v = self.sample_initial(rng, n)
            return self.push(x, v, self.horizon)[0]
        raise UnsupportedError(f"terminal mode {mode!r} not available for {self.name}")

    def project(self, x):
        """Map a backward-integrated state back into the state space (identity except for boxes)."""
        return x

    def describe(self):
        return {"kind": self.name, "horizon": self.horizon}


class Diffusion(HgfKind):
    """Zero force, ``Pi = pi x N(0, I)``: ``x_t = x + t v`` (variance-exploding, sigma(t) = t)."""

    name = "diffusion"
    default_horizon = 3.0

    def push(self, x, v, t):
        t = _col(t)
        return x + t * v, v

    def linear_coeffs(self, t):
        return 1.0, t, 0.0, 1.0

    def terminal_sample(self, rng, n, mode="default"):
        if mode in ("default", "gaussian"):
            return self.horizon * rng.standard_normal((n, self.d))
        return super().terminal_sample(rng, n, mode)


class FlowMatching(HgfKind):
    """Zero force with coupled start ``v = eps - x``: ``x_t = (1 - t) x + t eps``."""

    name = "flow_matching"
    default_horizon = 1.0

    def sample_initial(self, rng, n):
        # v holds eps here; push() applies the coupling
        return super().sample_initial(rng, n)

    def push(self, x, eps, t):
        t = _col(t)
        return (1.0 - t) * x + t * eps, eps - x

    def linear_coeffs(self, t):
        return 1.0 - t, t, -1.0, 1.0

    def terminal_sample(self, rng, n, mode="default"):
        if mode in ("default", "gaussian", "exact"):
            if abs(self.horizon - 1.0) > 1e-12 and mode != "gaussian":
                return super().terminal_sample(rng, n, "exact")
            return rng.standard_normal((n, self.d))
        return super().terminal_sample(rng, n, mode)


class Oscillation(HgfKind):
    """Harmonic force ``-alpha^2 x``; at ``T = pi / (2 alpha)`` the location law is ``N(0, I / alpha^2)``."""

    name = "oscillation"

    def __init__(self, mixture, alpha=None, horizon=None):
        self.alpha = alpha_from_moments(mixture) if alpha in (None, "auto") else float(alpha)
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        super().__init__(mixture, math.pi / (2 * self.alpha) if horizon is None else horizon)

    def push(self, x, v, t):
        a, b, c, d = oscillation_coeffs(_col(t), self.alpha)
        return a * x + b * v, c * x + d * v

    def linear_coeffs(self, t):
        return oscillation_coeffs(t, self.alpha)

    def terminal_sample(self, rng, n, mode="default"):
        if mode in ("default", "gaussian") and abs(self.horizon - math.pi / (2 * self.alpha)) < 1e-12:
            return rng.standard_normal((n, self.d)) / self.alpha
        return super().terminal_sample(rng, n, "exact")

    def describe(self):
        return {**super().describe(), "alpha": self.alpha}


class Reflection(HgfKind):
    """Free flight in a box with elastic walls; data are the mixture restricted to the box."""

    name = "reflection"
    default_horizon = 3.0

    def __init__(self, mixture, lo=None, hi=None, horizon=None):
        if lo is None or hi is None:
            blo, bhi = bounding_box(mixture)
            lo = blo if lo is None else lo
            hi = bhi if hi is None else hi
        self.lo = np.broadcast_to(np.asarray(lo, dtype=np.float64), (mixture.d,)).copy()
        self.hi = np.broadcast_to(np.asarray(hi, dtype=np.float64), (mixture.d,)).copy()
        if np.any(self.hi <= self.lo):
            raise ValueError("reflection box must be non-empty")
        super().__init__(mixture, horizon)

    def sample_data(self, rng, n):
        return sample_in_box(self.mixture, rng, n, self.lo, self.hi)

    def push(self, x, v, t):
        s = flow_reflection(PhaseState(x, v), np.asarray(t, dtype=np.float64), self.lo, self.hi)
        return s.x, s.v

    def terminal_sample(self, rng, n, mode="default"):
        if mode in ("default", "uniform"):
            return self.lo + (self.hi - self.lo) * rng.random((n, self.d))
        return super().terminal_sample(rng, n, mode)

    def project(self, x):
        return reflect_into_box(x, self.lo, self.hi)[0]

    def describe(self):
        return {**super().describe(), "lo": self.lo.tolist(), "hi": self.hi.tolist()}


class Custom(HgfKind):
    """Arbitrary force field with ``Pi = pi x N(0, I)``, pushed forward by leapfrog."""

    name = "custom"

    def __init__(self, mixture, force: ForceField, horizon=1.0, n_steps=20):
        self.force = force
        self.n_steps = int(n_steps)
        super().__init__(mixture, horizon)

    def push(self, x, v, t):
        s = leapfrog(self.force, PhaseState(x, v), 0.0, t, self.n_steps)
        return s.x, s.v


def _col(t):
    t = np.asarray(t, dtype=np.float64)
    return t[:, None] if t.ndim == 1 else t


# ------------------------------------------------------------------ operations

def sample_pair(kind, rng, t, n=1):
    """Draw ``(x, v) ~ Pi`` and push to time ``t``. Returns ``(x_t, v_t, target)`` with target = ``v_t``."""
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0) or np.any(t_arr > kind.horizon + 1e-12):
        raise ValueError(f"t must lie in [0, {kind.horizon}]")
    x, v = kind.sample_initial(rng, n)
    xt, vt = kind.push(x, v, t_arr)
    return xt, vt, vt


def analytic_hvp(kind, x, t):
    """Exact ``E[v_t | x_t = x]`` for flows that are linear in ``(x, v)``.

    Each mixture component gives a joint Gaussian over ``(x_t, v_t)``; the answer
    mixes their conditional means with posterior weights under ``x_t``'s law.
    """
    coeffs = kind.linear_coeffs(np.asarray(t, dtype=np.float64))
    if coeffs is None:
        raise UnsupportedError(f"no closed-form velocity predictor for {kind.name}")
    m = kind.mixture
    xb = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n = xb.shape[0]
    a, b, c, dd = (np.broadcast_to(np.asarray(q, dtype=np.float64), (n,))[:, None] for q in coeffs)
    var = m.variances[None, :]
    var_t = a * a * var + b * b  # (n, k)
    if np.any(var_t <= 0):
        raise DegenerateError("x_t is deterministic here (b(t) = 0 and a(t) sigma = 0)")
    centre = a[:, :, None] * m.means[None]  # (n, k, d)
    sq = ((xb[:, None, :] - centre) ** 2).sum(-1)
    logits = m._logw[None] - 0.5 * m.d * np.log(2 * np.pi * var_t) - 0.5 * sq / var_t
    logits -= logits.max(1, keepdims=True)
    r = np.exp(logits)
    r /= r.sum(1, keepdims=True)
    gain = (a * c * var + b * dd) / var_t
    cond = c[:, :, None] * m.means[None] + gain[:, :, None] * (xb[:, None, :] - centre)
    out = np.einsum("nk,nkd->nd", r, cond)
    return out[0] if np.asarray(x).ndim == 1 else out


def binned_conditional_mean(xt, vt, n_bins=50):
    """1-d Monte-Carlo oracle: ``E[v_t | x_t in bin]`` over equal-mass bins.

    Returns ``(bin_centres, means, stderrs)`` where centres are the in-bin mean of ``x_t``.
    """
    xt = np.asarray(xt).ravel()
    vt = np.asarray(vt).ravel()
    edges = np.quantile(xt, np.linspace(0, 1, n_bins + 1))
    idx = np.clip(np.searchsorted(edges, xt, side="right") - 1, 0, n_bins - 1)
    centres = np.bincount(idx, xt, n_bins) / np.bincount(idx, None, n_bins)
    counts = np.bincount(idx, None, n_bins)
    means = np.bincount(idx, vt, n_bins) / counts
    var = np.bincount(idx, vt * vt, n_bins) / counts - means ** 2
    return centres, means, np.sqrt(np.maximum(var, 0) / counts)


@dataclass
class TrainConfig:
    batch_size: int = 256
    iterations: int = 2000
    lr: float = 1e-3
    time_dist: str = "uniform"  # "uniform" on [t_min, T); "power": t_min + (T - t_min) u^p; or `fixed_t`
    time_power: float = 2.0
    fixed_t: float = None
    horizon: float = None
    t_min: float = 0.0
    seed: int = 0
    n_steps: int = 20
    lr_decay: str = "cosine"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.horizon is not None and not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.time_dist not in ("uniform", "power", "fixed"):
            raise ValueError(f"unknown time distribution {self.time_dist!r}")
        if self.time_dist == "fixed" and self.fixed_t is None:
            raise ValueError("time_dist 'fixed' needs fixed_t")
        if not self.time_power > 0:
            raise ValueError("time_power must be positive")


@dataclass
class TrainResult:
    net: object
    losses: list = field(default_factory=list)


def draw_times(cfg, horizon, rng, n):
    if cfg.fixed_t is not None or cfg.time_dist == "fixed":
        return np.full(n, float(cfg.fixed_t))
    if cfg.time_dist == "power":
        return cfg.t_min + (horizon - cfg.t_min) * rng.random(n) ** cfg.time_power
    return rng.uniform(cfg.t_min, horizon, size=n)


def velocity_loss(net, xt, t, target, params=None):
    """``mean ||V(x_t, t) - v_t||^2``; recorded if ``params`` are tape variables."""
    pred = net.forward(xt, t, params=params) if net.time_conditioned else net.forward(xt, params=params)
    return T.mean(T.sqnorm(T.sub(pred, target)))


def train_hvp(kind, net, cfg, rng=None, callback=None):
    """Fit ``net`` to the velocity predictor of ``kind`` by Adam on Monte-Carlo ``L_V``."""
    rng = make_rng(cfg.seed if rng is None else rng)
    horizon = kind.horizon if cfg.horizon is None else cfg.horizon
    if isinstance(kind, Custom):
        kind.n_steps = cfg.n_steps
    opt = AdamState(net.params(), lr=cfg.lr)
    losses = []
    for it in range(cfg.iterations):
        t = draw_times(cfg, horizon, rng, cfg.batch_size)
        xt, vt, target = sample_pair(kind, rng, t, cfg.batch_size)
        tape = Tape()
        params = tape.bind(net)
        loss = velocity_loss(net, xt, t, target, params)
        lv = float(loss.value)
        if not math.isfinite(lv):
            raise DivergenceError("velocity-predictor training diverged", step=it)
        grads = tape.grad(loss, params)
        lr = cosine_lr(cfg.lr, it, cfg.iterations, 0.01) if cfg.lr_decay == "cosine" else cfg.lr
        opt.step(net.params(), grads, lr=lr)
        losses.append(lv)
        if callback is not None:
            callback(it, lv)
    return TrainResult(net, losses)


def fm_force_lift(field_fn, x, t):
    """Force ``D_x A . A + d_t A`` whose second-order flow reproduces ``dx/dt = A(x, t)``.

    ``field_fn(x, t)`` must be built from tape primitives (an ``Mlp`` works);
    ``x`` is ``(n, d)`` and ``t`` a scalar or ``(n,)``. One reverse pass per
    output coordinate.
    """
    from .net import Mlp

    if isinstance(field_fn, Mlp):
        net = field_fn
        field_fn = lambda xx, tt: net.forward(xx, tt)  # noqa: E731
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n, d = x.shape
    tape = Tape()
    xv = tape.leaf(x)
    tv = tape.leaf(np.broadcast_to(np.asarray(t, dtype=np.float64), (n,)).copy())
    A = field_fn(xv, tv)
    if not isinstance(A, T.Var):
        return np.zeros((n, d))
    a_val = A.value
    out = np.empty((n, d))
    for j in range(d):
        gx, gt = tape.grad(T.sum_(T.getitem(A, (slice(None), j))), [xv, tv])
        out[:, j] = (gx * a_val).sum(1) + gt
    return out


class ScaleEstimate(NamedTuple):
    x_sq: float
    v_sq: float
    acc_sq: float
    x_sq_se: float
    v_sq_se: float
    acc_sq_se: float


def constant_scale_check(m, alpha, t, n, rng=0):
    """Monte-Carlo ``E||x_t||^2, E||v_t||^2, E||d^2x_t/dt^2||^2`` for the harmonic flow at time ``t``.

    With ``alpha = sqrt(d / E||x||^2)`` these equal ``d / alpha^2``, ``d`` and
    ``alpha^2 d`` for every ``t``.
    """
    rng = make_rng(rng)
    kind = Oscillation(m, alpha)
    x, v = kind.sample_initial(rng, n)
    xt, vt = kind.push(x, v, t)
    acc = -alpha ** 2 * xt
    vals = [(q * q).sum(1) for q in (xt, vt, acc)]
    means = [float(q.mean()) for q in vals]
    ses = [float(q.std(ddof=1) / math.sqrt(n)) for q in vals]
    return ScaleEstimate(*means, *ses)
