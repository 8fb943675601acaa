"""Phase-space flows ``(x', v') = (v, F(x, t))``: closed forms, leapfrog and conservation checks."""

from dataclasses import dataclass
from typing import Any

import numpy as np

from . import kernels
from .core import GaussianMixture
from .errors import DimensionError, DivergenceError, UnsupportedError
from .net import tape as T

DIVERGENCE_GUARD = 1e6


@dataclass
class PhaseState:
    """Location ``x`` and velocity ``v``; arrays of shape ``(d,)`` or ``(n, d)``, or tape variables."""

    x: Any
    v: Any

    def __post_init__(self):
        if T.value_of(self.x).shape != T.value_of(self.v).shape:
            raise DimensionError("x and v must have the same shape")


# ------------------------------------------------------------------ forces

class ForceField:
    time_dependent = False
    has_potential = True

    def __call__(self, x, t=None, tape=None):
        raise NotImplementedError

    def potential(self, x):
        raise UnsupportedError(f"{type(self).__name__} has no potential")

    def divergence(self, x):
        raise UnsupportedError(f"{type(self).__name__} has no divergence")


@dataclass(frozen=True)
class ZeroForce(ForceField):
    def __call__(self, x, t=None, tape=None):
        return T.mul(x, 0.0)

    def potential(self, x):
        return np.zeros(np.asarray(x).shape[:-1])

    def divergence(self, x):
        return np.zeros(np.asarray(x).shape[:-1])


@dataclass(frozen=True)
class OscillationForce(ForceField):
    """Harmonic force ``-alpha^2 x`` with potential ``alpha^2 ||x||^2 / 2``."""

    alpha: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("oscillation frequency alpha must be positive")

    def __call__(self, x, t=None, tape=None):
        return T.mul(x, -self.alpha ** 2)

    def potential(self, x):
        x = np.asarray(x)
        return 0.5 * self.alpha ** 2 * (x * x).sum(-1)

    def divergence(self, x):
        x = np.asarray(x)
        return np.full(x.shape[:-1], -self.alpha ** 2 * x.shape[-1])


@dataclass(frozen=True, eq=False)
class ScoreForce(ForceField):
    """The mixture score ``grad log pi``; potential ``-log pi``."""

    mixture: GaussianMixture

    def __call__(self, x, t=None, tape=None):
        if isinstance(x, T.Var):
            return T.gmm_score_op(self.mixture, x)
        return self.mixture.score(x)

    def potential(self, x):
        return -self.mixture.log_density(x)

    def divergence(self, x):
        return self.mixture.score_divergence(x)


@dataclass(frozen=True, eq=False)
class LearnedForce(ForceField):
    """Network force ``F_theta(x)`` or ``F_theta(x, t)``. On a tape, parameters come from ``tape.bind``."""

    net: Any
    time_dependent: bool = False
    has_potential = False

    def __call__(self, x, t=None, tape=None):
        params = tape.bind(self.net) if tape is not None else None
        if self.time_dependent:
            n = T.value_of(x).shape[0]
            tt = np.broadcast_to(np.asarray(t, dtype=np.float64).reshape(-1), (n,))
            return self.net.forward(x, tt, params=params)
        return self.net.forward(x, params=params)

    def divergence(self, x):
        if self.time_dependent:
            raise UnsupportedError("divergence of a time-dependent learned force needs t")
        return self.net.divergence(np.asarray(x))


# ------------------------------------------------------------------ closed-form flows

def flow_zero(s, t):
    """Free flight: ``(x + t v, v)``."""
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0):
        raise ValueError("t must be >= 0")
    tt = t[..., None] if t.ndim else t
    return PhaseState(s.x + tt * s.v, np.array(s.v, copy=True))


def oscillation_coeffs(t, alpha):
    """``(a, b, c, d)`` with ``x_t = a x + b v`` and ``v_t = c x + d v`` for the harmonic flow."""
    ca, sa = np.cos(alpha * t), np.sin(alpha * t)
    return ca, sa / alpha, -alpha * sa, ca


def flow_oscillation(s, t, alpha):
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    t = np.asarray(t, dtype=np.float64)
    a, b, c, d = oscillation_coeffs(t[..., None] if t.ndim else t, alpha)
    return PhaseState(a * s.x + b * s.v, c * s.x + d * s.v)


def reflect_into_box(y, lo, hi):
    """Fold free-flight positions into ``[lo, hi]`` (billiard map); returns positions and sign flips."""
    width = hi - lo
    m = np.mod(y - lo, 2.0 * width)
    back = m > width
    pos = lo + np.where(back, 2.0 * width - m, m)
    return pos, np.where(back, -1.0, 1.0)


def flow_reflection(s, t, lo, hi):
    """Free flight inside a box with elastic walls, in closed form."""
    x = np.asarray(s.x, dtype=np.float64)
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    if np.any(x < lo) or np.any(x > hi):
        raise ValueError("initial positions must lie inside the box")
    t = np.asarray(t, dtype=np.float64)
    tt = t[..., None] if t.ndim else t
    pos, sign = reflect_into_box(x + tt * s.v, lo, hi)
    return PhaseState(pos, sign * s.v)


# ------------------------------------------------------------------ leapfrog

def _check(x, v, step):
    xv, vv = T.value_of(x), T.value_of(v)
    nx = (xv * xv).sum(-1)
    nv = (vv * vv).sum(-1)
    if not (np.all(np.isfinite(nx)) and np.all(np.isfinite(nv))) \
            or max(np.max(nx), np.max(nv)) > DIVERGENCE_GUARD ** 2:
        raise DivergenceError("leapfrog state diverged", step=step)


def leapfrog(force, s, t0, t1, n_steps, tape=None):
    """Kick-drift-kick leapfrog from ``t0`` to ``t1`` in ``n_steps`` equal steps.

    ``t1`` may be an ``(n,)`` array of per-trajectory end times; ``t1 < t0``
    integrates backward (negative step). Time-dependent
    forces are evaluated at the step midpoint in both kicks. With a ``tape``
    every operation is recorded, so the endpoint can be differentiated with
    respect to the initial state and the parameters of a learned force.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    t1a = np.asarray(t1, dtype=np.float64)
    if not np.all(np.isfinite(t1a)):
        raise ValueError("t1 must be finite")
    h = (t1a - t0) / n_steps
    x, v = s.x, s.v
    if tape is not None:
        x = x if isinstance(x, T.Var) else tape.leaf(x)
        v = v if isinstance(v, T.Var) else tape.leaf(v)
    single = T.value_of(x).ndim == 1
    hb = h[..., None] if h.ndim else h

    if tape is None and isinstance(force, ScoreForce):
        return _leapfrog_score_fast(force.mixture, x, v, h, n_steps, single)
    if isinstance(force, ZeroForce):
        for k in range(n_steps):
            x = x + hb * v
        _check(x, v, n_steps - 1)
        return PhaseState(x, v)

    def f(xx, k):
        if single:
            xx2 = T.reshape(xx, (1, -1)) if isinstance(xx, T.Var) else np.asarray(xx)[None]
            out = force(xx2, t0 + (k + 0.5) * h, tape=tape)
            return T.reshape(out, (-1,)) if isinstance(out, T.Var) else out[0]
        return force(xx, t0 + (k + 0.5) * h, tape=tape)

    half = 0.5 * hb
    fx = None if force.time_dependent else f(x, 0)
    for k in range(n_steps):
        if force.time_dependent:
            fx = f(x, k)
        v = v + half * fx
        x = x + hb * v
        fx = f(x, k)
        v = v + half * fx
        _check(x, v, k)
    return PhaseState(x, v)


def _leapfrog_score_fast(m, x, v, h, n_steps, single):
    xb = np.ascontiguousarray(np.atleast_2d(x), dtype=np.float64)
    vb = np.ascontiguousarray(np.atleast_2d(v), dtype=np.float64)
    hb = np.ascontiguousarray(np.broadcast_to(h, (xb.shape[0],)), dtype=np.float64)
    xo, vo, bad = kernels.leapfrog_gmm(xb, vb, hb, n_steps, m._logw, m.means, m.variances, DIVERGENCE_GUARD)
    if bad >= 0:
        raise DivergenceError("leapfrog state diverged", step=int(bad))
    if single:
        return PhaseState(xo[0], vo[0])
    return PhaseState(xo, vo)


# ------------------------------------------------------------------ diagnostics

def energy(force, s):
    """Hamiltonian ``U(x) + ||v||^2 / 2``."""
    if not force.has_potential:
        raise UnsupportedError("energy is undefined for a force without a potential")
    v = np.asarray(s.v)
    return force.potential(s.x) + 0.5 * (v * v).sum(-1)


def _flow_map(force, method, t, n_steps):
    if method == "leapfrog":
        return lambda z: leapfrog(force, z, 0.0, t, n_steps)
    if method != "analytic":
        raise ValueError(f"unknown method {method!r}")
    if isinstance(force, ZeroForce):
        return lambda z: flow_zero(z, t)
    if isinstance(force, OscillationForce):
        return lambda z: flow_oscillation(z, t, force.alpha)
    raise UnsupportedError("no closed-form flow for this force")


def volume_check(force, s, t, n_steps=5, h_fd=1e-5, method="leapfrog"):
    """``|det D phi_t|`` at a single phase point, from a central-difference Jacobian."""
    x = np.asarray(s.x, dtype=np.float64)
    d = x.shape[-1]
    if x.ndim != 1:
        raise DimensionError("volume_check takes a single phase point")
    if 2 * d > 8:
        raise UnsupportedError("finite-difference Jacobian limited to 2d <= 8")
    z0 = np.concatenate([x, np.asarray(s.v, dtype=np.float64)])
    eye = np.eye(2 * d)
    batch = np.concatenate([z0 + h_fd * eye, z0 - h_fd * eye])
    out = _flow_map(force, method, t, n_steps)(PhaseState(batch[:, :d], batch[:, d:]))
    zo = np.concatenate([out.x, out.v], axis=1)
    jac = (zo[:2 * d] - zo[2 * d:]).T / (2 * h_fd)
    return abs(np.linalg.det(jac))


def energy_drift(force, s, t, n_steps):
    """Max ``|H(z_k) - H(z_0)|`` over the leapfrog steps."""
    h0 = energy(force, s)
    h = t / n_steps
    z = s
    worst = np.zeros_like(np.asarray(h0))
    for k in range(n_steps):
        z = leapfrog(force, z, k * h, (k + 1) * h, 1)
        worst = np.maximum(worst, np.abs(energy(force, z) - h0))
    return float(np.max(worst))
