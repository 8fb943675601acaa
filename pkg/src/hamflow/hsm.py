"""Hamiltonian score matching: the HSM loss, the score-discrepancy estimator and min-max training.

Also holds the classical score-matching losses (explicit, denoising,
implicit) that serve as oracles and baselines on Gaussian mixtures.
"""

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .core import make_rng
from .dynamics import ForceField, LearnedForce, PhaseState, leapfrog
from .errors import DivergenceError, UnsupportedError
from .net import AdamState, Mlp, Tape, cosine_lr
from .net import tape as T


class HsmOscillationWarning(RuntimeWarning):
    """Min-max training stopped improving the oracle ESM loss for a patience window."""


@dataclass
class HsmConfig:
    horizon: float = 1.0
    fixed_t: float = None  # None -> t ~ Uniform[0, horizon)
    n_steps: int = 5
    k_inner: int = 5
    lr_theta: float = 1e-3
    lr_phi: float = None  # None -> 2 * lr_theta
    batch_size: int = 256
    iterations: int = 2000
    seed: int = 0
    antithetic: bool = True
    hidden: tuple = (64, 64)
    n_freq: int = 6
    # monitoring
    eval_every: int = 50
    esm_samples: int = 20000
    patience: int = 10
    # score-discrepancy estimator (fresh velocity net)
    hsd_iterations: int = 2000
    hsd_batch: int = 512
    hsd_lr: float = 2e-3
    hsd_eval: int = 2 ** 18

    def __post_init__(self):
        if self.k_inner < 1:
            raise ValueError("k_inner must be >= 1")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.fixed_t is not None and not 0 <= self.fixed_t <= self.horizon:
            raise ValueError("fixed_t must lie in [0, horizon]")
        if self.lr_phi is None:
            self.lr_phi = 2.0 * self.lr_theta


def as_force(f):
    if isinstance(f, ForceField):
        return f
    if isinstance(f, Mlp):
        return LearnedForce(f, time_dependent=f.time_conditioned)
    raise TypeError(f"cannot use {type(f).__name__} as a force field")


# ------------------------------------------------------------------ sampling helpers

def draw_phase(m, rng, n, antithetic=False):
    """``(x, v) ~ pi x N(0, I)``; antithetic draws pair each ``(x, v)`` with ``(x, -v)``."""
    if not antithetic:
        return m.sample(rng, n), rng.standard_normal((n, m.d))
    h = (n + 1) // 2
    x = m.sample(rng, h)
    v = rng.standard_normal((h, m.d))
    return np.concatenate([x, x])[:n], np.concatenate([v, -v])[:n]


def draw_times(cfg, rng, n):
    if cfg.fixed_t is not None:
        return np.full(n, float(cfg.fixed_t))
    return rng.uniform(0.0, cfg.horizon, size=n)


def push(force, x, v, t, n_steps, tape=None):
    s = leapfrog(force, PhaseState(x, v), 0.0, t, n_steps, tape=tape)
    return s.x, s.v


def _predict(V, xt, t, params=None):
    if V.time_conditioned:
        n = T.value_of(xt).shape[0]
        return V.forward(xt, np.broadcast_to(np.asarray(t, dtype=np.float64), (n,)), params=params)
    return V.forward(xt, params=params)


def hsm_terms(V, xt, vt, t, params=None):
    """``(L_hsm, L_V, E||v_t||^2)`` on one batch of pushed samples."""
    pred = _predict(V, xt, t, params)
    l_hsm = T.mean(T.sub(T.sqnorm(pred), T.mul(T.dot(pred, vt), 2.0)))
    l_v = T.mean(T.sqnorm(T.sub(pred, vt)))
    c = T.mean(T.sqnorm(vt))
    return l_hsm, l_v, c


def hsm_loss(V, F, m, t, batch, rng, tape=None, n_steps=5, antithetic=False, wrt=("phi", "theta")):
    """Monte-Carlo ``L_hsm = E ||V(x_t, t)||^2 - 2 V(x_t, t) . v_t`` with ``(x, v) ~ pi x N(0, I)``.

    ``t`` is a scalar or ``(batch,)`` array. With a ``tape``, the parameters
    named in ``wrt`` are bound so ``tape.grad`` can differentiate through the
    leapfrog trajectory (``"theta"``) and the predictor (``"phi"``).
    """
    F = as_force(F)
    rng = make_rng(rng)
    x, v = draw_phase(m, rng, batch, antithetic)
    t_arr = np.broadcast_to(np.asarray(t, dtype=np.float64), (batch,))
    through = tape if (tape is not None and "theta" in wrt) else None
    xt, vt = push(F, x, v, t_arr, n_steps, tape=through)
    params = tape.bind(V) if (tape is not None and "phi" in wrt) else None
    return hsm_terms(V, xt, vt, t_arr, params)[0]


# ------------------------------------------------------------------ discrepancy estimator

class HsdEstimate(NamedTuple):
    value: float
    stderr: float
    net: Mlp
    losses: list
    plateau_step: int  # first step at which the loss plateaued (-1 if never)


def _plateau_step(losses, window=100, rtol=1e-3):
    if len(losses) < 2 * window:
        return -1
    arr = np.asarray(losses)
    csum = np.concatenate([[0.0], np.cumsum(arr)])
    for i in range(2 * window, len(arr) + 1, window):
        prev = (csum[i - window] - csum[i - 2 * window]) / window
        cur = (csum[i] - csum[i - window]) / window
        if abs(cur - prev) <= rtol * max(abs(prev), 1e-12) + 1e-12:
            return i
    return -1


def fit_velocity_predictor(F, m, cfg, rng, V=None, iterations=None, callback=None):
    """Train a velocity predictor against a fixed force by Adam on ``L_hsm`` (same minimizer as ``L_V``)."""
    F = as_force(F)
    iters = cfg.hsd_iterations if iterations is None else iterations
    if V is None:
        V = Mlp.create(m.d, cfg.hidden, n_freq=0 if cfg.fixed_t is not None else cfg.n_freq,
                       seed=int(rng.integers(2 ** 63)))
    opt = AdamState(V.params(), lr=cfg.hsd_lr)
    losses = []
    for it in range(iters):
        x, v = draw_phase(m, rng, cfg.hsd_batch, cfg.antithetic)
        t = draw_times(cfg, rng, cfg.hsd_batch)
        xt, vt = push(F, x, v, t, cfg.n_steps)
        tape = Tape()
        params = tape.bind(V)
        loss = hsm_terms(V, xt, vt, t, params)[0]
        lv = float(loss.value)
        if not math.isfinite(lv):
            raise DivergenceError("velocity-predictor training diverged", step=it)
        opt.step(V.params(), tape.grad(loss, params), lr=cosine_lr(cfg.hsd_lr, it, iters, 0.01))
        losses.append(lv)
        if callback is not None:
            callback(it, lv)
    return V, losses


def evaluate_hsd(V, F, m, cfg, rng, n=None, chunk=65536):
    """``-L_hsm`` of a fixed predictor on fresh antithetic pairs; returns ``(value, stderr)``."""
    F = as_force(F)
    n = cfg.hsd_eval if n is None else n
    vals = []
    done = 0
    while done < n:
        k = min(chunk, n - done)
        h = (k + 1) // 2
        x, v = draw_phase(m, rng, 2 * h, antithetic=True)
        t = draw_times(cfg, rng, h)
        t = np.concatenate([t, t])
        xt, vt = push(F, x, v, t, cfg.n_steps)
        pred = np.asarray(_predict(V, xt, t))
        per = 2.0 * (pred * vt).sum(1) - (pred * pred).sum(1)
        vals.append(0.5 * (per[:h] + per[h:]))
        done += 2 * h
    vals = np.concatenate(vals)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(len(vals)))


def hsd_estimate(F, m, cfg=None, rng=None, **overrides):
    """Hamiltonian score discrepancy ``-min_phi L_hsm`` averaged over the time law.

    A fresh velocity net is trained against the fixed force, then ``-L_hsm`` is
    evaluated on an independent batch of antithetic pairs.
    """
    cfg = replace(cfg or HsmConfig(), **overrides)
    rng = make_rng(cfg.seed if rng is None else rng)
    V, losses = fit_velocity_predictor(F, m, cfg, rng)
    value, se = evaluate_hsd(V, F, m, cfg, rng)
    return HsdEstimate(value, se, V, losses, _plateau_step(losses))


# ------------------------------------------------------------------ classical losses

def _force_values(F, x, t=None):
    F = as_force(F)
    return np.asarray(F(x, t))


def esm_loss(F, m, n, rng=0):
    """``1/2 E_pi ||grad log pi - F||^2`` by Monte Carlo (the oracle score is analytic here)."""
    x = m.sample(make_rng(rng), n)
    r = m.score(x) - _force_values(F, x)
    return float(0.5 * (r * r).sum(1).mean())


def dsm_per_sample(pred, eps, sigma):
    """``||F(x + sigma eps) + eps / sigma||^2`` per sample."""
    return T.sqnorm(T.add(pred, eps / sigma))


def dsm_loss(F, m, sigma, batch, rng=0, tape=None):
    """Denoising score matching ``E ||F(x + sigma eps) + eps / sigma||^2``."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    F = as_force(F)
    rng = make_rng(rng)
    x = m.sample(rng, batch)
    eps = rng.standard_normal(x.shape)
    xs = x + sigma * eps
    pred = F(xs, None, tape=tape) if tape is not None else F(xs)
    return T.mean(dsm_per_sample(pred, eps, sigma))


def ism_loss(F, m, batch, rng=0):
    """Implicit score matching ``E_pi [div F + ||F||^2 / 2]`` with an exact divergence (d <= 2)."""
    if m.d > 2:
        raise UnsupportedError("implicit score matching is limited to d <= 2 here")
    F = as_force(F)
    x = m.sample(make_rng(rng), batch)
    f = np.asarray(F(x))
    return float((F.divergence(x) + 0.5 * (f * f).sum(1)).mean())


# ------------------------------------------------------------------ min-max training

@dataclass
class HsmResult:
    force_net: Mlp
    v_net: Mlp
    history: list = field(default_factory=list)  # dicts: iteration, esm, hsd_proxy, loss_phi, loss_theta
    snapshots: dict = field(default_factory=dict)  # iteration -> copy of force net
    warned: bool = False


def train_hsm(force_net, v_net, m, cfg, rng=None, snapshot_at=(), esm_rng=12345, callback=None):
    """Alternating min-max optimisation of ``(F_theta, V_phi)``.

    Each outer iteration takes ``k_inner`` Adam steps on ``phi`` minimising
    ``L_hsm`` (the velocity-prediction loss up to a constant), then one Adam
    step on ``theta`` minimising ``-L_hsm`` with ``phi`` frozen, the gradient
    flowing through the leapfrog trajectory.
    """
    rng = make_rng(cfg.seed if rng is None else rng)
    F = LearnedForce(force_net, time_dependent=force_net.time_conditioned)
    opt_phi = AdamState(v_net.params(), lr=cfg.lr_phi)
    opt_theta = AdamState(force_net.params(), lr=cfg.lr_theta)
    result = HsmResult(force_net, v_net)
    snap = set(int(s) for s in snapshot_at)
    best, since_best = math.inf, 0
    proxy = []
    loss_phi = loss_theta = float("nan")
    n = cfg.batch_size

    def monitor(it):
        nonlocal best, since_best
        esm = esm_loss(F, m, cfg.esm_samples, esm_rng)
        row = {"iteration": it, "esm": esm, "hsd_proxy": float(np.mean(proxy)) if proxy else float("nan"),
               "loss_phi": loss_phi, "loss_theta": loss_theta}
        result.history.append(row)
        proxy.clear()
        if esm < best * (1 - 1e-3):
            best, since_best = esm, 0
        else:
            since_best += 1
            if since_best >= cfg.patience and not result.warned:
                warnings.warn(f"ESM has not improved for {since_best} evaluations (iteration {it})",
                              HsmOscillationWarning, stacklevel=3)
                result.warned = True
        if callback is not None:
            callback(row)

    for it in range(cfg.iterations):
        if it in snap:
            result.snapshots[it] = force_net.copy()
        if cfg.eval_every and it % cfg.eval_every == 0:
            monitor(it)
        lr_phi = cosine_lr(cfg.lr_phi, it, cfg.iterations, 0.05)
        lr_theta = cosine_lr(cfg.lr_theta, it, cfg.iterations, 0.05)
        for _ in range(cfg.k_inner):
            x, v = draw_phase(m, rng, n, cfg.antithetic)
            t = draw_times(cfg, rng, n)
            xt, vt = push(F, x, v, t, cfg.n_steps)
            tape = Tape()
            params = tape.bind(v_net)
            loss = hsm_terms(v_net, xt, vt, t, params)[0]
            loss_phi = float(loss.value)
            if not math.isfinite(loss_phi):
                raise DivergenceError("HSM inner loss diverged", step=it)
            opt_phi.step(v_net.params(), tape.grad(loss, params), lr=lr_phi)
        x, v = draw_phase(m, rng, n, cfg.antithetic)
        t = draw_times(cfg, rng, n)
        tape = Tape()
        theta = tape.bind(force_net)
        xt, vt = push(F, x, v, t, cfg.n_steps, tape=tape)
        l_hsm = hsm_terms(v_net, xt, vt, t)[0]
        loss_theta = float(l_hsm.value)
        if not math.isfinite(loss_theta):
            raise DivergenceError("HSM outer loss diverged", step=it)
        proxy.append(-loss_theta)
        opt_theta.step(force_net.params(), tape.grad(T.neg(l_hsm), theta), lr=lr_theta)

    if cfg.iterations in snap:
        result.snapshots[cfg.iterations] = force_net.copy()
    if cfg.eval_every:
        monitor(cfg.iterations)
    return result


def theta_gradient(force_net, v_net, m, t, batch, rng, n_steps=5, antithetic=False):
    """Gradient of ``-L_hsm`` with respect to the force parameters (flat vector)."""
    F = LearnedForce(force_net, time_dependent=force_net.time_conditioned)
    tape = Tape()
    theta = tape.bind(force_net)
    loss = hsm_loss(v_net, F, m, t, batch, rng, tape=tape, n_steps=n_steps, antithetic=antithetic,
                    wrt=("theta",))
    return np.concatenate([g.ravel() for g in tape.grad(T.neg(loss), theta)])


def dsm_gradient(force_net, m, sigma, batch, rng):
    F = LearnedForce(force_net)
    tape = Tape()
    theta = tape.bind(force_net)
    loss = dsm_loss(F, m, sigma, batch, rng, tape=tape)
    return np.concatenate([g.ravel() for g in tape.grad(loss, theta)])


# ------------------------------------------------------------------ diagnostics

class TaylorRow(NamedTuple):
    t: float
    hsd: float
    stderr: float
    taylor: float
    ratio: float


def taylor_check(F, m, t_grid, cfg=None, esm_n=200000, seed=0, eval_n=2 ** 23):
    """``HSD(t)`` at ``lambda = delta_t`` next to its small-``t`` expansion ``2 t^2 L_esm``."""
    cfg = cfg or HsmConfig()
    l_esm = esm_loss(F, m, esm_n, seed)
    rows = []
    for i, t in enumerate(t_grid):
        if not 0 <= t < max(cfg.horizon, t + 1e-12):
            raise ValueError("t outside [0, horizon)")
        est = hsd_estimate(F, m, cfg, fixed_t=float(t), seed=cfg.seed + i, hsd_eval=eval_n)
        taylor = 2.0 * t * t * l_esm
        rows.append(TaylorRow(float(t), est.value, est.stderr, taylor,
                              est.value / taylor if taylor > 0 else float("nan")))
    return rows


def probe_net(d, seed=0, hidden=(32, 32), out_scale=0.3):
    """A fixed force net with a random (non-zero) output layer, for gradient-noise studies."""
    net = Mlp.create(d, hidden, seed=seed)
    rng = make_rng(seed + 1)
    w = net.weights[-1]
    w[...] = out_scale * rng.standard_normal(w.shape) / math.sqrt(w.shape[0])
    return net


class SnrRow(NamedTuple):
    param_id: int
    method: str
    sigma: float
    mean: float
    std: float


def snr_diagnostic(method, m, levels, n_batches=64, batch_size=64, force_net=None, cfg=None, seed=0,
                   compute_factor=None):
    """Per-parameter ``(|mean|, std)`` of minibatch gradients at each noise level.

    ``method`` is ``"hsm"`` (levels are times ``t``; the predictor is first
    fitted against the fixed force) or ``"dsm"`` (levels are ``sigma``; the
    batch is scaled by ``compute_factor``, default ``n_steps + 1``, to match
    the number of force evaluations of one leapfrog trajectory).
    """
    method = method.lower()
    if method not in ("hsm", "dsm"):
        raise ValueError("method must be 'hsm' or 'dsm'")
    cfg = cfg or HsmConfig()
    net = force_net if force_net is not None else probe_net(m.d, seed)
    factor = cfg.n_steps + 1 if compute_factor is None else compute_factor
    rows = []
    for li, level in enumerate(levels):
        rng = make_rng([seed, li])
        if method == "hsm":
            V = hsd_estimate(LearnedForce(net), m, cfg, rng=rng, fixed_t=float(level)).net
            grads = np.stack([theta_gradient(net, V, m, level, batch_size, rng, cfg.n_steps)
                              for _ in range(n_batches)])
        else:
            grads = np.stack([dsm_gradient(net, m, level, batch_size * factor, rng) for _ in range(n_batches)])
        mu = grads.mean(0)
        sd = grads.std(0, ddof=1)
        rows += [SnrRow(j, method, float(level), float(abs(mu[j])), float(sd[j])) for j in range(len(mu))]
    return rows


def median_snr(rows, method, level):
    vals = [r.mean / r.std for r in rows if r.method == method and r.sigma == level and r.std > 0]
    return float(np.median(vals)) if vals else float("nan")


class CorrelationResult(NamedTuple):
    pairs: list  # (iteration, esm, hsd, hsd_stderr)
    pearson: float


def correlation_study(m, cfg=None, snapshot_at=(0, 2, 5, 10, 20, 40, 80, 160, 320, 640), esm_n=100000,
                      seed=0, hsd_cfg=None):
    """ESM (oracle) against estimated HSD for force nets saved along one HSM training run."""
    cfg = cfg or HsmConfig(iterations=max(snapshot_at), eval_every=0, seed=seed)
    hsd_cfg = hsd_cfg or cfg
    force = Mlp.create(m.d, cfg.hidden, seed=seed)
    v_net = Mlp.create(m.d, cfg.hidden, n_freq=cfg.n_freq, seed=seed + 1)
    run = train_hsm(force, v_net, m, replace(cfg, iterations=max(snapshot_at)), snapshot_at=snapshot_at)
    pairs = []
    for i, it in enumerate(sorted(run.snapshots)):
        net = run.snapshots[it]
        esm = esm_loss(LearnedForce(net), m, esm_n, seed + 7)
        est = hsd_estimate(LearnedForce(net), m, hsd_cfg, seed=hsd_cfg.seed + 100 + i)
        pairs.append((it, esm, est.value, est.stderr))
    e = np.array([p[1] for p in pairs])
    h = np.array([p[2] for p in pairs])
    return CorrelationResult(pairs, float(np.corrcoef(e, h)[0, 1]))
