"""Built-in invariant suite behind ``hamflow validate``.

Each check returns a :class:`CheckResult`; ``run_suite`` collects them into a
JSON-ready report. ``fast`` finishes in well under two minutes on one core;
``full`` adds the training-based studies.
"""

import math
import time
from dataclasses import asdict, dataclass

import numpy as np

from .core import GaussianMixture, make_rng
from .dynamics import (LearnedForce, OscillationForce, PhaseState, ScoreForce, ZeroForce, energy, energy_drift,
                       flow_oscillation, leapfrog, volume_check)
from .errors import HamflowError, IntegrityError
from .hgf import (Diffusion, Oscillation, Reflection, TrainConfig, analytic_hvp, binned_conditional_mean,
                  constant_scale_check, train_hvp)
from .hsm import (HsmConfig, correlation_study, esm_loss, hsd_estimate, median_snr, snr_diagnostic,
                  taylor_check, train_hsm)
from .metrics import energy_distance, hist_tv, ks_uniform, self_distance_baseline
from .net import Mlp, Tape
from .net import tape as T
from .sampler import (analytic_predictor, edm_equivalence, edm_sigmas, heun_integrate, heun_sample, make_schedule,
                      net_predictor)

GAUSS1D = GaussianMixture(np.array([1.0]), np.zeros((1, 1)), np.array([1.0]))
GMM1D = GaussianMixture(np.array([0.4, 0.6]), np.array([[-2.0], [2.0]]), np.array([1.0, 1.0]))
REFLECT2D = GaussianMixture(np.full(4, 0.25), np.array([[-0.5, -0.5], [-0.5, 0.5], [0.5, -0.5], [0.5, 0.5]]),
                            np.full(4, 0.0225))


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    threshold: str
    seconds: float = 0.0
    detail: str = ""


def _result(name, value, ok, threshold, detail=""):
    return CheckResult(name, bool(ok), float(value), threshold, 0.0, detail)


# ------------------------------------------------------------------ helpers shared with the tests

def fd_gradient_check(loss_fn, params, grads, n_probes=10, h=1e-4, rng=0):
    """Worst relative error between ``grads`` and central differences of ``loss_fn()`` along random
    unit directions in parameter space (``params`` are perturbed in place and restored)."""
    rng = make_rng(rng)
    worst = 0.0
    for _ in range(n_probes):
        dirs = [rng.standard_normal(p.shape) for p in params]
        norm = math.sqrt(sum(float((d * d).sum()) for d in dirs))
        dirs = [d / norm for d in dirs]
        for p, d in zip(params, dirs):
            p += h * d
        up = loss_fn()
        for p, d in zip(params, dirs):
            p -= 2 * h * d
        down = loss_fn()
        for p, d in zip(params, dirs):
            p += h * d
        fd = (up - down) / (2 * h)
        an = sum(float((g * d).sum()) for g, d in zip(grads, dirs))
        worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-8))
    return worst


def random_net(d, seed, n_freq=0, hidden=(16, 16), out_scale=0.5):
    net = Mlp.create(d, hidden, n_freq=n_freq, seed=seed)
    rng = make_rng(seed + 17)
    for i, w in enumerate(net.weights):
        if i == len(net.weights) - 1:
            w[...] = out_scale * rng.standard_normal(w.shape) / math.sqrt(w.shape[0])
    for b in net.biases:
        b[...] = 0.1 * rng.standard_normal(b.shape)
    return net


def energy_order(force, s, t=1.0, n_steps=(20, 40)):
    """Observed order ``log2(drift(h) / drift(h/2))`` of the leapfrog energy error."""
    d1 = energy_drift(force, s, t, n_steps[0])
    d2 = energy_drift(force, s, t, n_steps[1])
    return math.log2(d1 / d2), d1, d2


def diffusion_dsm_pair(net, x, eps, t):
    """Per-sample velocity loss and denoising loss (score net ``-V/t``) on shared draws, with their
    parameter gradients. Returns ``(lv, ldsm, grads_v, grads_dsm)``."""
    out = []
    for which in ("hgf", "dsm"):
        tape = Tape()
        params = tape.bind(net)
        tt = np.full(len(x), t)
        xt = x + t * eps
        pred = net.forward(xt, tt, params=params) if net.time_conditioned else net.forward(xt, params=params)
        if which == "hgf":
            per = T.sqnorm(T.sub(pred, eps))
        else:
            score = T.mul(pred, -1.0 / t)
            per = T.mul(T.sqnorm(T.add(score, eps / t)), t * t)
        grads = tape.grad(T.sum_(per), params)
        out.append((per.value.copy(), grads))
    return out[0][0], out[1][0], out[0][1], out[1][1]


# ------------------------------------------------------------------ individual checks

def check_score_fd():
    x = np.linspace(-6, 6, 121)[:, None]
    h = 1e-4
    fd = (GMM1D.log_density(x + h) - GMM1D.log_density(x - h)) / (2 * h)
    err = float(np.max(np.abs(fd - GMM1D.score(x)[:, 0])))
    return _result("mixture_score_vs_fd", err, err <= 1e-6, "<= 1e-6")


def check_posterior():
    x = make_rng(1).normal(0, 4, size=(1000, 1))
    err = float(np.max(np.abs(GMM1D.posterior(x).sum(1) - 1)))
    return _result("posterior_normalised", err, err <= 1e-12, "<= 1e-12")


def check_oscillation_energy():
    rng = make_rng(2)
    s = PhaseState(rng.standard_normal((50, 2)), rng.standard_normal((50, 2)))
    f = OscillationForce(0.7)
    h0 = energy(f, s)
    err = max(float(np.max(np.abs(energy(f, flow_oscillation(s, t, 0.7)) - h0))) for t in np.linspace(0, 10, 11))
    return _result("oscillation_flow_energy", err, err <= 1e-12, "<= 1e-12")


def check_energy_order():
    s = PhaseState(np.array([[0.3], [-1.2], [2.5]]), np.array([[1.0], [0.4], [-0.8]]))
    order, d1, d2 = energy_order(ScoreForce(GMM1D), s)
    return _result("leapfrog_energy_order", order, order >= 1.9, ">= 1.9", f"drift {d1:.3e} -> {d2:.3e}")


def check_volume():
    worst = 0.0
    two = GaussianMixture(np.array([0.5, 0.5]), np.array([[-1.0, 0.5], [1.0, -0.5]]), np.array([0.5, 0.8]))
    for m, x, v in ((GMM1D, [0.3], [0.7]), (two, [0.2, -0.4], [0.5, 1.0])):
        det = volume_check(ScoreForce(m), PhaseState(np.array(x), np.array(v)), 1.0, n_steps=5)
        worst = max(worst, abs(det - 1))
    return _result("leapfrog_volume", worst, worst <= 1e-6, "|det - 1| <= 1e-6")


def check_time_reversal():
    rng = make_rng(3)
    s = PhaseState(rng.standard_normal((20, 1)), rng.standard_normal((20, 1)))
    f = ScoreForce(GMM1D)
    fwd = leapfrog(f, s, 0.0, 1.0, 10)
    back = leapfrog(f, PhaseState(fwd.x, -fwd.v), 0.0, 1.0, 10)
    err = float(max(np.max(np.abs(back.x - s.x)), np.max(np.abs(-back.v - s.v))))
    return _result("leapfrog_time_reversal", err, err <= 1e-10, "<= 1e-10")


def check_grad_velocity_loss():
    net = random_net(1, 4, n_freq=6)
    rng = make_rng(5)
    x = rng.standard_normal((64, 1))
    v = rng.standard_normal((64, 1))
    t = rng.random(64)
    target = v

    def loss():
        p = net.forward(x + t[:, None] * v, t)
        return float(np.mean(((p - target) ** 2).sum(1)))

    tape = Tape()
    params = tape.bind(net)
    out = T.mean(T.sqnorm(T.sub(net.forward(x + t[:, None] * v, t, params=params), target)))
    err = fd_gradient_check(loss, net.params(), tape.grad(out, params))
    return _result("tape_grad_velocity_loss", err, err <= 1e-3, "rel <= 1e-3")


def check_grad_leapfrog():
    net = random_net(1, 6)
    rng = make_rng(7)
    x = rng.standard_normal((16, 1))
    v = rng.standard_normal((16, 1))
    w = rng.standard_normal((16, 1))
    f = LearnedForce(net)

    def loss():
        end = leapfrog(f, PhaseState(x, v), 0.0, 1.0, 5)
        return float((w * end.x).sum() + (w * end.v).sum())

    tape = Tape()
    params = tape.bind(net)
    end = leapfrog(f, PhaseState(x, v), 0.0, 1.0, 5, tape=tape)
    out = T.add(T.sum_(T.mul(end.x, w)), T.sum_(T.mul(end.v, w)))
    err = fd_gradient_check(loss, net.params(), tape.grad(out, params))
    return _result("tape_grad_leapfrog_endpoint", err, err <= 1e-3, "rel <= 1e-3")


def check_dsm_equivalence():
    net = random_net(1, 8, n_freq=6)
    rng = make_rng(9)
    x = GMM1D.sample(rng, 256)
    eps = rng.standard_normal(x.shape)
    worst = 0.0
    for t in (0.1, 0.5, 2.0):
        lv, ld, gv, gd = diffusion_dsm_pair(net, x, eps, t)
        worst = max(worst, float(np.max(np.abs(lv - ld) / np.maximum(np.abs(lv), 1e-300))))
        worst = max(worst, max(float(np.max(np.abs(a - b))) / max(float(np.max(np.abs(a))), 1e-300)
                               for a, b in zip(gv, gd)))
    return _result("diffusion_equals_dsm", worst, worst <= 1e-12, "rel <= 1e-12")


def check_analytic_hvp(n=400000):
    kind = Oscillation(GMM1D)
    worst = 0.0
    for t in (0.5, 1.5):
        rng = make_rng(int(t * 10))
        x, v = kind.sample_initial(rng, n)
        xt, vt = kind.push(x, v, t)
        c, mu, se = binned_conditional_mean(xt, vt, 50)
        # compare bin means of the oracle itself (removes within-bin curvature)
        _, pred, _ = binned_conditional_mean(xt, analytic_hvp(kind, xt, t), 50)
        worst = max(worst, float(np.max(np.abs(mu - pred) / se)))
    return _result("analytic_hvp_vs_binned_mc", worst, worst <= 4.5, "max z <= 4.5")


def check_hsd_closed_form(ts=(0.5,), iterations=1500):
    worst = 0.0
    for t in ts:
        est = hsd_estimate(ZeroForce(), GAUSS1D, HsmConfig(fixed_t=t, hsd_iterations=iterations))
        worst = max(worst, abs(est.value / (t * t / (1 + t * t)) - 1))
    return _result("hsd_closed_form", worst, worst <= 0.1, "rel <= 0.1", f"t={list(ts)}")


def check_taylor():
    row = taylor_check(ZeroForce(), GAUSS1D, [0.1], HsmConfig(), eval_n=2 ** 22)[0]
    dev = abs(row.ratio - 1)
    return _result("taylor_ratio_t0.1", dev, dev <= 0.02, "|HSD/(2t^2 L_esm) - 1| <= 0.02", f"ratio={row.ratio:.5f}")


def check_constant_scale():
    kind = Oscillation(GMM1D)
    worst = 0.0
    ref = None
    for t in (0.0, kind.horizon / 4, kind.horizon / 2):
        est = constant_scale_check(GMM1D, kind.alpha, t, 100000, rng=int(t * 1000) + 1)
        if ref is None:
            ref = est
            continue
        for a, b, sa, sb in ((est.x_sq, ref.x_sq, est.x_sq_se, ref.x_sq_se),
                             (est.v_sq, ref.v_sq, est.v_sq_se, ref.v_sq_se)):
            worst = max(worst, abs(a - b) / math.hypot(sa, sb))
    return _result("constant_scale", worst, worst <= 3, "z <= 3")


def check_edm():
    sig = edm_sigmas(256)
    x0 = make_rng(11).normal(0, 80, size=(64, 1))
    a, b = edm_equivalence(GMM1D, x0, sig)
    err = float(np.max(np.abs(a - b)))
    return _result("edm_equivalence", err, err <= 1e-3, "<= 1e-3")


def check_oracle_sampling(n=20000):
    kind = Oscillation(GMM1D)
    xs = heun_sample(analytic_predictor(kind), make_schedule(kind, 64), 13, n)
    ed = float(np.mean([energy_distance(xs, GMM1D.sample(make_rng(100 + r), n)) for r in range(4)]))
    base = self_distance_baseline(GMM1D, n, 14, replicates=4)
    return _result("oracle_sampling_energy", ed / base, ed / base <= 1.5, "<= 1.5 x baseline", f"n={n}")


def check_reflection_uniform():
    kind = Reflection(REFLECT2D)
    rng = make_rng(15)
    x, v = kind.sample_initial(rng, 100000)
    xt, _ = kind.push(x, v, 3.0)
    ks = float(ks_uniform(xt, kind.lo, kind.hi))
    return _result("reflection_marginal_uniform", ks, ks <= 0.02, "KS <= 0.02")


def check_checkpoint(path=None):
    if path is not None:
        try:
            Mlp.load(path)
        except (IntegrityError, OSError, KeyError, ValueError) as exc:
            return _result("checkpoint_integrity", 1.0, False, "loads with matching hash", str(exc))
        return _result("checkpoint_integrity", 0.0, True, "loads with matching hash", str(path))
    net = random_net(2, 19, n_freq=6)
    again = Mlp.from_dict(net.to_dict("x"))
    x = make_rng(20).standard_normal((10, 2))
    same = np.array_equal(net.forward(x, np.full(10, 0.3)), again.forward(x, np.full(10, 0.3)))
    return _result("checkpoint_roundtrip", 0.0 if same else 1.0, same, "bit-exact")


def check_heun_order():
    kind = Diffusion(GAUSS1D)
    V = analytic_predictor(kind)
    x0 = np.linspace(-6, 6, 13)[:, None]
    ref = heun_integrate(V, x0, np.linspace(3, 0, 4097))
    errs = [float(np.max(np.abs(heun_integrate(V, x0, np.linspace(3, 0, n + 1)) - ref))) for n in (32, 64)]
    order = math.log2(errs[0] / errs[1])
    return _result("heun_order", order, order >= 1.8, ">= 1.8")


def check_hsm_gauss():
    force = Mlp.create(1, (64, 64), seed=0)
    v = Mlp.create(1, (64, 64), n_freq=6, seed=1)
    train_hsm(force, v, GAUSS1D, HsmConfig(iterations=1000, eval_every=0))
    esm = esm_loss(LearnedForce(force), GAUSS1D, 200000, 3)
    return _result("hsm_learns_score_gauss1d", esm, esm <= 0.02, "ESM <= 0.02")


def check_hsm_gmm():
    force = Mlp.create(1, (64, 64), seed=0)
    v = Mlp.create(1, (64, 64), n_freq=6, seed=1)
    train_hsm(force, v, GMM1D, HsmConfig(iterations=2000, eval_every=0))
    esm = esm_loss(LearnedForce(force), GMM1D, 200000, 3)
    return _result("hsm_learns_score_gmm1d", esm, esm <= 0.1, "ESM <= 0.1")


def check_correlation():
    r = correlation_study(GMM1D)
    return _result("esm_hsd_correlation", r.pearson, r.pearson >= 0.8, "pearson >= 0.8",
                   f"{len(r.pairs)} snapshots")


def check_snr():
    levels = [0.01, 1.0]
    cfg = HsmConfig(hsd_iterations=1000)
    h = snr_diagnostic("hsm", GMM1D, levels, n_batches=32, batch_size=64, cfg=cfg)
    d = snr_diagnostic("dsm", GMM1D, levels, n_batches=32, batch_size=64, cfg=cfg)
    a, b = median_snr(h, "hsm", 0.01), median_snr(d, "dsm", 0.01)
    return _result("snr_hsm_beats_dsm_small_noise", a / b, a > b, "HSM/DSM median SNR > 1",
                   f"hsm={a:.3g} dsm={b:.3g}")


def check_trained_sampling(n=100000):
    kind = Oscillation(GMM1D)
    net = Mlp.create(1, (64, 64), n_freq=6, time_scale=1.0 / kind.horizon, seed=0)
    train_hvp(kind, net, TrainConfig(iterations=10000, batch_size=1024))
    xs = heun_sample(net_predictor(net), make_schedule(kind, 64, learned=True), 21, n)
    ed = float(np.mean([energy_distance(xs, GMM1D.sample(make_rng(200 + r), n)) for r in range(4)]))
    base = self_distance_baseline(GMM1D, n, 22, replicates=4)
    return _result("trained_sampling_energy", ed / base, ed / base <= 3.0, "<= 3 x baseline")


def check_reflection_backward():
    kind = Reflection(REFLECT2D)
    net = Mlp.create(2, (128, 128), n_freq=6, time_scale=1.0, seed=0)
    train_hvp(kind, net, TrainConfig(iterations=8000, batch_size=1024, lr=2e-3, time_dist="power", time_power=3.0))
    xs = heun_sample(net_predictor(net), make_schedule(kind, 100, learned=True), 23, 20000)
    tv = max(hist_tv(xs, kind.sample_data(make_rng(24), 20000), lo=kind.lo, hi=kind.hi))
    return _result("reflection_backward_tv", tv, tv <= 0.15, "TV <= 0.15")


FAST = [check_score_fd, check_posterior, check_oscillation_energy, check_energy_order, check_volume,
        check_time_reversal, check_grad_velocity_loss, check_grad_leapfrog, check_dsm_equivalence,
        check_analytic_hvp, check_hsd_closed_form, check_taylor, check_constant_scale, check_edm,
        check_oracle_sampling, check_reflection_uniform, check_checkpoint, check_heun_order]
FULL = FAST + [lambda: check_hsd_closed_form((0.1, 0.5, 1.0), 2000), check_hsm_gauss, check_hsm_gmm,
               check_correlation, check_snr, lambda: check_oracle_sampling(100000), check_trained_sampling,
               check_reflection_backward]


def run_suite(level="fast", checkpoint=None, progress=None):
    if level not in ("fast", "full"):
        raise ValueError("level must be 'fast' or 'full'")
    checks = list(FAST if level == "fast" else FULL)
    if checkpoint is not None:
        checks.append(lambda: check_checkpoint(checkpoint))
    results = []
    start = time.perf_counter()
    for check in checks:
        t0 = time.perf_counter()
        try:
            res = check()
        except (HamflowError, ArithmeticError, ValueError) as exc:
            res = CheckResult(getattr(check, "__name__", "check"), False, float("nan"), "", 0.0,
                              f"{type(exc).__name__}: {exc}")
        res.seconds = time.perf_counter() - t0
        results.append(res)
        if progress is not None:
            progress(res)
    return {"level": level, "passed": all(r.passed for r in results), "seconds": time.perf_counter() - start,
            "checks": [asdict(r) for r in results]}
