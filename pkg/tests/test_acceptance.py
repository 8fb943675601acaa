"""One test per acceptance criterion; each prints a PASS/FAIL line (collected again in the run summary)."""

import json
import math
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from hamflow.core import GaussianMixture, make_rng
from hamflow.dynamics import PhaseState, ScoreForce, ZeroForce, LearnedForce, volume_check
from hamflow.hgf import Oscillation, Reflection, TrainConfig, constant_scale_check, train_hvp
from hamflow.hsm import HsmConfig, correlation_study, esm_loss, hsd_estimate, median_snr, snr_diagnostic, \
    taylor_check, train_hsm
from hamflow.metrics import energy_distance, hist_tv, ks_uniform, self_distance_baseline
from hamflow.net import Mlp
from hamflow.sampler import analytic_predictor, edm_equivalence, edm_sigmas, heun_sample, make_schedule, \
    net_predictor
from hamflow.validate import diffusion_dsm_pair, energy_order, random_net

GAUSS = GaussianMixture(np.array([1.0]), np.zeros((1, 1)), np.array([1.0]))
GMM = GaussianMixture(np.array([0.4, 0.6]), np.array([[-2.0], [2.0]]), np.array([1.0, 1.0]))
BLOBS = GaussianMixture(np.full(4, 0.25), np.array([[-0.5, -0.5], [-0.5, 0.5], [0.5, -0.5], [0.5, 0.5]]),
                        np.full(4, 0.0225))


def test_criterion_01_closed_form_hsd(verdict):
    parts, ok = [], True
    for t in (0.1, 0.5, 1.0):
        t0 = time.perf_counter()
        est = hsd_estimate(ZeroForce(), GAUSS, HsmConfig(fixed_t=t))
        secs = time.perf_counter() - t0
        exact = t * t / (1 + t * t)
        rel = abs(est.value / exact - 1)
        ok &= rel <= 0.10 and secs < 120
        parts.append(f"t={t}: {est.value:.5f} vs {exact:.5f} (rel {rel:.3f}, {secs:.0f}s)")
    verdict(1, ok, "HSD = t^2/(1+t^2) within 10%, < 2 min each; " + "; ".join(parts))


def test_criterion_02_taylor_law(verdict):
    row = taylor_check(ZeroForce(), GAUSS, [0.1], HsmConfig(), eval_n=2 ** 22)[0]
    dev = abs(row.ratio - 1)
    verdict(2, dev <= 0.02, f"|HSD/(2t^2 L_esm) - 1| = {dev:.4f} <= 0.02 at t=0.1 "
                            f"(ratio {row.ratio:.4f}, closed form {1 / 1.01:.4f})")


def test_criterion_03_hsd_esm_correlation(verdict):
    t0 = time.perf_counter()
    res = correlation_study(GMM)
    secs = time.perf_counter() - t0
    ok = res.pearson >= 0.8 and len(res.pairs) >= 10 and secs <= 1800
    verdict(3, ok, f"Pearson r = {res.pearson:.3f} >= 0.8 over {len(res.pairs)} snapshots in {secs:.0f}s")


def test_criterion_04_hsm_learns_score(verdict):
    results = {}
    for name, m, iters in (("gauss1d", GAUSS, 1000), ("gmm1d", GMM, 2000)):
        force = Mlp.create(1, (64, 64), seed=0)
        v = Mlp.create(1, (64, 64), n_freq=6, seed=1)
        train_hsm(force, v, m, HsmConfig(iterations=iters, eval_every=0))
        results[name] = esm_loss(LearnedForce(force), m, 200000, 3)
    ok = results["gauss1d"] <= 0.02 and results["gmm1d"] <= 0.1
    verdict(4, ok, f"oracle ESM N(0,1) = {results['gauss1d']:.4f} <= 0.02; "
                   f"mixture = {results['gmm1d']:.4f} <= 0.1")


def test_criterion_05_diffusion_is_dsm(verdict):
    net = random_net(1, 8, n_freq=6)
    rng = make_rng(9)
    x = GMM.sample(rng, 256)
    eps = rng.standard_normal(x.shape)
    worst = 0.0
    for t in (0.05, 0.5, 2.0, 3.0):
        lv, ld, gv, gd = diffusion_dsm_pair(net, x, eps, t)
        worst = max(worst, float(np.max(np.abs(lv - ld) / np.abs(lv))))
        worst = max(worst, max(float(np.max(np.abs(a - b)) / np.max(np.abs(a))) for a, b in zip(gv, gd)))
    verdict(5, worst <= 1e-12, f"max relative gap of per-sample losses and phi-gradients = {worst:.2e} <= 1e-12")


def _energy_vs_baseline(xs, m, seed, n):
    ed = float(np.mean([energy_distance(xs, m.sample(make_rng([seed, r]), n)) for r in range(4)]))
    return ed, self_distance_baseline(m, n, [seed, 99], replicates=4)


def test_criterion_06_exact_predictor_generation(verdict):
    n = 100000
    kind = Oscillation(GMM)
    xs = heun_sample(analytic_predictor(kind), make_schedule(kind, 64), 13, n)
    ed, base = _energy_vs_baseline(xs, GMM, 1, n)
    net = Mlp.create(1, (64, 64), n_freq=6, time_scale=1.0 / kind.horizon, seed=0)
    train_hvp(kind, net, TrainConfig(iterations=10000, batch_size=1024))
    xt = heun_sample(net_predictor(net), make_schedule(kind, 64, learned=True), 21, n)
    ed_t, base_t = _energy_vs_baseline(xt, GMM, 2, n)
    ok = ed / base <= 1.5 and ed_t / base_t <= 3.0
    verdict(6, ok, f"analytic predictor {ed / base:.2f} x baseline <= 1.5; trained {ed_t / base_t:.2f} x <= 3 "
                   f"(64 Heun steps, n=1e5)")


def test_criterion_07_integrator_invariants(verdict):
    s = PhaseState(np.array([[0.3], [-1.2], [2.5]]), np.array([[1.0], [0.4], [-0.8]]))
    order, d1, d2 = energy_order(ScoreForce(GMM), s)
    two = GaussianMixture(np.array([0.5, 0.5]), np.array([[-1.0, 0.5], [1.0, -0.5]]), np.array([0.5, 0.8]))
    dets = [volume_check(ScoreForce(m), PhaseState(np.array(x), np.array(v)), 1.0, n_steps=k)
            for m, x, v in ((GMM, [0.3], [0.7]), (two, [0.2, -0.4], [0.5, 1.0])) for k in (1, 5, 20)]
    worst = max(abs(d - 1) for d in dets)
    verdict(7, order >= 1.9 and worst <= 1e-6,
            f"energy-drift order {order:.3f} >= 1.9; max |det J - 1| = {worst:.1e} <= 1e-6")


def test_criterion_08_edm_equivalence(verdict):
    x0 = make_rng(11).normal(0, 80, size=(64, 1))
    a, b = edm_equivalence(GMM, x0, edm_sigmas(256))
    gap = float(np.max(np.abs(a - b)))
    verdict(8, gap <= 1e-3, f"max endpoint gap {gap:.2e} <= 1e-3 (256 steps)")


def test_criterion_09_constant_scale(verdict):
    kind = Oscillation(GMM)
    est = [constant_scale_check(GMM, kind.alpha, t, 100000, rng=[9, i])
           for i, t in enumerate((0.0, kind.horizon / 4, kind.horizon / 2))]
    worst = 0.0
    for e in est[1:]:
        worst = max(worst, abs(e.x_sq - est[0].x_sq) / math.hypot(e.x_sq_se, est[0].x_sq_se),
                    abs(e.v_sq - est[0].v_sq) / math.hypot(e.v_sq_se, est[0].v_sq_se))
    verdict(9, worst <= 3, f"largest gap across t in {{0, T/4, T/2}} = {worst:.2f} standard errors <= 3 "
                           f"(E|x_t|^2 ~ {est[0].x_sq:.3f}, E|v_t|^2 ~ {est[0].v_sq:.3f}, n=1e5)")


def test_criterion_10_snr_direction(verdict):
    levels = [0.01, 0.1, 1.0]
    cfg = HsmConfig(hsd_iterations=1000)
    h = snr_diagnostic("hsm", GMM, levels, n_batches=32, batch_size=64, cfg=cfg, seed=0)
    d = snr_diagnostic("dsm", GMM, levels, n_batches=32, batch_size=64, cfg=cfg, seed=0)
    table = ", ".join(f"{lv}: hsm {median_snr(h, 'hsm', lv):.3g} / dsm {median_snr(d, 'dsm', lv):.3g}"
                      for lv in levels)
    a, b = median_snr(h, "hsm", levels[0]), median_snr(d, "dsm", levels[0])
    verdict(10, a > b, f"median SNR at smallest level HSM {a:.3g} > DSM {b:.3g} (seed 0; {table})")


def test_criterion_11_reflection(verdict):
    kind = Reflection(BLOBS)
    x, v = kind.sample_initial(make_rng(15), 100000)
    ks = float(ks_uniform(kind.push(x, v, 3.0)[0], kind.lo, kind.hi))
    net = Mlp.create(2, (128, 128), n_freq=6, time_scale=1.0, seed=0)
    train_hvp(kind, net, TrainConfig(iterations=8000, batch_size=1024, lr=2e-3, time_dist="power",
                                     time_power=3.0))
    xs = heun_sample(net_predictor(net), make_schedule(kind, 100, learned=True), 23, 20000)
    tv = hist_tv(xs, kind.sample_data(make_rng(24), 20000), lo=kind.lo, hi=kind.hi)
    verdict(11, ks <= 0.02 and max(tv) <= 0.15,
            f"forward KS to uniform {ks:.4f} <= 0.02; backward histogram TV {max(tv):.3f} <= 0.15 "
            f"(per dim {[round(q, 3) for q in tv]})")


def _validate(level, tmp_path):
    report = tmp_path / f"{level}.json"
    t0 = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "hamflow.cli", "validate", "--level", level, "--report",
                           str(report)], cwd=tmp_path, capture_output=True, text=True,
                          env={**os.environ, "PYTHONHASHSEED": "0"})
    secs = time.perf_counter() - t0
    data = json.loads(report.read_text()) if report.exists() else {"passed": False, "checks": []}
    failed = [c["name"] for c in data["checks"] if not c["passed"]]
    return proc.returncode, secs, len(data["checks"]), failed


@pytest.mark.slow
def test_criterion_12_validation_suites(verdict, tmp_path):
    code_f, secs_f, n_f, failed_f = _validate("fast", tmp_path)
    code_u, secs_u, n_u, failed_u = _validate("full", tmp_path)
    ok = code_f == 0 and secs_f < 120 and code_u == 0 and secs_u < 3600
    verdict(12, ok, f"validate fast: {n_f} checks, exit {code_f}, {secs_f:.0f}s < 120s; "
                    f"validate full: {n_u} checks, exit {code_u}, {secs_u:.0f}s < 3600s"
                    + (f"; failed {failed_f + failed_u}" if failed_f or failed_u else ""))
