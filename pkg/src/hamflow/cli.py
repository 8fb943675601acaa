"""``hamflow`` command line.

Exit codes: 0 ok, 2 configuration / input error, 3 numerical divergence,
4 validation failure.
"""

import argparse
import dataclasses
import json
import os
import sys
import warnings

import numpy as np

from .config import ExperimentConfig, fixture_names, load_raw
from .core import GaussianMixture, make_rng
from .dynamics import LearnedForce, ZeroForce
from .errors import ConfigError, DivergenceError, HamflowError, IntegrityError, InvalidMixtureError
from .hgf import train_hvp
from .hsm import HsmOscillationWarning, correlation_study, snr_diagnostic, taylor_check, train_hsm
from .io import ensure_dir, read_points, run_metadata, write_csv, write_json, write_points
from .metrics import energy_distance, moment_table, self_distance_baseline, sliced_w2
from .net import Mlp
from .sampler import analytic_predictor, heun_sample, make_schedule, net_predictor

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_VALIDATION = 0, 2, 3, 4


def _load_config(args):
    raw, path = load_raw(args.config)
    raw = dict(raw)
    if getattr(args, "seed", None) is not None:
        raw["seed"] = args.seed
        for sec in ("train", "hsm"):
            if sec in raw:
                raw[sec] = {k: v for k, v in raw[sec].items() if k != "seed"}
    if getattr(args, "iterations", None) is not None:
        sec = "hsm" if args.command == "train-hsm" else "train"
        raw[sec] = {**raw.get(sec, {}), "iterations": args.iterations}
    return ExperimentConfig.from_dict(raw, path)


def _out_dir(args, cfg):
    out = args.out or cfg.out or os.path.join("runs", cfg.name)
    return ensure_dir(out)


def cmd_train_hvp(args):
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    kind = cfg.make_kind()
    net = cfg.make_velocity_net()
    result = train_hvp(kind, net, cfg.train)
    h = cfg.config_hash()
    net.save(os.path.join(out, "hvp.json"), config_hash=h)
    write_csv(os.path.join(out, "hvp_loss.csv"), ["iteration", "loss"], enumerate(result.losses))
    write_json(os.path.join(out, "metadata.json"),
               run_metadata(command="train-hvp", config=cfg.resolved(), config_hash=h, source=cfg.source))
    print(f"wrote {out}/hvp.json ({len(result.losses)} iterations"
          + (f", final loss {result.losses[-1]:.6g})" if result.losses else ")"))
    return EXIT_OK


def cmd_train_hsm(args):
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    force = cfg.make_force_net()
    v_net = Mlp.create(cfg.mixture.d, cfg.hsm.hidden, n_freq=cfg.hsm.n_freq, seed=cfg.seed + 1)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", HsmOscillationWarning)
        res = train_hsm(force, v_net, cfg.mixture, cfg.hsm)
    h = cfg.config_hash()
    force.save(os.path.join(out, "force.json"), config_hash=h)
    v_net.save(os.path.join(out, "velocity.json"), config_hash=h)
    cols = ["iteration", "esm", "hsd_proxy", "loss_phi", "loss_theta"]
    write_csv(os.path.join(out, "hsm_history.csv"), cols, ([r[c] for c in cols] for r in res.history))
    notes = [str(w.message) for w in caught if issubclass(w.category, HsmOscillationWarning)]
    for n in notes:
        print(f"warning: {n}", file=sys.stderr)
    write_json(os.path.join(out, "metadata.json"),
               run_metadata(command="train-hsm", config=cfg.resolved(), config_hash=h, source=cfg.source,
                            warnings=notes))
    final = res.history[-1]["esm"] if res.history else float("nan")
    print(f"wrote {out}/force.json (final ESM {final:.6g})")
    return EXIT_OK


def cmd_sample(args):
    cfg = _load_config(args)
    kind = cfg.make_kind()
    if args.oracle == bool(args.checkpoint):
        raise ConfigError("give exactly one of --oracle or --checkpoint")
    steps = args.steps or cfg.sample["steps"]
    n = args.n or cfg.sample["n"]
    seed = cfg.seed if args.seed is None else args.seed
    if args.oracle:
        V = analytic_predictor(kind)
        ck_hash = None
    else:
        net = Mlp.load(args.checkpoint)
        V = net_predictor(net)
        ck_hash = net.to_dict()["payload_sha256"]
    sched = make_schedule(kind, steps, learned=not args.oracle, terminal=args.terminal or cfg.sample["terminal"])
    x = heun_sample(V, sched, make_rng(seed), n)
    out = args.out or os.path.join(cfg.out or os.path.join("runs", cfg.name), "samples.csv")
    ensure_dir(os.path.dirname(out) or ".")
    write_points(out, x)
    write_json(out + ".meta.json", run_metadata(command="sample", schedule=sched.describe(), seed=seed, n=n,
                                                oracle=bool(args.oracle), checkpoint=args.checkpoint,
                                                checkpoint_sha256=ck_hash, config_hash=cfg.config_hash()))
    print(f"wrote {n} samples to {out}")
    return EXIT_OK


def _mixture_from_args(args):
    if args.config:
        return ExperimentConfig.load(args.config).mixture
    try:
        spec = json.loads(args.mixture)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"--mixture is not valid JSON: {exc}") from None
    try:
        return GaussianMixture.from_spec(spec)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid mixture: {exc}") from None


def evaluate_samples(x, m, seed=0, n_proj=64, replicates=4):
    """Metrics of a sample set against a mixture, plus the true-vs-true noise floor.

    Energy distances at moderate ``n`` fluctuate by several fold between
    reference draws, so both the distance and the baseline average
    ``replicates`` independent reference sets.
    """
    if x.shape[1] != m.d:
        raise ConfigError(f"samples have dimension {x.shape[1]}, mixture has {m.d}")
    rng = make_rng([seed, 0x5EED])  # independent of the stream a sampler run with `seed` used
    refs = [m.sample(rng, len(x)) for _ in range(replicates)]
    return {"n": int(len(x)), "replicates": replicates,
            "energy_distance": float(np.mean([energy_distance(x, r) for r in refs])),
            "self_distance_baseline": self_distance_baseline(m, len(x), rng, replicates),
            "sliced_w2": sliced_w2(x, refs[0], n_proj, rng), "moments": moment_table(x, m)}


def cmd_eval(args):
    if not (args.config or args.mixture):
        raise ConfigError("give --config or --mixture")
    m = _mixture_from_args(args)
    x = read_points(args.samples)
    metrics = evaluate_samples(x, m, args.seed)
    metrics["ratio_to_baseline"] = metrics["energy_distance"] / metrics["self_distance_baseline"]
    if args.out:
        write_json(args.out, metrics)
    print(json.dumps(metrics, indent=2))
    return EXIT_OK


def cmd_validate(args):
    from .validate import run_suite

    def progress(r):
        mark = "PASS" if r.passed else "FAIL"
        print(f"[{mark}] {r.name}: {r.value:.6g} ({r.threshold}) {r.seconds:.1f}s {r.detail}", file=sys.stderr)

    report = run_suite(args.level, checkpoint=args.checkpoint, progress=progress)
    text = json.dumps(report, indent=2)
    if args.report:
        with open(args.report, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return EXIT_OK if report["passed"] else EXIT_VALIDATION


def cmd_diagnose(args):
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    m = cfg.mixture
    if args.study == "taylor":
        force = LearnedForce(Mlp.load(args.checkpoint)) if args.checkpoint else ZeroForce()
        rows = taylor_check(force, m, args.t or [0.05, 0.1, 0.2, 0.4], cfg.hsm, eval_n=cfg.hsm.hsd_eval)
        write_csv(os.path.join(out, "taylor.csv"), ["t", "hsd", "stderr", "taylor", "ratio"], rows)
    elif args.study == "snr":
        levels = args.t or [0.01, 0.03, 0.1, 0.3, 1.0]
        rows = []
        for method in ("hsm", "dsm"):
            rows += snr_diagnostic(method, m, levels, cfg=cfg.hsm, seed=cfg.seed)
        write_csv(os.path.join(out, "snr.csv"), ["param_id", "method", "sigma", "mean", "std"], rows)
    else:
        res = correlation_study(m, dataclasses.replace(cfg.hsm, eval_every=0), seed=cfg.seed)
        write_csv(os.path.join(out, "correlation.csv"), ["iteration", "esm", "hsd", "hsd_stderr"], res.pairs)
        print(f"pearson r = {res.pearson:.4f}")
    print(f"wrote {args.study} table to {out}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="hamflow", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, iterations=False):
        sp.add_argument("config", help=f"TOML/JSON config path or bundled fixture ({', '.join(fixture_names())})")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int)
        if iterations:
            sp.add_argument("--iterations", type=int)

    common(sub.add_parser("train-hvp", help="train a velocity predictor for a fixed force"), iterations=True)
    common(sub.add_parser("train-hsm", help="min-max Hamiltonian score matching"), iterations=True)

    sp = sub.add_parser("sample", help="backward Heun sampling")
    sp.add_argument("config")
    g = sp.add_mutually_exclusive_group()
    g.add_argument("--oracle", action="store_true", help="use the closed-form velocity predictor")
    g.add_argument("--checkpoint", help="trained velocity-predictor checkpoint")
    sp.add_argument("--steps", type=int)
    sp.add_argument("--n", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--terminal", help="terminal law override (e.g. 'exact', 'gaussian')")
    sp.add_argument("--out", help="samples CSV path")

    sp = sub.add_parser("eval", help="metrics of a samples CSV against a mixture")
    sp.add_argument("samples")
    sp.add_argument("--config")
    sp.add_argument("--mixture", help='JSON {"weights": [...], "means": [[...]], "variances": [...]}')
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", help="metrics JSON path")

    sp = sub.add_parser("validate", help="run the built-in invariant suite")
    sp.add_argument("--level", choices=["fast", "full"], default="fast")
    sp.add_argument("--report", help="write the JSON report here instead of stdout")
    sp.add_argument("--checkpoint", help="also verify this checkpoint's integrity")

    sp = sub.add_parser("diagnose", help="emit diagnostic tables (taylor, snr, correlation)")
    sp.add_argument("study", choices=["taylor", "snr", "correlation"])
    common(sp)
    sp.add_argument("--checkpoint", help="force-net checkpoint (taylor study; default zero force)")
    sp.add_argument("--t", type=float, action="append", help="time / noise level (repeatable)")
    return p


COMMANDS = {"train-hvp": cmd_train_hvp, "train-hsm": cmd_train_hsm, "sample": cmd_sample, "eval": cmd_eval,
            "validate": cmd_validate, "diagnose": cmd_diagnose}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except DivergenceError as exc:
        print(f"error: numerical divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, InvalidMixtureError, IntegrityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except HamflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FloatingPointError as exc:  # pragma: no cover - numpy errstate raise
        print(f"error: numerical divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
