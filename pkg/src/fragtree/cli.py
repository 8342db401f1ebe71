"""Command-line interface.

    fragtree roots      --law LAW [--tol T]
    fragtree analyze    --law LAW
    fragtree simulate   --law LAW --x X[,X...] --n N [--seed S] [--raw PREFIX]
    fragtree fixedpoint --law LAW --n N [--seed S]
    fragtree verify     --law LAW [--budget quick|standard|full]

Every command writes JSON (CSV for ``simulate`` and ``fixedpoint`` samples)
to ``--out`` or stdout.  Environment variables FRAGTREE_SEED,
FRAGTREE_THREADS, FRAGTREE_BUDGET and FRAGTREE_TOL supply defaults for the
matching flags.  Exit status: 0 success, 1 bad configuration, 2 numerical
failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys

import numpy as np

from . import __version__
from . import fixedpoint as fp
from . import renewal
from . import simulate as sm
from . import spectral as sp
from . import stats as st
from . import transforms as tr
from .laws import LawError, format_law, parse_law

NUMERICAL_ERRORS = (
    sp.SpectralError, fp.InvalidCertificate, fp.NonConvergence, sm.WorkCapExceeded,
    renewal.InstabilityError, tr.TransformError, FloatingPointError,
)

BUDGETS = {
    "quick": {"n": 2000, "x": 1e4, "fp_n": 20000, "phase_n": 300, "periods": 2},
    "standard": {"n": 10**4, "x": 1e5, "fp_n": 50000, "phase_n": 1000, "periods": 2},
    "full": {"n": 10**5, "x": 1e5, "fp_n": 10**5, "phase_n": 4000, "periods": 3},
}


class ConfigError(ValueError):
    pass


def _env(name, default):
    return os.environ.get(f"FRAGTREE_{name}", default)


def _parse_xs(text):
    try:
        xs = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --x list {text!r}") from exc
    if not xs or any(x < 0 or not math.isfinite(x) for x in xs):
        raise ConfigError("--x needs nonnegative finite values")
    return xs


def run_config(args, law):
    cfg = {
        "command": args.command,
        "law": law.to_config(),
        "law_spec": format_law(law),
        "seed": args.seed,
        "bit_stable": args.bit_stable,
        "tol": args.tol,
    }
    for k in ("x", "n", "budget"):
        if getattr(args, k, None) is not None:
            cfg[k] = getattr(args, k)
    return cfg


def _stamp(cfg, law, body):
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return {
        "version": __version__,
        "config": cfg,
        "config_hash": hashlib.sha256(blob.encode()).hexdigest()[:16],
        "law_hash": law.config_hash(),
        "seeds": [cfg["seed"]],
        **body,
    }


def _emit(args, text):
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _dump(obj):
    return json.dumps(st._jsonable(obj), indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------- commands


def cmd_roots(args, law):
    spec = sp.find_roots(law, tol=args.tol)
    rep = sp.classify_phase(spec)
    return _dump(_stamp(run_config(args, law), law, {"spectrum": spec.to_dict(), "phase": rep.to_dict()}))


def analyze_law(law, tol=sp.DEFAULT_TOL, seed=0, mc_samples=2 * 10**5):
    spec = sp.find_roots(law, tol=tol)
    rep = sp.classify_phase(spec)
    body = {"spectrum": spec.to_dict(), "phase": rep.to_dict(), "lattice_flag": law.lattice_flag}
    if rep.sigma2 is not None:
        body["phase"]["distance_to_half"] = rep.sigma2 - 0.5
        body["phase"]["near_boundary"] = abs(rep.sigma2 - 0.5) < 0.01
    try:
        model = sp.mean_expansion(law, spec)
    except sp.NonSimpleRootError as exc:
        body["moments"] = {"error": str(exc)}
        return spec, rep, None, body
    if rep.phase == "Normal":
        model.beta, model.beta_error = sp.beta_normal(law, spec)
        if law.is_rational:
            try:
                rng = np.random.default_rng(seed)
                b_rat, e_rat = sp.beta_rational(law, model, spec, n_samples=mc_samples, rng=rng)
                body["beta_rational"] = {"value": b_rat, "error_bound": e_rat}
            except sp.PreconditionError as exc:
                body["beta_rational"] = {"skipped": str(exc)}
    elif rep.phase == "CriticalLine":
        crit = sp.beta_critical(law, spec)
        model.beta = crit.beta
        body["beta_critical"] = crit.to_dict()
    elif rep.phase == "Periodic":
        body["variance_periodic"] = [
            {"lambda_i": li, "lambda_k": lk, "coefficient": c} for li, lk, c in sp.variance_periodic(law, spec)]
        body["contraction"] = fp.contraction_certificate(law, rep.lambda2).to_dict()
        if model.gamma is not None:
            body["gamma_nonzero"] = abs(model.gamma) > 1e-8
    body["moments"] = model.to_dict()
    return spec, rep, model, body


def cmd_analyze(args, law):
    _, _, _, body = analyze_law(law, args.tol, args.seed)
    return _dump(_stamp(run_config(args, law), law, body))


def cmd_simulate(args, law):
    xs = _parse_xs(args.x)
    ens = [sm.ensemble(law, x, args.n, sm.phase_locked_seed(args.seed, i), keep_raw=bool(args.raw),
                       threads=args.threads) for i, x in enumerate(xs)]
    if args.raw:
        for i, e in enumerate(ens):
            sm.write_raw(e, f"{args.raw}.{i}.f64")
    buf = io.StringIO()
    cfg = run_config(args, law)
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    buf.write(f"# fragtree {__version__} law={law.label} law_hash={law.config_hash()} "
              f"config_hash={hashlib.sha256(blob.encode()).hexdigest()[:16]}\n")
    buf.write("# master_seeds=" + ",".join(str(e.master_seed) for e in ens) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(sm.CSV_FIELDS)
    for e in ens:
        r = e.row()
        w.writerow([sm._fmt(r[k]) for k in sm.CSV_FIELDS])
    return buf.getvalue()


def cmd_fixedpoint(args, law):
    spec = sp.find_roots(law, tol=args.tol)
    model = sp.mean_expansion(law, spec)
    if model.phase != "Periodic":
        raise ConfigError(f"fixedpoint needs a Periodic-phase law, got {model.phase}")
    rng = np.random.default_rng(args.seed)
    xi = fp.iterate_to_fixed_point(law, model.lambda2, model.gamma, args.n, rng=rng)
    if args.samples:
        xi.to_csv(args.samples)
    target = fp.second_moment_targets(law, model.lambda2, model.gamma)
    mean, abs2, sq = xi.moments()
    body = {
        "certificate": fp.contraction_certificate(law, model.lambda2).to_dict(),
        "gamma": model.gamma, "generations": xi.generation,
        "raw_mean": xi.raw_mean, "raw_mean_stderr": xi.raw_stderr,
        "second_moments": {"abs2": abs2, "sq": sq}, "second_moment_targets": {"abs2": target[0], "sq": target[1]},
        "last_step_distance": xi.last_step_distance,
    }
    return _dump(_stamp(run_config(args, law), law, body))


def verify_law(law, budget="quick", seed=0, tol=sp.DEFAULT_TOL, threads=None):
    """End-to-end checks scaled by ``budget``; returns a VerificationReport."""
    B = BUDGETS[budget]
    spec, rep, model, body = analyze_law(law, tol, seed)
    report = st.VerificationReport(law.label, law.config_hash(), rep.phase, None,
                                   config={"budget": budget, "seed": seed})
    rec = report.records
    rec.append(st.TestRecord("root_residuals", max(r.residual for r in spec.roots), tol,
                             all(r.residual <= tol for r in spec.roots)))
    alpha_num = -tr.phi_prime(law, 1.0).value.real
    rec.append(st.TestRecord("alpha_consistency", abs(alpha_num - model.alpha) if model else None, 1e-8,
                             model is not None and abs(alpha_num - model.alpha) <= 1e-8))
    if law.is_deterministic:
        rng = np.random.default_rng(seed)
        xs = rng.uniform(1, 1e4, 50)
        agree = all(sm.run_deterministic(law, x).n_internal == sm.run_once(law, x).n_internal for x in xs)
        rec.append(st.TestRecord("deterministic_recursion_vs_simulation", None, None, agree, [50], [seed]))
        big = sm.run_deterministic(law, 1e5)
        ratio = big.n_internal * model.alpha / 1e5
        rec.append(st.TestRecord("deterministic_linear_growth", abs(ratio - 1), 0.05, abs(ratio - 1) < 0.05,
                                 details={"N_over_x_times_alpha": ratio}))
        ident = big.n_external == (law.b - 1) * big.n_internal + 1
        rec.append(st.TestRecord("external_node_identity", None, None, ident))
        report.phase_detected = "deterministic"
        return report, body
    x, n = B["x"], B["n"]
    e = sm.ensemble(law, x, n, seed, threads=threads)
    rec.append(st.TestRecord("external_node_identity", e.identity_violations, 0, e.identity_violations == 0,
                             [n], [seed]))
    if model is not None and model.exact:
        target = float(model.mean(x))
        slack = 0.0
    else:
        target = x / model.alpha
        slack = 0.05 * x / model.alpha
    dev = abs(e.mean - target)
    rec.append(st.TestRecord("mean", dev, 3 * e.stderr + slack, dev <= 3 * e.stderr + slack, [n], [seed],
                             {"x": x, "mean": e.mean, "target": target}))
    if rep.phase == "Normal":
        ratio = e.variance / x
        rel = abs(ratio / model.beta - 1)
        # sampling error of a variance estimate is about sqrt(2/n), plus finite-x slack
        thr = 4 * math.sqrt(2.0 / n) + 0.05
        rec.append(st.TestRecord("variance_constant", rel, thr, rel <= thr, [n], [seed],
                                 {"var_over_x": ratio, "beta": model.beta}))
        ks_thr, ku_thr = st.calibrate_normal_thresholds(n, reps=200, seed=seed)
        ks_thr, ku_thr = max(ks_thr, 0.02 if n >= 10**4 else 0.0), max(ku_thr, 0.2 if n >= 10**4 else 0.0)
        rec.append(st.clt_test(e, model, "sqrt_x", ks_thr, ku_thr))
        report.phase_detected = "Normal" if rec[-1].passed else "unclear"
    elif rep.phase == "CriticalLine":
        r = st.clt_test(e, model, "sqrt_x_ln_x", 0.05, 0.5)
        r.details["approximate"] = True
        r.passed = None
        rec.append(r)
        report.phase_detected = "CriticalLine"
    elif rep.phase == "Periodic":
        rng = np.random.default_rng(seed)
        xi = fp.iterate_to_fixed_point(law, model.lambda2, model.gamma, B["fp_n"], rng=rng)
        dm = abs(xi.raw_mean - model.gamma)
        rec.append(st.TestRecord("fixed_point_mean", dm, 3 * xi.raw_stderr, dm <= 3 * xi.raw_stderr,
                                 [B["fp_n"]], [seed]))
        tau = model.lambda2.imag
        xs = sm.phase_locked_grid(3.0, tau, B["periods"] - 1)
        xs = xs[xs <= 1e5]
        if xs.size >= 2:
            ens = sm.phase_locked_samples(law, 3.0, tau, xs.size - 1, B["phase_n"], seed, threads=threads)
            d = [fp.periodic_limit_distance(en, xi, model) for en in ens]
            slope = float(np.polyfit(np.log(xs), np.log(d), 1)[0])
            thr = model.kappa - model.lambda2.real + 0.1
            rec.append(st.TestRecord("periodic_limit_distance", slope, thr, slope <= thr,
                                     [B["phase_n"]] * len(xs), [seed], {"x": xs.tolist(), "distance": d}))
        report.phase_detected = "Periodic"
    else:
        report.phase_detected = rep.phase
    return report, body


def cmd_verify(args, law):
    report, _ = verify_law(law, args.budget, args.seed, args.tol, args.threads)
    out = report.to_dict()
    out.update(_stamp(run_config(args, law), law, {}))
    return _dump(out)


COMMANDS = {
    "roots": cmd_roots, "analyze": cmd_analyze, "simulate": cmd_simulate,
    "fixedpoint": cmd_fixedpoint, "verify": cmd_verify,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--law", required=True, help="law spec, e.g. binary, mary:27, quad:9, det:1/3,2/3")
    common.add_argument("--seed", type=int, default=int(_env("SEED", 0)))
    common.add_argument("--out", default=None, help="output path (default stdout)")
    common.add_argument("--tol", type=float, default=float(_env("TOL", sp.DEFAULT_TOL)))
    common.add_argument("--threads", type=int, default=int(_env("THREADS", 0)) or None)
    common.add_argument("--bit-stable", action="store_true",
                        help="fixed chunking (always in effect; recorded in the output)")
    p = argparse.ArgumentParser(prog="fragtree", description="random fragmentation tree toolkit")
    p.add_argument("--version", action="version", version=f"fragtree {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("roots", parents=[common])
    sub.add_parser("analyze", parents=[common])
    s = sub.add_parser("simulate", parents=[common])
    s.add_argument("--x", required=True, help="comma-separated sizes")
    s.add_argument("--n", type=int, default=1000)
    s.add_argument("--raw", default=None, help="prefix for raw little-endian float64 files")
    f = sub.add_parser("fixedpoint", parents=[common])
    f.add_argument("--n", type=int, default=10**5)
    f.add_argument("--samples", default=None, help="CSV path for fixed-point samples")
    v = sub.add_parser("verify", parents=[common])
    v.add_argument("--budget", choices=sorted(BUDGETS), default=_env("BUDGET", "quick"))
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code else 0
    try:
        law = parse_law(args.law)
        if getattr(args, "n", 1) is not None and getattr(args, "n", 1) < 1:
            raise ConfigError("--n must be >= 1")
        text = COMMANDS[args.command](args, law)
    except (LawError, ConfigError, ValueError) as exc:
        if isinstance(exc, NUMERICAL_ERRORS):
            print(f"fragtree: numerical failure: {exc}", file=sys.stderr)
            return 2
        print(f"fragtree: configuration error: {exc}", file=sys.stderr)
        return 1
    except NUMERICAL_ERRORS as exc:
        print(f"fragtree: numerical failure: {exc}", file=sys.stderr)
        return 2
    _emit(args, text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
