"""Command line entry point.

Exit codes: 0 all requested checks pass, 2 a check failed, 1 execution or
config error, 64 usage error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import analysis
from .config import KNOWN_CHECKS, load_config
from .dataio import load_libsvm, normalize_maxabs, shard_uniform, synth_blobs
from .engine import RunConfig, reference_optimum, run_ensemble
from .errors import ConfigError, NoConvergence, NotConvex, RelaxDGDError
from .objectives import (
    OBJECTIVE_KINDS,
    DoubleWell,
    Exponential,
    Logistic,
    Quadratic,
    Quartic,
    certify_smoothness,
)
from .stepsize import RULE_NAMES, make_rule
from .topology import PRESETS, mixing_from_preset

EXIT_OK, EXIT_ERROR, EXIT_FAIL, EXIT_USAGE = 0, 1, 2, 64


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _is_nested(value):
    return isinstance(value, list) and value and all(isinstance(v, list) for v in value)


def _per_agent(value, n, key):
    """Broadcast a shared vector, or validate one vector per agent."""
    if _is_nested(value) and not key.endswith(".A"):
        if len(value) != n:
            raise ConfigError(f"expected {n} per-agent entries, got {len(value)}", None, key)
        return [np.asarray(v, dtype=float) for v in value]
    return [np.asarray(value, dtype=float)] * n


def build_mixing(cfg):
    name = cfg.require("topology.name", str)
    if name not in PRESETS:
        raise ConfigError(f"unknown topology {name!r}; expected one of {PRESETS}", cfg.line_of("topology.name"), "topology.name")
    n = cfg.require("topology.n", int)
    return mixing_from_preset(name, n, cfg.get("topology.edges", kind=list))


def build_objectives(cfg, n, normalize=False):
    kind = cfg.require("objective.kind", str)
    if kind not in OBJECTIVE_KINDS:
        raise ConfigError(f"unknown objective {kind!r}; expected one of {OBJECTIVE_KINDS}", cfg.line_of("objective.kind"), "objective.kind")
    if kind == "quadratic":
        if "objective.A" in cfg.entries:
            mats = [np.asarray(cfg.require("objective.A", list), dtype=float)] * n
        else:
            mats = [np.diag(s) for s in _per_agent(cfg.require("objective.spectrum", list), n, "objective.spectrum")]
        dim = mats[0].shape[0]
        b = _per_agent(cfg.get("objective.b", [0.0] * dim, list), n, "objective.b")
        return [Quadratic(A, bi) for A, bi in zip(mats, b)]
    if kind == "exponential":
        return [Exponential(a) for a in _per_agent(cfg.require("objective.a", list), n, "objective.a")]
    if kind == "quartic":
        return [Quartic(c) for c in _per_agent(cfg.require("objective.c", list), n, "objective.c")]
    if kind == "double_well":
        return [DoubleWell(cfg.get("objective.dim", 1, int)) for _ in range(n)]
    data = cfg.require("objective.data", str)
    if data == "synth_blobs":
        ds = synth_blobs(
            cfg.get("objective.samples", 100, int),
            cfg.get("objective.dim", 2, int),
            cfg.get("objective.margin", 2.0, float),
            cfg.get("objective.data_seed", 0, int),
        )
    else:
        try:
            ds = load_libsvm(data)
        except OSError as exc:
            raise ConfigError(f"cannot read dataset: {exc}", cfg.line_of("objective.data"), "objective.data") from None
    if normalize or cfg.get("objective.normalize", False, bool):
        ds = normalize_maxabs(ds)
    shards = shard_uniform(ds, n, cfg.get("objective.shard", "contiguous", str))
    l2 = cfg.get("objective.l2", 0.0, float)
    return [Logistic.from_samples(s.samples, ds.dim, l2) for s in shards]


def build_rule(cfg, mixing, K):
    name = cfg.require("step.rule", str)
    if name not in RULE_NAMES:
        raise ConfigError(f"unknown step rule {name!r}; expected one of {RULE_NAMES}", cfg.line_of("step.rule"), "step.rule")
    params = {
        "L0": cfg.get("step.L0", kind=float),
        "L1": cfg.get("step.L1", 0.0, float),
        "rho": cfg.get("step.rho", mixing.rho, float),
        "sigma": cfg.get("step.sigma", 0.0, float),
        "K": cfg.get("step.K", K, int),
        "alpha": cfg.get("step.alpha", kind=float),
    }
    needed = {"constant": ["alpha"]}.get(name, ["L0"])
    for key in needed:
        if params[key] is None:
            raise ConfigError("missing required field", None, f"step.{key}")
    return make_rule(name, **{k: v for k, v in params.items() if v is not None})


def _optimum(cfg, objectives):
    x_star = cfg.get("objective.x_star", kind=list)
    F_star = cfg.get("objective.F_star", kind=float)
    if x_star is not None:
        x_star = np.asarray(x_star, dtype=float)
        if F_star is None:
            F_star = float(np.mean([f.value(x_star) for f in objectives]))
        return x_star, F_star
    try:
        opt = reference_optimum(objectives)
    except (NotConvex, NoConvergence):
        return None, F_star
    return opt.x_star, opt.F_star if F_star is None else F_star


def build_run(cfg, normalize=False):
    mixing = build_mixing(cfg)
    objectives = build_objectives(cfg, mixing.n, normalize)
    K = cfg.require("run.K", int)
    rule = build_rule(cfg, mixing, K)
    x_star, F_star = _optimum(cfg, objectives)
    init = cfg.get("run.init", "zeros", (str, list))
    run = RunConfig(
        mixing=mixing,
        objectives=objectives,
        rule=rule,
        K=K,
        seed=cfg.get("seed", 0, int),
        init=init,
        init_scale=cfg.get("run.init_scale", 1.0, float),
        curvature_every=cfg.get("run.curvature_every", 0, int),
        x_star=x_star,
        F_star=F_star,
        batch_size=cfg.get("run.batch_size", kind=int),
    )
    return run


def _analysis_params(cfg, run):
    rule = run.rule
    return {
        "L0": cfg.get("analysis.L0", getattr(rule, "L0", None), float),
        "L1": cfg.get("analysis.L1", getattr(rule, "L1", 0.0), float),
        "epsilon": cfg.get("analysis.epsilon", kind=float),
        "slack": cfg.get("analysis.slack", analysis.DEFAULT_SLACK, float),
        "sigma": cfg.get("analysis.sigma", kind=float),
        "delta": cfg.get("analysis.delta", kind=float),
        "min_pearson": cfg.get("analysis.min_pearson", kind=float),
    }


def _need(params, *keys, check):
    for k in keys:
        if params[k] is None:
            raise ConfigError(f"check '{check}' needs analysis.{k}", None, f"analysis.{k}")


def run_checks(cfg, run, trajs):
    """Evaluate requested checks; returns (check reports, verdicts, curvature study, lines)."""
    checks = cfg.get("analysis.checks", [], list)
    for c in checks:
        if c not in KNOWN_CHECKS:
            raise ConfigError(f"unknown check {c!r}; expected one of {KNOWN_CHECKS}", cfg.line_of("analysis.checks"), "analysis.checks")
    p = _analysis_params(cfg, run)
    rho = run.mixing.rho
    reports, verdicts, lines = [], [], []
    study = None

    for t in trajs:
        tag = f"[seed={t.seed}]"
        if t.failure:
            lines.append(f"FAIL run{tag}: {t.failure}")
        for c in checks:
            if c in ("lemma2", "lemma3"):
                _need(p, "L0", check=c)
                fn = analysis.check_descent_lemma2 if c == "lemma2" else analysis.check_lemma3_regimes
                rep = fn(t, p["L0"], p["L1"], p["slack"])
            elif c == "lemma6":
                rep = analysis.check_lemma6(t)
            else:
                rep = None
            if rep is not None:
                rep.name = f"{c}{tag}"
                reports.append(rep)
                lines.append(
                    f"{'PASS' if rep.passed else 'FAIL'} {rep.name}: min margin {rep.min_margin:.6g} "
                    f"over {len(rep.checked)} steps"
                )
                continue
            v = None
            if c in ("theorem1", "corollary1"):
                _need(p, "L0", "epsilon", check=c)
                if c == "theorem1":
                    v = analysis.verdict_theorem1(t, p["L0"], p["L1"], p["epsilon"])
                else:
                    v = analysis.verdict_corollary1(t, p["L0"], p["L1"], rho, p["epsilon"])
            elif c in ("theorem2", "corollary2"):
                _need(p, "L0", "epsilon", check=c)
                if c == "theorem2":
                    v = analysis.verdict_theorem2(t, p["L0"], p["L1"], p["epsilon"])
                else:
                    v = analysis.verdict_corollary2(t, p["L0"], p["L1"], rho, p["epsilon"])
            if v is not None:
                verdicts.append(v)
                lines.append(_verdict_line(v, tag))

    stochastic = [c for c in checks if c in ("theorem3", "theorem4")]
    if stochastic:
        _need(p, "L0", "epsilon", check=stochastic[0])
        sigma, delta = p["sigma"], p["delta"]
        if sigma is None or delta is None:
            noise = analysis.estimate_noise(trajs, run.objectives)
            sigma = noise.sigma_hat if sigma is None else sigma
            delta = noise.delta_hat if delta is None else delta
        for c in stochastic:
            fn = analysis.verdict_theorem3 if c == "theorem3" else analysis.verdict_theorem4
            v = fn(trajs, p["L0"], p["L1"], rho, sigma, delta, p["epsilon"])
            verdicts.append(v)
            lines.append(_verdict_line(v, f"[runs={len(trajs)}]"))

    if "curvature" in checks or run.curvature_every:
        try:
            study = analysis.curvature_study(trajs[0])
        except RelaxDGDError as exc:
            if "curvature" in checks:
                raise
            lines.append(f"INFO curvature: {exc}")
        if study is not None and "curvature" in checks:
            ok = p["min_pearson"] is None or study.pearson_r >= p["min_pearson"]
            lines.append(
                f"{'PASS' if ok else 'FAIL'} curvature: pearson_r={study.pearson_r:.6g} "
                f"L0_hat={study.L0_hat:.6g} L1_hat={study.L1_hat:.6g}"
            )
            reports.append(_CurvatureCheck(ok, study))
    return reports, verdicts, study, lines


class _CurvatureCheck:
    name = "curvature"

    def __init__(self, ok, study):
        self.passed = ok
        self.min_margin = study.pearson_r
        self.checked = list(range(len(study.pairs)))


def _verdict_line(v, tag):
    status = "PASS" if v.satisfied else "FAIL"
    return f"{status} {v.theorem}{tag}: K_achieved={v.K_achieved} <= K_required={v.K_required} (epsilon={v.epsilon:g})"


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(type(o).__name__)


def cmd_run(args):
    cfg = load_config(args.config)
    name = cfg.name
    out_root = cfg.get("output_dir", os.path.dirname(os.path.abspath(args.config)), str)
    run = build_run(cfg, args.normalize)
    algorithm = cfg.get("run.algorithm", "dgd", str)
    if algorithm not in ("dgd", "dsgd"):
        raise ConfigError("run.algorithm must be 'dgd' or 'dsgd'", cfg.line_of("run.algorithm"), "run.algorithm")
    n_runs = cfg.get("ensemble", 1, int)
    if n_runs < 1:
        raise ConfigError("ensemble must be >= 1", cfg.line_of("ensemble"), "ensemble")
    seeds = [run.seed + j for j in range(n_runs)]
    threads = args.threads or cfg.get("threads", 1, int)
    trajs = run_ensemble(run, seeds, threads=threads, algorithm=algorithm)
    reports, verdicts, study, lines = run_checks(cfg, run, trajs)

    out = os.path.join(out_root, name)
    os.makedirs(out, exist_ok=True)
    for t in trajs:
        with open(os.path.join(out, f"trajectory_{t.seed}.csv"), "w", encoding="utf-8") as fh:
            fh.write(t.to_csv())
    payload = {
        "name": name,
        "verdicts": [v.to_dict() for v in verdicts],
        "checks": [
            {"name": r.name, "passed": bool(r.passed), "min_margin": _finite(r.min_margin), "checked": len(r.checked)}
            for r in reports
        ],
        "failures": [{"seed": t.seed, "failure": t.failure} for t in trajs if t.failure],
    }
    with open(os.path.join(out, "verdicts.json"), "w", encoding="utf-8") as fh:
        fh.write(json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n")
    with open(os.path.join(out, "curvature.csv"), "w", encoding="utf-8") as fh:
        fh.write(study.to_csv() if study is not None else "grad_norm,hess_norm\n")
    ok = all(r.passed for r in reports) and all(v.satisfied for v in verdicts) and not payload["failures"]
    header = [f"experiment: {name}", f"algorithm: {algorithm}, rule: {run.rule.name}, runs: {len(trajs)}"]
    if not lines:
        lines = ["INFO no checks requested"]
    lines.append(f"OVERALL {'PASS' if ok else 'FAIL'}")
    with open(os.path.join(out, "summary.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(header + lines) + "\n")
    print("\n".join(header + lines))
    return EXIT_OK if ok else EXIT_FAIL


def _finite(v):
    return None if v is None or (isinstance(v, float) and not math.isfinite(v)) else v


def _parse_floats(text, flag):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"{flag} expects comma-separated numbers") from None


def cmd_spectral(args):
    edges = None
    if args.edges:
        edges = [tuple(int(v) for v in pair.split("-")) for pair in args.edges.split(",")]
    m = mixing_from_preset(args.topology, args.n, edges)
    s = m.stats
    print(json.dumps({
        "topology": args.topology,
        "n": args.n,
        "rho": s.rho,
        "gap": s.spectral_gap,
        "eigenvalues": [float(e) for e in s.eigenvalues],
    }, indent=2))
    return EXIT_OK


def cmd_certify(args):
    dim = args.dim
    if args.objective == "quadratic":
        spectrum = _parse_floats(args.spectrum, "--spectrum") if args.spectrum else [1.0] * dim
        obj = Quadratic.diagonal(spectrum)
    elif args.objective == "exponential":
        obj = Exponential(_parse_floats(args.a, "--a") if args.a else [1.0] * dim)
    elif args.objective == "quartic":
        obj = Quartic(_parse_floats(args.c, "--c") if args.c else [1.0] * dim)
    else:
        obj = DoubleWell(dim)
    box = _parse_floats(args.box, "--box")
    if len(box) != 2:
        raise ConfigError("--box expects 'lo,hi'")
    cert = certify_smoothness(obj, args.L0, args.L1, box, args.grid, max_pairs=args.max_pairs)
    print(json.dumps({
        "objective": args.objective,
        "L0": cert.L0,
        "L1": cert.L1,
        "verified_radius": "inf" if math.isinf(cert.verified_radius) else cert.verified_radius,
        "grid_points": cert.grid_points,
        "pairs_checked": cert.pairs_checked,
        "max_violation": cert.max_violation,
        "passed": cert.passed,
    }, indent=2))
    return EXIT_OK if cert.passed else EXIT_FAIL


def make_parser():
    parser = _Parser(prog="relaxdgd", description="Decentralized (L0,L1)-smooth gradient descent simulator")
    parser.add_argument("--threads", type=int, default=0, help="worker threads for ensemble runs")
    parser.add_argument("--normalize", action="store_true", help="max-abs scale LIBSVM features")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("config")
    p_run.set_defaults(func=cmd_run)

    p_spec = sub.add_parser("spectral", help="spectral statistics of a topology preset")
    p_spec.add_argument("--topology", required=True, choices=PRESETS)
    p_spec.add_argument("--n", type=int, required=True)
    p_spec.add_argument("--edges", help="custom edges as 'i-j,k-l'")
    p_spec.set_defaults(func=cmd_spectral)

    p_cert = sub.add_parser("certify", help="brute-force (L0,L1) certificate on a grid")
    p_cert.add_argument("--objective", required=True, choices=[k for k in OBJECTIVE_KINDS if k != "logistic"])
    p_cert.add_argument("--L0", type=float, required=True)
    p_cert.add_argument("--L1", type=float, default=0.0)
    p_cert.add_argument("--box", default="-1,1")
    p_cert.add_argument("--grid", type=int, default=41)
    p_cert.add_argument("--dim", type=int, default=1)
    p_cert.add_argument("--spectrum")
    p_cert.add_argument("--a")
    p_cert.add_argument("--c")
    p_cert.add_argument("--max-pairs", type=int, default=10**6)
    p_cert.set_defaults(func=cmd_certify)
    return parser


def main(argv=None):
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (RelaxDGDError, ValueError, TypeError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
