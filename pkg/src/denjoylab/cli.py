"""Experiment driver.

    python -m denjoylab <conf|denjoy|blowup|distort|trap|demo-theorem>
                        [--config FILE] [--out DIR] [--seed N] [--plots]

Configs are INI files with one section per module; unknown sections or keys
are rejected.  Each run writes ``<id>.results.jsonl`` (one JSON record per
stage, byte-identical for identical config and seed), a human-readable
``<id>.summary.txt`` and, for trap pipelines, appends certificates to
``<id>.reports.jsonl``.  ``<id>`` is the experiment kind plus a prefix of the
config hash.  Exit status: 0 success, 1 invalid config, 2 pipeline failure.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import logging
import math
import os
import re
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .blowup import (
    FORMAT_VERSION,
    DistortionProfile,
    build_ball_system,
    default_direction,
    random_direction,
    synthetic_jacobian_field,
)
from .confspace import (
    act,
    beltrami,
    conf_dist,
    dilatation,
    dilatation_from_beltrami,
    dist_to_base,
    random_invertible,
    random_structure,
)
from .distortion import (
    constant_profile,
    fit_per_ball_constant,
    trace_cocycle_distortion,
    verify_lemma1_bound,
    volume_matched_profile,
    volume_sum,
)
from .dynamics import (
    denjoy_circle,
    interval_log_distortion,
    intervals_disjoint,
    rotation_vector,
    wandering_images,
)
from .errors import ConfigError, DenjoyLabError, NotFound
from .trap import (
    TrapParams,
    certify_trap,
    chain_lambda_prime,
    contradiction_report,
    minimality_evidence,
    semiconjugacy_residual,
)

log = logging.getLogger("denjoylab")

KINDS = ("conf", "denjoy", "blowup", "distort", "trap", "demo-theorem")
OUT_ENV = "DENJOYLAB_OUT"
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
_DEFAULT_THETA = (math.sqrt(2.0) - 1.0, math.sqrt(3.0) - 1.0, math.sqrt(5.0) - 2.0, math.sqrt(7.0) - 2.0)


# ---------------------------------------------------------------------------
# config


def _float(s):
    return float(s)


def _int(s):
    return int(s)


def _floats(s):
    return [float(t) for t in s.replace(",", " ").split()]


def _ints(s):
    return [int(t) for t in s.replace(",", " ").split()]


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _lam_prime(s):
    return "auto" if s.strip().lower() == "auto" else float(s)


# section -> key -> (parser, default, check, message)
SCHEMA = {
    "run": {
        "kind": (lambda s: "conf" if s.strip() == "conf-check" else s.strip(), None, lambda v: v in KINDS, f"kind must be one of {', '.join(KINDS)}"),
        "k": (_int, 2, lambda v: 2 <= v <= 4, "k must be 2, 3 or 4"),
        "seed": (_int, 0, lambda v: 0 <= v < 2**64, "seed must be an unsigned 64-bit integer"),
        "out": (str, "runs", lambda v: bool(v), "out must be a non-empty path"),
        "plots": (_bool, False, None, ""),
    },
    "confspace": {
        "samples": (_int, 1000, lambda v: v >= 1, "samples must be positive"),
        "dims": (_ints, [2, 3, 4], lambda v: v and all(d >= 2 for d in v), "dims must be integers >= 2"),
        "bridge_samples": (_int, 10000, lambda v: v >= 1, "bridge_samples must be positive"),
    },
    "denjoy": {
        "alpha": (_float, GOLDEN, lambda v: 0.0 < v < 1.0, "alpha must lie in (0, 1)"),
        "c": (_float, 0.1, lambda v: v > 0, "c must be positive"),
        "truncation": (_int, 20000, lambda v: v >= 1, "truncation must be positive"),
        "tail_tol": (_float, 1e-4, lambda v: v > 0, "tail_tol must be positive"),
        "iterations": (_int, 100000, lambda v: v >= 1, "iterations must be positive"),
        "power": (_float, 1.0, lambda v: v > 0.5, "power must exceed 1/2"),
    },
    "blowup": {
        "theta": (_floats, None, lambda v: all(0.0 <= t < 1.0 for t in v), "theta components must lie in [0, 1)"),
        "J": (_int, 2000, lambda v: v >= 0, "J must be non-negative"),
        "c_r": (_float, 0.05, lambda v: v > 0, "c_r must be positive"),
        "p": (_float, 0.8, lambda v: v >= 0, "p must be non-negative"),
        "v_max": (_float, 0.5, lambda v: v > 0, "v_max must be positive"),
    },
    "distortion": {
        "m": (_int, None, lambda v: v >= 1, "m must be a positive integer"),
        "eps0": (_float, 1.0, lambda v: v >= 0, "eps0 must be non-negative"),
        "M": (_float, 1.0, lambda v: v > 0, "M must be positive"),
        "delta": (_float, 0.05, lambda v: v > 0, "delta must be positive"),
        "horizon": (_int, 2000, lambda v: v >= 1, "horizon must be positive"),
        "direction": (str, "diag", lambda v: v in ("diag", "random"), "direction must be diag or random"),
        "fit_eps": (_float, 0.3, lambda v: v > 0, "fit_eps must be positive"),
        "fit_samples": (_int, 200, lambda v: v >= 100, "fit_samples must be at least 100"),
    },
    "trap": {
        "lambda": (_float, 2.0, lambda v: v > 1.0, "lambda must exceed 1"),
        "lambda_prime": (_lam_prime, "auto", lambda v: v == "auto" or v > 1.0, "lambda_prime must exceed 1 or be auto"),
        "horizon": (_int, 2000, lambda v: v >= 1, "horizon must be positive"),
        "samples": (_int, 10000, lambda v: v >= 8, "samples must be at least 8"),
        "margin": (_float, 0.0, lambda v: v >= 0, "margin must be non-negative"),
    },
}

# keys that never influence results and stay out of the config hash
_UNHASHED = {("run", "out"), ("run", "plots")}


@dataclass
class ExperimentConfig:
    values: dict
    source: str | None = None
    lines: dict = field(default_factory=dict)

    def __getitem__(self, key):
        section, name = key
        return self.values[section][name]

    @property
    def kind(self):
        return self.values["run"]["kind"]

    def canonical(self):
        return {s: {k: v for k, v in kv.items() if (s, k) not in _UNHASHED} for s, kv in self.values.items()}

    def digest(self):
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _line_index(text):
    """Map ``(section, key) -> line number`` for diagnostics."""
    where, section = {}, None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        m = re.match(r"\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip()
            where[(section, None)] = no
            continue
        m = re.match(r"([^=:#;\s][^=:]*?)\s*[=:]", line)
        if m and section is not None:
            where[(section, m.group(1).strip())] = no
    return where


def load_config(path=None, text=None, kind=None, overrides=None):
    """Parse and validate a config; missing keys take defaults.

    Raises :class:`ConfigError` naming the offending field and line.
    """
    if path is not None:
        text = Path(path).read_text()
    text = text or ""
    lines = _line_index(text)
    parser = configparser.ConfigParser(interpolation=None, strict=True)
    parser.optionxform = str
    try:
        parser.read_string(text, source=str(path) if path else "<config>")
    except configparser.Error as exc:
        raise ConfigError(f"unreadable config: {exc}", line=getattr(exc, "lineno", None)) from exc
    values = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]", line=lines.get((section, None)))
    for section, keys in SCHEMA.items():
        values[section] = {}
        given = parser[section] if parser.has_section(section) else {}
        for key in given:
            if key not in keys:
                raise ConfigError(f"unknown key in [{section}]", field=f"{section}.{key}", line=lines.get((section, key)))
        for key, (conv, default, check, message) in keys.items():
            if key in given:
                try:
                    v = conv(given[key])
                except ValueError as exc:
                    raise ConfigError(str(exc), field=f"{section}.{key}", line=lines.get((section, key))) from exc
                if check is not None and not check(v):
                    raise ConfigError(message, field=f"{section}.{key}", line=lines.get((section, key)))
            else:
                v = default
            values[section][key] = v
    for (section, key), v in (overrides or {}).items():
        conv, default, check, message = SCHEMA[section][key]
        if check is not None and not check(v):
            raise ConfigError(message, field=f"{section}.{key}")
        values[section][key] = v
    run = values["run"]
    if kind is not None:
        if run["kind"] is not None and run["kind"] != kind:
            raise ConfigError(f"config is for {run['kind']!r}, not {kind!r}", field="run.kind", line=lines.get(("run", "kind")))
        run["kind"] = kind
    if run["kind"] is None:
        raise ConfigError("experiment kind not given", field="run.kind")
    k = run["k"]
    b = values["blowup"]
    if b["theta"] is None:
        b["theta"] = list(_DEFAULT_THETA[:k])
    elif len(b["theta"]) != k:
        raise ConfigError(f"theta has {len(b['theta'])} components but k = {k}", field="blowup.theta", line=lines.get(("blowup", "theta")))
    if values["distortion"]["m"] is None:
        values["distortion"]["m"] = k
    uses_trap = run["kind"] in ("trap", "demo-theorem")
    uses_distortion = run["kind"] in ("distort", "demo-theorem")
    if uses_trap and values["trap"]["horizon"] > b["J"]:
        raise ConfigError("trap horizon exceeds the ball window J", field="trap.horizon", line=lines.get(("trap", "horizon")))
    if uses_distortion and values["distortion"]["horizon"] > b["J"]:
        raise ConfigError("distortion horizon exceeds the ball window J", field="distortion.horizon", line=lines.get(("distortion", "horizon")))
    return ExperimentConfig(values=values, source=str(path) if path else None, lines=lines)


# ---------------------------------------------------------------------------
# pipelines


class Run:
    """Collects stage records, summary lines and auxiliary artifacts for one experiment."""

    def __init__(self, config, outdir, plots=False):
        self.config = config
        self.outdir = Path(outdir)
        self.plots = plots
        self.digest = config.digest()
        self.id = f"{config.kind}-{self.digest[:12]}"
        self.records = []
        self.summary = []
        self.ok = True
        self.rng = np.random.default_rng(config["run", "seed"])

    def path(self, suffix):
        return self.outdir / f"{self.id}.{suffix}"

    def stage(self, name, passed=None, **data):
        rec = {"stage": name, **data}
        if passed is not None:
            rec["passed"] = bool(passed)
            self.ok = self.ok and bool(passed)
        self.records.append(_jsonable(rec))
        return rec

    def say(self, line):
        self.summary.append(line)
        log.info(line)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def run_conf(run):
    cfg = run.config
    n = cfg["confspace", "samples"]
    rng = run.rng
    for k in cfg["confspace", "dims"]:
        sym, tri, inv = 0.0, math.inf, 0.0
        for _ in range(n):
            P, Q, R = (random_structure(k, rng) for _ in range(3))
            A = random_invertible(k, rng)
            dPQ, dQP = conf_dist(P, Q), conf_dist(Q, P)
            sym = max(sym, abs(dPQ - dQP))
            tri = min(tri, conf_dist(P, Q) + conf_dist(Q, R) - conf_dist(P, R))
            inv = max(inv, abs(conf_dist(act(A, P), act(A, Q)) - dPQ))
        ok = sym <= 1e-10 and tri >= -1e-9 and inv <= 1e-8
        run.stage("metric", passed=ok, k=k, samples=n, symmetry=sym, triangle_slack=tri, invariance=inv)
        run.say(f"k={k}: symmetry {sym:.2e}, triangle slack {tri:.3e}, act invariance {inv:.2e} -> {'ok' if ok else 'FAIL'}")
    m = cfg["confspace", "bridge_samples"]
    e_mu, e_dist = 0.0, 0.0
    for _ in range(m):
        A = random_invertible(2, rng, positive=True)
        dil = dilatation(A)
        e_mu = max(e_mu, abs(dil - dilatation_from_beltrami(beltrami(A))))
        e_dist = max(e_dist, abs(dist_to_base(A) - math.sqrt(2.0) * math.log(dil)))
    ok = e_mu <= 1e-9 and e_dist <= 1e-9
    run.stage("bridge", passed=ok, samples=m, beltrami_error=e_mu, sqrt2_log_dil_error=e_dist)
    run.say(f"2D bridge over {m} maps: |dil - (1+|mu|)/(1-|mu|)| <= {e_mu:.2e}, |d - sqrt2 log dil| <= {e_dist:.2e}")


def run_denjoy(run):
    cfg = run.config
    d = cfg.values["denjoy"]
    f = denjoy_circle(d["alpha"], d["c"], d["truncation"], d["tail_tol"], d["power"])
    est = rotation_vector(f, np.array([0.0]), d["iterations"])
    err = abs(float(est.value[0]) - d["alpha"])
    err = min(err, 1.0 - err)
    run.stage(
        "denjoy_map",
        description=f.description,
        total_length=f.total_length,
        inserted_length=f.inserted,
        tail_bound=f.tail,
    )
    run.stage("rotation_number", passed=err <= 1e-4, estimate=float(est.value[0]), error=err, error_bar=est.error_bar, n=d["iterations"])
    horizon = min(100, f.N - 1)
    disjoint = intervals_disjoint(wandering_images(f, horizon))
    run.stage("wandering", passed=disjoint, images=horizon + 1)
    ns = [n for n in (10, 100, 1000) if n < f.N]
    growth = interval_log_distortion(f, ns)
    measured = {n: growth[n][0] for n in ns}
    oracle = {n: math.log(f.lengths[f.N] / f.lengths[f.N + n]) for n in ns}
    c0 = max(1.8 * math.log(n) - measured[n] for n in ns)
    ok = all(measured[n] >= oracle[n] - 1e-9 for n in ns)
    run.stage("log_derivative_growth", passed=ok, measured=measured, mean_value_floor=oracle, fitted_C0=c0)
    run.say(f"{f.description}")
    run.say(f"rotation number estimate {float(est.value[0]):.10f} (error {err:.2e}); total inserted length {f.total_length:.7f}")
    run.say(f"I_0 images disjoint up to n={horizon}: {disjoint}; max|log Df^n| = {measured}, C0 = {c0:.3f}")
    if run.plots:
        from .plots import plot_log_derivative

        plot_log_derivative(run.path("logdf.svg"), measured, oracle)


def _system(run):
    b = run.config.values["blowup"]
    S = build_ball_system(b["theta"], b["J"], b["c_r"], b["p"], b["v_max"])
    return S


def run_blowup(run, S=None):
    S = _system(run) if S is None else S
    S.dump(run.path("ballsystem.jsonl"))
    vol = volume_sum(S)
    semi = semiconjugacy_residual(S, samples=1000, rng=run.rng)
    run.stage(
        "ball_system",
        passed=S.is_disjoint() and vol <= S.budget + 1e-12,
        k=S.k,
        theta=S.theta,
        J=S.J,
        balls=len(S.radii),
        shrinks=S.metadata["shrinks"],
        disjointness_margin=S.metadata["disjointness_margin"],
        volume=vol,
        budget=S.budget,
        r0=S.radius(0),
        format_version=FORMAT_VERSION,
    )
    run.stage("collapse", passed=semi <= 1e-10, semiconjugacy_residual=semi, samples=1000)
    run.say(f"{len(S.radii)} balls, {S.metadata['shrinks']} repairs, total volume {vol:.6g} <= {S.budget}")
    run.say(f"collapse semiconjugacy residual {semi:.2e}")
    if run.plots:
        from .plots import plot_ball_system

        plot_ball_system(run.path("balls.svg"), S)
    return S


def _direction(run, k):
    if run.config["distortion", "direction"] == "random":
        return random_direction(k, run.rng)
    return default_direction(k)


def run_distort(run, S=None):
    cfg = run.config.values["distortion"]
    S = _system(run) if S is None else S
    N = _direction(run, S.k)
    n = cfg["horizon"]
    field_ok = synthetic_jacobian_field(S, volume_matched_profile(S, cfg["eps0"], cfg["m"], N))
    tr = trace_cocycle_distortion(field_ok, S, S.center(0), n)
    tr.write_csv(run.path("trace.csv"))
    rep = verify_lemma1_bound(tr, cfg["M"])
    bound = rep.as_dict()
    bound["bound_holds"] = bound.pop("passed")
    run.stage("distortion_bound", passed=rep.passed and tr.telescoping_ok(), n=n, telescoping=tr.telescoping_ok(), **bound)
    contrast = synthetic_jacobian_field(S, constant_profile(S, cfg["delta"], cfg["m"], N))
    tc = trace_cocycle_distortion(contrast, S, S.center(0), n)
    crep = verify_lemma1_bound(tc, cfg["M"], strict=False)
    contrast_rec = crep.as_dict()
    contrast_rec["bound_holds"] = contrast_rec.pop("passed")
    linear = bool(np.all(tc.direct[99:] >= 0.9 * cfg["delta"] * np.arange(100, n + 1))) if n >= 100 else None
    run.stage("distortion_contrast", delta=cfg["delta"], linear_growth=linear, D_final=float(tc.direct[-1]), **contrast_rec)
    prof = DistortionProfile.constant(S, cfg["m"], cfg["fit_eps"], N)
    fit = fit_per_ball_constant(synthetic_jacobian_field(S, prof), S, 0, cfg["fit_samples"], run.rng)
    closed = 2.0 * cfg["fit_eps"] / S.radius(0) ** S.k
    fit_ok = cfg["m"] != S.k or (abs(fit.slope - S.k) <= 0.1 and abs(fit.constant / closed - 1.0) <= 0.01)
    run.stage("flatness_fit", passed=fit_ok, m=cfg["m"], slope=fit.slope, C=fit.constant, closed_form_C=closed)
    run.say(f"volume-weighted trace: sup D_n = {rep.sup_direct:.6g} vs M*sum vol = {rep.bound:.6g} -> {'pass' if rep.passed else 'FAIL'}")
    run.say(f"contrast delta={cfg['delta']}: D_{n} = {tc.direct[-1]:.4g}, bound {'holds' if crep.passed else 'fails'} (first crossing at n={crep.crossing_step})")
    run.say(f"flatness fit on B_0: slope {fit.slope:.4f}, C {fit.constant:.6g} (closed form {closed:.6g})")
    if run.plots:
        from .plots import plot_distortion, plot_flatness

        plot_distortion(run.path("distortion.svg"), tr, tc, rep.bound)
        plot_flatness(run.path("flatness.svg"), fit)
    return rep


def run_trap(run, S=None):
    cfg = run.config.values["trap"]
    S = _system(run) if S is None else S
    lam = cfg["lambda"]
    if cfg["lambda_prime"] == "auto":
        lp = chain_lambda_prime(S, lam, cfg["horizon"])
        lam_prime = lp.value
        run.stage("lambda_prime", raw=lp.raw, value=lp.value, samples=lp.samples)
    else:
        lam_prime = cfg["lambda_prime"]
    params = TrapParams(
        lam=lam,
        lam_prime=lam_prime,
        horizon=cfg["horizon"],
        boundary_samples=cfg["samples"],
        margin=cfg["margin"],
        seed=run.config["run", "seed"],
    )
    try:
        cert = certify_trap(S, params)
    except NotFound as exc:
        miss = exc.near_miss
        run.stage("trap", passed=False, found=False, near_miss=None if miss is None else miss.__dict__)
        run.say(f"no trap time within horizon {params.horizon}")
        raise
    cert.append_to(run.path("reports.jsonl"))
    run.stage("trap", passed=cert.valid, found=True, **cert.as_record())
    run.say(
        f"trap time n={cert.n}: alpha_n={cert.alpha_n:.4g} < {cert.threshold1:.4g}, "
        f"|x_n - x_0|={cert.displacement:.4g} < {cert.threshold2:.4g}; inclusion margin {cert.inclusion_worst_margin:.4g}"
    )
    if run.plots:
        from .plots import plot_trap

        plot_trap(run.path("trap.svg"), S, cert)
    return S, params, cert


def run_demo(run):
    S = run_blowup(run)
    bound = run_distort(run, S)
    S, params, cert = run_trap(run, S)
    ev = minimality_evidence(S.theta, params.horizon)
    report = contradiction_report(S, params, cert, ev)
    with open(run.path("reports.jsonl"), "a") as fh:
        fh.write(json.dumps(_jsonable(report.as_record()), sort_keys=True) + "\n")
    run.stage("contradiction", passed=report.contradiction and bound.passed, distortion_bound_passed=bound.passed, **report.as_record())
    run.say(report.conclusion)


PIPELINES = {
    "conf": run_conf,
    "denjoy": run_denjoy,
    "blowup": run_blowup,
    "distort": run_distort,
    "trap": run_trap,
    "demo-theorem": run_demo,
}


def _versions():
    mods = ("confspace", "dynamics", "blowup", "distortion", "trap", "cli")
    return {"denjoylab": __version__, **{m: __version__ for m in mods}, "numpy": np.__version__, "scipy": scipy.__version__}


def execute(config, outdir, plots=False):
    """Run one experiment; returns ``(exit_code, Run)``."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    run = Run(config, outdir, plots)
    run.stage("header", kind=config.kind, id=run.id, config_hash=run.digest, config=config.canonical(), versions=_versions())
    started = time.perf_counter()
    code = 0
    try:
        PIPELINES[config.kind](run)
    except DenjoyLabError as exc:
        run.stage("error", passed=False, error=type(exc).__name__, message=str(exc))
        run.say(f"pipeline error: {type(exc).__name__}: {exc}")
        code = 2
    if code == 0 and not run.ok:
        code = 2
    run.stage("footer", exit_code=code)
    with open(run.path("results.jsonl"), "w") as fh:
        for rec in run.records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    header = [f"experiment {run.id} ({config.kind})", f"config hash {run.digest}", f"versions {_versions()}"]
    footer = [f"exit code {code}", f"wall time {time.perf_counter() - started:.2f} s"]
    run.path("summary.txt").write_text("\n".join(header + [""] + run.summary + [""] + footer) + "\n")
    return code, run


def build_parser():
    ap = argparse.ArgumentParser(prog="denjoylab", description=__doc__.split("\n\n")[0])
    ap.add_argument("kind", choices=KINDS)
    ap.add_argument("--config", type=Path, help="INI config file")
    ap.add_argument("--out", type=Path, help=f"output directory (overrides ${OUT_ENV} and [run] out)")
    ap.add_argument("--seed", type=int, help="RNG seed (overrides [run] seed)")
    ap.add_argument("--plots", action="store_true", help="write SVG plots")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    overrides = {}
    if args.seed is not None:
        overrides[("run", "seed")] = args.seed
    try:
        config = load_config(args.config, kind=args.kind, overrides=overrides)
    except (ConfigError, OSError) as exc:
        print(f"ConfigError: {exc}", file=sys.stderr)
        return 1
    outdir = args.out or os.environ.get(OUT_ENV) or config["run", "out"]
    code, run = execute(config, outdir, plots=args.plots or config["run", "plots"])
    print(f"{run.id}: exit {code}; results in {run.path('results.jsonl')}")
    return code


if __name__ == "__main__":
    sys.exit(main())
