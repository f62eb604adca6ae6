"""Command-line experiments: density evolution, coupling thresholds, Monte Carlo runs, checks.

Each run writes a directory under the output root (``--out``, else
``$LIFTEDMAC_OUTPUT_ROOT``, else ``./runs``) holding ``manifest.json`` and the
result files. Option precedence: built-in defaults, then the JSON file given
with ``--config`` (top-level keys or a section named after the command), then
flags on the command line.

Exit codes: 0 success, 2 usage error, 3 a verification check failed,
4 a result was censored or did not converge.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
from scipy import stats

from . import __version__, bounds, density, gkernel, sphere
from .config import CouplingSpec, SystemConfig
from .coupled import coupling_threshold
from .demod import demodulate
from .errors import DomainError
from .graph import generate_frame

EXIT_OK, EXIT_USAGE, EXIT_CHECK, EXIT_CENSORED = 0, 2, 3, 4
ENV_OUTPUT_ROOT = "LIFTEDMAC_OUTPUT_ROOT"


class UsageError(Exception):
    pass


def parse_grid(text: str) -> list[float]:
    """``start:step:stop`` (inclusive) or a comma list of numbers."""
    text = str(text).strip()
    try:
        if ":" in text:
            parts = [float(p) for p in text.split(":")]
            if len(parts) != 3 or parts[1] <= 0 or parts[2] < parts[0]:
                raise ValueError
            n = int(math.floor((parts[2] - parts[0]) / parts[1] + 1e-9)) + 1
            return [round(parts[0] + i * parts[1], 12) for i in range(n)]
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise UsageError(f"malformed grid {text!r}; use start:step:stop or a comma list") from None


def parse_ints(text: str) -> list[int]:
    vals = parse_grid(text)
    if any(v != int(v) for v in vals):
        raise UsageError(f"expected integers in {text!r}")
    return [int(v) for v in vals]


def _map(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# --- de ---------------------------------------------------------------------------------

def _de_rows(item):
    alpha, snrs, m = item
    pts = density.ber_curve(alpha, snrs, m)
    return [p.as_row(alpha) for p in pts]


def cmd_de(args) -> tuple[int, dict, list[dict]]:
    alphas = parse_grid(args.alpha)
    snrs = parse_grid(args.snr)
    m = args.m
    chunks = _map(_de_rows, [(a, snrs, m) for a in alphas], args.jobs)
    rows = [r for ch in chunks for r in ch]
    rows.sort(key=lambda r: (r["alpha"], r["snr_db"]))
    summary = {"landmarks": {}, "gap_db": {}, "multi_solution_points": []}
    cp = density.cusp(m)
    summary["landmarks"] = {
        "critical_noise": cp.noise_var, "spinodal_load": cp.alpha,
        "max_single_solution_load": density.max_single_solution_load(density.SIGMA2_ZERO, m),
    }
    for a in alphas:
        if a <= 0:
            continue
        try:
            summary["gap_db"][str(a)] = density.snr_gap_db(a, args.target_pb, m)
        except ValueError:
            summary["gap_db"][str(a)] = None
    summary["multi_solution_points"] = [
        {"alpha": r["alpha"], "snr_db": r["snr_db"], "multiplicity": r["multiplicity"]}
        for r in rows if r["multiplicity"] > 1
    ]
    return EXIT_OK, summary, rows


# --- threshold --------------------------------------------------------------------------

def _threshold_one(item):
    kind, param, noise_var, T, max_iter, tol, printed = item
    coupling = CouplingSpec("window", W=int(param)) if kind == "window" else CouplingSpec("simple", a=param)
    lo, hi = (1.0, 8.0) if kind == "window" else (1.5, 4.5)
    res = coupling_threshold(coupling, noise_var, T, max_iter, tol, lo, hi, printed)
    return res.to_dict()


def cmd_threshold(args) -> tuple[int, dict, list[dict]]:
    items = []
    if args.window:
        items += [("window", float(w), args.noise_var, args.chain_length, args.max_iter, args.alpha_tol, False)
                  for w in parse_ints(args.window)]
    if args.simple_a:
        items += [("simple", a, args.noise_var, args.chain_length, args.max_iter, args.alpha_tol, args.printed)
                  for a in parse_grid(args.simple_a)]
    if not items:
        raise UsageError("give --window and/or --simple-a")
    rows = _map(_threshold_one, items, args.jobs)
    rows.sort(key=lambda r: (r["kind"], r["parameter"]))
    summary = {
        "uncoupled_max_load": density.max_single_solution_load(density.SIGMA2_ZERO),
        "censored": [r for r in rows if r["censored"]],
    }
    if summary["censored"]:
        print("warning: censored threshold results (bracket or chain too small)", file=sys.stderr)
    return (EXIT_CENSORED if summary["censored"] else EXIT_OK), summary, rows


# --- simulate ---------------------------------------------------------------------------

def _sim_cfg(args) -> SystemConfig:
    noise = args.noise_var if args.noise_var is not None else density.snr_to_noise(args.snr)
    if args.window is not None:
        T = args.chain_length or max(20, 4 * (2 * args.window + 1))
        coupling = CouplingSpec("window", W=args.window, chain_length=T,
                                anchored_prefix=args.anchored if args.anchored is not None else args.window)
    else:
        coupling = CouplingSpec()
    return SystemConfig(args.k, args.n, args.m, args.l, noise, coupling)


def _sim_trial(item):
    cfg_dict, seed, iterations, mode, orthogonal = item
    cfg = SystemConfig.from_dict(cfg_dict)
    topo, frame = generate_frame(cfg, seed, orthogonal)
    rep = demodulate(frame, topo, cfg, iterations, mode)
    return {"seed": seed, "bit_errors": rep.bit_error_count, "bits": rep.scored_bits,
            "ber": rep.ber, "final_sir": rep.per_iteration_sir[-1]}


def predicted_ber(cfg: SystemConfig) -> float | None:
    if cfg.coupling.kind != "none":
        return None
    tr = density.de_trajectory(cfg.alpha, cfg.noise_var, cfg.M if cfg.M > 1 else None,
                               alpha_eff=cfg.finite_load)
    return float(gkernel.q_function(1.0 / math.sqrt(tr.fixed_point))) if tr.fixed_point > 0 else 0.0


def cmd_simulate(args) -> tuple[int, dict, list[dict]]:
    cfg = _sim_cfg(args)
    items = [(cfg.to_dict(), args.seed + i, args.iterations, args.variance_mode, args.orthogonal)
             for i in range(args.trials)]
    t0 = time.monotonic()
    rows: list[dict] = []
    batch = max(1, args.jobs) * 4
    partial = False
    for start in range(0, len(items), batch):
        if args.time_budget is not None and time.monotonic() - t0 > args.time_budget:
            partial = True
            break
        rows += _map(_sim_trial, items[start:start + batch], args.jobs)
    errs = sum(r["bit_errors"] for r in rows)
    n = sum(r["bits"] for r in rows)
    ci = stats.binomtest(errs, n).proportion_ci(0.997, method="wilson") if n else None
    pred = predicted_ber(cfg)
    summary = {
        "config": cfg.to_dict(), "trials_run": len(rows), "trials_requested": args.trials,
        "partial": partial, "bit_errors": errs, "bits": n, "ber": errs / n if n else None,
        "ci_997": [ci.low, ci.high] if ci else None, "predicted_ber": pred,
        "within_ci": (ci.low <= pred <= ci.high) if (ci and pred is not None) else None,
    }
    return (EXIT_CENSORED if partial else EXIT_OK), summary, rows


# --- verify -----------------------------------------------------------------------------

def _check_sphere(n: int, k: int, samples: int, seed: int) -> list[dict]:
    rng = np.random.default_rng(seed)
    out = []
    pp = sphere.pair_projection_samples(n, samples, rng)
    se = pp.std(ddof=1) / math.sqrt(samples)
    out.append({"check": "pair_projection_mean", "value": float(pp.mean()), "target": 1.0 / n,
                "ok": bool(abs(pp.mean() - 1.0 / n) <= 4 * se)})
    sp = sphere.subspace_projection_samples(n, k, samples, rng)
    se = sp.std(ddof=1) / math.sqrt(samples)
    out.append({"check": "subspace_projection_mean", "value": float(sp.mean()), "target": k / n,
                "ok": bool(abs(sp.mean() - k / n) <= 4 * se)})
    m2 = sphere.angle_moment(n, k, 2)
    out.append({"check": "angle_density_cos2", "value": m2, "target": k / n, "ok": bool(abs(m2 - k / n) <= 1e-8)})
    tot = sphere.angle_moment(n, k, 0)
    out.append({"check": "angle_density_mass", "value": tot, "target": 1.0, "ok": bool(abs(tot - 1.0) <= 1e-8)})
    return out


def _check_gkernel() -> list[dict]:
    grid = np.concatenate([[0.0], np.geomspace(1e-4, 600.0, 199)])
    vals = np.array([gkernel.g(s) for s in grid])
    out = [{"check": "g_at_zero", "value": vals[0], "target": 1.0, "ok": bool(vals[0] == 1.0)}]
    out.append({"check": "g_decreasing", "ok": bool(np.all(np.diff(vals) < 0))})
    rel = max(abs(gkernel.g(s) - gkernel.g_reference(s)) / gkernel.g_reference(s) for s in grid[1:])
    out.append({"check": "quadrature_vs_adaptive", "value": rel, "target": 1e-10, "ok": bool(rel <= 1e-10)})
    ok_q = all(math.log(v) <= gkernel.log_pi_q_bound(s) for s, v in zip(grid, vals))
    ok_e = all(math.log(v) <= gkernel.log_g_upper(s) for s, v in zip(grid, vals))
    out.append({"check": "below_pi_q", "ok": bool(ok_q)})
    out.append({"check": "below_exp_half", "ok": bool(ok_e)})
    return out


def cmd_verify(args) -> tuple[int, dict, list[dict]]:
    rows: list[dict] = []
    suites = set(args.appendix or [])
    if args.gkernel:
        suites.add("g")
    if not suites:
        suites = {"a", "b", "g"}
    if "b" in suites:
        rows += [dict(r, suite="sphere") for r in _check_sphere(args.n, args.k, args.samples, args.seed)]
    if "g" in suites:
        rows += [dict(r, suite="gkernel") for r in _check_gkernel()]
    if "a" in suites:
        for a in parse_grid(args.alpha):
            try:
                rep = bounds.check_lemma1(a, bounds.min_window(a))
            except DomainError as exc:
                rows.append({"suite": "bounds", "alpha": a, "check": "min_window", "ok": False,
                             "message": str(exc)})
                continue
            for c in rep.checks:
                rows.append({"suite": "bounds", "alpha": a, "log_w": rep.log_w, **c.to_dict(),
                             "check": c.name, "ok": c.holds})
    failed = [r for r in rows if not r["ok"]]
    summary = {"checks": len(rows), "failed": len(failed), "failures": failed}
    return (EXIT_CHECK if failed else EXIT_OK), summary, rows


# --- plumbing ---------------------------------------------------------------------------

COMMANDS = {"de": cmd_de, "threshold": cmd_threshold, "simulate": cmd_simulate, "verify": cmd_verify}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output root directory")
    common.add_argument("--run-name", help="run directory name (default: command plus config hash)")
    common.add_argument("--config", help="JSON file with option defaults")
    common.add_argument("--jobs", type=int, default=1, help="worker processes")
    common.add_argument("--seed", type=int, default=0)

    p = argparse.ArgumentParser(prog="liftedmac", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    de = sub.add_parser("de", parents=[common], help="BER curves and fixed-point multiplicity")
    de.add_argument("--alpha", default="1")
    de.add_argument("--snr", default="0:0.5:12", help="SNR grid in dB")
    de.add_argument("--m", type=int, default=None, help="partition degree (default: infinite)")
    de.add_argument("--target-pb", type=float, default=1e-2)

    th = sub.add_parser("threshold", parents=[common], help="coupling thresholds")
    th.add_argument("--window", help="window half-widths W, e.g. 0,1,2")
    th.add_argument("--simple-a", help="simple-coupling fractions a")
    th.add_argument("--noise-var", type=float, default=0.0)
    th.add_argument("--chain-length", type=int, default=None)
    th.add_argument("--max-iter", type=int, default=10_000)
    th.add_argument("--alpha-tol", type=float, default=0.01)
    th.add_argument("--printed", action="store_true", help="use the non-conserving prefactors for simple coupling")

    si = sub.add_parser("simulate", parents=[common], help="Monte Carlo demodulation")
    si.add_argument("--k", type=int, default=32)
    si.add_argument("--n", type=int, default=32)
    si.add_argument("--m", type=int, default=8)
    si.add_argument("--l", type=int, default=64)
    si.add_argument("--snr", type=float, default=10.0, help="dB, sets noise variance 10^(-snr/10)")
    si.add_argument("--noise-var", type=float, default=None)
    si.add_argument("--trials", type=int, default=20)
    si.add_argument("--iterations", type=int, default=50)
    si.add_argument("--variance-mode", choices=("analytic", "empirical"), default="analytic")
    si.add_argument("--orthogonal", action="store_true")
    si.add_argument("--window", type=int, default=None, help="couple with window half-width W")
    si.add_argument("--chain-length", type=int, default=None)
    si.add_argument("--anchored", type=int, default=None)
    si.add_argument("--time-budget", type=float, default=None, help="seconds; stop early with partial results")

    ve = sub.add_parser("verify", parents=[common], help="geometry, kernel and bound checks")
    ve.add_argument("--appendix", action="append", choices=("a", "b"))
    ve.add_argument("--gkernel", action="store_true")
    ve.add_argument("--alpha", default="2.5,3,4,5")
    ve.add_argument("--n", type=int, default=64)
    ve.add_argument("--k", type=int, default=8)
    ve.add_argument("--samples", type=int, default=100_000)
    return p


def _load_config_defaults(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    try:
        data = json.loads(Path(known.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        parser.error(f"cannot read config file: {exc}")
    command = next((a for a in argv if a in COMMANDS), None)
    flat = {k.replace("-", "_"): v for k, v in data.items() if not isinstance(v, dict)}
    if command and isinstance(data.get(command), dict):
        flat.update({k.replace("-", "_"): v for k, v in data[command].items()})
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    if command:
        sub.choices[command].set_defaults(**flat)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _write_csv(path: Path, rows: list[dict]) -> None:
    keys: list[str] = []
    for r in rows:
        for k, v in r.items():
            if k not in keys and not isinstance(v, (dict, list)):
                keys.append(k)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _jsonable(r.get(k)) for k in keys})


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    _load_config_defaults(parser, argv)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    options = {k: v for k, v in vars(args).items() if k not in ("out", "run_name", "config", "jobs")}
    key = hashlib.sha256(json.dumps(options, sort_keys=True, default=str).encode()).hexdigest()[:10]
    root = Path(args.out or os.environ.get(ENV_OUTPUT_ROOT) or "runs")
    run_dir = root / (args.run_name or f"{args.command}-{key}")
    t0 = time.time()
    try:
        code, summary, rows = COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"liftedmac {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    run_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(run_dir / "results.csv", rows)
    payload = {"schema": f"liftedmac.{args.command}/1", "summary": summary, "rows": rows}
    (run_dir / "results.json").write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")
    manifest = {
        "command": args.command, "options": options, "seed": args.seed, "version": __version__,
        "wall_time_s": time.time() - t0, "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(t0)),
        "exit_code": code, "config_file": args.config,
    }
    (run_dir / "manifest.json").write_text(json.dumps(_jsonable(manifest), indent=2, sort_keys=True) + "\n")
    print(json.dumps(_jsonable({"run_dir": str(run_dir), "exit_code": code, "summary": summary}), indent=2)[:4000])
    return code


if __name__ == "__main__":
    sys.exit(main())
