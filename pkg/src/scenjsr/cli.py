"""Command-line surface: certify observation files, run the consensus demo
sweep, tabulate the guarantee tail, solve instance files, and Monte Carlo
validate against a white-box system.

Exit codes are a stable contract: 0 success, 2 certificate with an
undefined bound, 3 uncertain feasibility, 4 usage or precondition error,
5 invalid sweep configuration, 1 any other failure.  Every command writes
a run manifest next to its artifacts; timestamps live only there, so all
other outputs are byte-for-byte reproducible from (flags, seed).
"""

import argparse
import datetime
import json
import logging
import os
import sys as _sys

import numpy as np

from . import __version__, consensus, qlp, scenario
from .blackbox import (SampleSet, read_observations, read_system,
                       write_observations)
from .certifier import (CertConfig, CertStatus, certificate_to_json, certify,
                        validate_certificate_montecarlo)
from .consensus import NetworkConfig, SweepConfigError, consensus_sweep, rows_to_csv
from .rng import Rng
from .blackbox import observe

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_BOUND_UNDEFINED = 2
EXIT_UNCERTAIN = 3
EXIT_USAGE = 4
EXIT_SWEEP_CONFIG = 5

_STATUS_EXIT = {
    CertStatus.CERTIFIED: EXIT_OK,
    CertStatus.BOUND_UNDEFINED: EXIT_BOUND_UNDEFINED,
    CertStatus.FEASIBILITY_UNCERTAIN: EXIT_UNCERTAIN,
}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for BoundUndefined
    # here, so route usage problems to the dedicated code instead.
    def error(self, message):
        raise _UsageError(message)


def thread_cap() -> int:
    """Parallelism cap from SCENARIO_JSR_THREADS; unset means sequential,
    0 means one worker per CPU."""
    raw = os.environ.get("SCENARIO_JSR_THREADS")
    if raw is None:
        return 1
    cap = int(raw)
    if cap == 0:
        return os.cpu_count() or 1
    if cap < 0:
        raise _UsageError(f"SCENARIO_JSR_THREADS must be >= 0, got {cap}")
    return cap


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _write_manifest(path: str, command: str, config: dict, seed,
                    started: str) -> None:
    doc = {
        "command": command,
        "config": config,
        "seed": seed,
        "version": __version__,
        "started_at": started,
        "finished_at": _now(),
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)


def _echo_flags(args, names) -> dict:
    return {name: getattr(args, name) for name in names}


# ---------------------------------------------------------------------------
# certify
# ---------------------------------------------------------------------------


def cmd_certify(args) -> int:
    started = _now()
    if not args.assume_no_barabanov:
        _sys.stderr.write(
            "refusing to certify: the guarantee needs the hidden modes to "
            "admit no invariant quadratic form, which cannot be checked from "
            "observations; pass --assume-no-barabanov to assert it.\n")
        return EXIT_USAGE

    if (args.obs is None) == (args.simulate is None):
        raise _UsageError("exactly one of --obs or --simulate is required")
    seed = args.seed
    if args.obs is not None:
        samples = read_observations(args.obs)
    else:
        if args.samples is None:
            raise _UsageError("--simulate requires --samples")
        system = read_system(args.simulate)
        rng = Rng(seed).derive(0)
        samples = SampleSet.from_observations(
            observe(system, rng) for _ in range(args.samples))

    if args.modes is None:
        if args.simulate is None:
            raise _UsageError("--obs requires --modes (the known mode count)")
        args.modes = system.m

    n = samples.n
    d = n * (n + 1) // 2
    if len(samples) < d:
        _sys.stderr.write(
            f"need at least N >= d = n(n+1)/2 = {d} observations for a "
            f"guarantee at n={n}; got N={len(samples)}.\n")
        return EXIT_USAGE

    cfg = CertConfig(num_modes=args.modes, beta=args.beta, cap_c=args.cap_c)
    cert = certify(samples, cfg, seed=seed)
    with open(args.out, "w") as f:
        f.write(certificate_to_json(cert) + "\n")
    _write_manifest(
        args.out + ".manifest.json", "certify",
        _echo_flags(args, ["obs", "simulate", "samples", "modes", "beta",
                           "cap_c", "out"]),
        seed, started)
    print(f"{cert.status.value}: gamma_star={cert.gamma_star:.6g} "
          f"bound={cert.bound_refined} -> {args.out}")
    return _STATUS_EXIT[cert.status]


# ---------------------------------------------------------------------------
# consensus demo
# ---------------------------------------------------------------------------


def _svg_line_chart(rows, title: str) -> str:
    """Minimal two-series line chart with a dashed white-box reference."""
    width, height = 640, 420
    ml, mr, mt, mb = 70, 20, 40, 50
    pw, ph = width - ml - mr, height - mt - mb

    xs = [r.n_samples for r in rows]
    ys = [v for r in rows for v in (r.bound1, r.bound2) if v is not None]
    ref = rows[0].whitebox_upper if rows else None
    if ref is not None:
        ys.append(ref)
    if not ys:
        ys = [0.0, 1.0]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    if x_hi == x_lo:
        x_hi = x_lo + 1
    pad = 0.05 * (y_hi - y_lo or 1.0)
    y_lo, y_hi = y_lo - pad, y_hi + pad

    def sx(v):
        return ml + pw * (v - x_lo) / (x_hi - x_lo)

    def sy(v):
        return mt + ph * (1.0 - (v - y_lo) / (y_hi - y_lo))

    def poly(points, color, dash=""):
        pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in points)
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        return (f'<polyline fill="none" stroke="{color}" stroke-width="2"'
                f'{extra} points="{pts}"/>')

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.0f}" y="24" text-anchor="middle" '
        f'font-family="sans-serif" font-size="15">{title}</text>',
        f'<line x1="{ml}" y1="{mt + ph}" x2="{ml + pw}" y2="{mt + ph}" '
        f'stroke="black"/>',
        f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ph}" stroke="black"/>',
    ]
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        xv = x_lo + frac * (x_hi - x_lo)
        yv = y_lo + frac * (y_hi - y_lo)
        parts.append(f'<text x="{sx(xv):.1f}" y="{mt + ph + 18}" '
                     f'text-anchor="middle" font-family="sans-serif" '
                     f'font-size="11">{xv:.0f}</text>')
        parts.append(f'<text x="{ml - 8}" y="{sy(yv) + 4:.1f}" '
                     f'text-anchor="end" font-family="sans-serif" '
                     f'font-size="11">{yv:.3g}</text>')
    series1 = [(r.n_samples, r.bound1) for r in rows if r.bound1 is not None]
    series2 = [(r.n_samples, r.bound2) for r in rows if r.bound2 is not None]
    if series1:
        parts.append(poly(series1, "#1f77b4"))
    if series2:
        parts.append(poly(series2, "#d62728"))
    if ref is not None:
        parts.append(poly([(x_lo, ref), (x_hi, ref)], "#444444", dash="6,4"))
    parts.append(f'<text x="{ml + pw - 4}" y="{mt + 14}" text-anchor="end" '
                 f'font-family="sans-serif" font-size="12" fill="#1f77b4">'
                 f'refined bound</text>')
    parts.append(f'<text x="{ml + pw - 4}" y="{mt + 30}" text-anchor="end" '
                 f'font-family="sans-serif" font-size="12" fill="#d62728">'
                 f'baseline bound</text>')
    parts.append(f'<text x="{ml + pw - 4}" y="{mt + 46}" text-anchor="end" '
                 f'font-family="sans-serif" font-size="12" fill="#444444">'
                 f'white-box upper</text>')
    parts.append(f'<text x="{ml + pw / 2:.0f}" y="{height - 12}" '
                 f'text-anchor="middle" font-family="sans-serif" '
                 f'font-size="13">sample count N</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_consensus_demo(args) -> int:
    started = _now()
    grid = tuple(int(tok) for tok in args.n_grid.split(","))
    try:
        cfg = NetworkConfig(n=args.nodes, m=args.modes, beta=args.beta,
                            n_grid=grid, seed=args.seed, depth=args.depth,
                            p_edge=args.p_edge)
        if args.identity:
            # Test hook: identity modes, which the admissibility check must
            # reject (the compressed identity preserves every form).
            from .blackbox import SwitchedSystem

            sampler = lambda n, m, p, rng: SwitchedSystem(
                tuple(np.eye(n) for _ in range(m)))
            result = consensus_sweep(cfg, mode_sampler=sampler)
        else:
            result = consensus_sweep(cfg)
    except SweepConfigError as exc:
        _sys.stderr.write(f"sweep configuration rejected: {exc}\n")
        return EXIT_SWEEP_CONFIG

    os.makedirs(args.out_dir, exist_ok=True)
    csv_path = os.path.join(args.out_dir, "sweep.csv")
    svg_path = os.path.join(args.out_dir, "sweep.svg")
    with open(csv_path, "w") as f:
        f.write(rows_to_csv(result.rows))
    with open(svg_path, "w") as f:
        f.write(_svg_line_chart(
            result.rows,
            f"Sampled JSR bounds, n={cfg.n} nodes, m={cfg.m} modes"))
    _write_manifest(
        os.path.join(args.out_dir, "manifest.json"), "consensus-demo",
        _echo_flags(args, ["nodes", "modes", "beta", "n_grid", "seed",
                           "depth", "p_edge", "out_dir", "identity"]),
        args.seed, started)
    print(f"wrote {csv_path} and {svg_path} ({len(result.rows)} rows, "
          f"{result.system_draws} system draw(s))")
    return EXIT_OK


# ---------------------------------------------------------------------------
# qlp-solve / beta-table / validate
# ---------------------------------------------------------------------------


def cmd_qlp_solve(args) -> int:
    with open(args.instance) as f:
        inst = qlp.instance_from_json(f.read())
    try:
        sol = qlp.solve(inst, tol_lambda=args.tol_lambda)
    except qlp.InfeasibleError as exc:
        _sys.stderr.write(f"infeasible: {exc}\n")
        return EXIT_FAILURE
    doc = {
        "lambda_star": sol.lambda_star,
        "x_star": [float(v) for v in sol.x_star],
        "max_violation": sol.max_violation,
        "set_residual": sol.set_residual,
        "bracket_width": sol.bracket_width,
        "status": sol.status.value,
    }
    text = json.dumps(doc, indent=2)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text + "\n")
    else:
        print(text)
    return EXIT_OK


def cmd_beta_table(args) -> int:
    lo, hi, count = (tok for tok in args.eps_grid.split(":"))
    lo, hi, count = float(lo), float(hi), int(count)
    if count < 2 or not 0.0 <= lo < hi <= 1.0:
        raise _UsageError(f"bad eps grid {args.eps_grid!r}; want lo:hi:count")
    lines = ["eps,k,N,phi"]
    for i in range(count):
        eps = lo + (hi - lo) * i / (count - 1)
        value = scenario.phi(eps, args.k, args.samples)
        lines.append(f"{format(eps, '.17g')},{args.k},{args.samples},"
                     f"{format(value, '.17g')}")
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
    else:
        print(text, end="")
    return EXIT_OK


def cmd_validate(args) -> int:
    started = _now()
    system = read_system(args.system)
    cfg = CertConfig(num_modes=system.m, beta=args.beta, cap_c=args.cap_c)
    report = validate_certificate_montecarlo(
        system, cfg, n_samples=args.samples, trials=args.trials,
        rng=Rng(args.seed), fresh_samples=args.fresh, depth=args.depth,
        workers=min(thread_cap(), args.trials))
    with open(args.out, "w") as f:
        f.write(report.to_json() + "\n")
    _write_manifest(
        args.out + ".manifest.json", "validate",
        _echo_flags(args, ["system", "samples", "trials", "beta", "cap_c",
                           "fresh", "depth", "out"]),
        args.seed, started)
    print(f"validated {args.trials} trials: "
          f"viol-freq={report.freq_violation_exceeds_eps:.3f} "
          f"bound-fail-freq={report.freq_bound_failure:.3f} "
          f"threshold={report.threshold:.3f} -> {args.out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    """Draw observations from a white-box system file into a CSV."""
    started = _now()
    system = read_system(args.system)
    rng = Rng(args.seed).derive(0)
    samples = SampleSet.from_observations(
        observe(system, rng) for _ in range(args.samples))
    write_observations(args.out, samples)
    _write_manifest(args.out + ".manifest.json", "simulate",
                    _echo_flags(args, ["system", "samples", "out"]),
                    args.seed, started)
    print(f"wrote {len(samples)} observations -> {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser.
# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="scenjsr",
                     description="Sampled stability certificates for "
                                 "switched linear systems.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("certify", help="certificate from observations")
    p.add_argument("--obs", help="observations CSV (see README for format)")
    p.add_argument("--simulate", help="white-box system JSON to sample from")
    p.add_argument("--samples", type=int, help="number of observations to draw")
    p.add_argument("--modes", type=int,
                   help="known mode count m (required with --obs)")
    p.add_argument("--beta", type=float, default=0.05)
    p.add_argument("--cap-C", dest="cap_c", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--assume-no-barabanov", action="store_true",
                   help="assert that no hidden mode has an invariant "
                        "quadratic form")
    p.add_argument("--out", default="certificate.json")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("consensus-demo", help="bound-versus-N sweep on a "
                                              "hidden switching network")
    p.add_argument("--nodes", type=int, default=8)
    p.add_argument("--modes", type=int, default=3)
    p.add_argument("--beta", type=float, default=0.05)
    p.add_argument("--n-grid", default="500,1000,2000,5000")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--depth", type=int, default=8)
    p.add_argument("--p-edge", dest="p_edge", type=float, default=0.5)
    p.add_argument("--identity", action="store_true",
                   help="test hook: identity modes (always rejected)")
    p.add_argument("--out-dir", default="consensus-out")
    p.set_defaults(func=cmd_consensus_demo)

    p = sub.add_parser("qlp-solve", help="solve a serialized instance")
    p.add_argument("--instance", required=True)
    p.add_argument("--tol-lambda", dest="tol_lambda", type=float, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_qlp_solve)

    p = sub.add_parser("beta-table", help="CSV of the guarantee tail")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--samples", type=int, required=True)
    p.add_argument("--eps-grid", default="0.0:1.0:21",
                   help="lo:hi:count inclusive grid")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_beta_table)

    p = sub.add_parser("validate", help="Monte Carlo check on a white-box "
                                        "system")
    p.add_argument("--system", required=True)
    p.add_argument("--samples", type=int, required=True)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--beta", type=float, default=0.05)
    p.add_argument("--cap-C", dest="cap_c", type=float, default=None)
    p.add_argument("--fresh", type=int, default=2000,
                   help="fresh samples per violation estimate")
    p.add_argument("--depth", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="validation.json")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("simulate", help="draw an observations CSV from a "
                                        "system file")
    p.add_argument("--system", required=True)
    p.add_argument("--samples", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="observations.csv")
    p.set_defaults(func=cmd_simulate)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, stream=_sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        _sys.stderr.write(f"usage error: {exc}\n")
        return EXIT_USAGE
    except ValueError as exc:
        _sys.stderr.write(f"error: {exc}\n")
        return EXIT_FAILURE


def console_entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    raise SystemExit(main())
