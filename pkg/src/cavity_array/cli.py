"""Command-line entry point: ``cavity-array <subcommand> <config.yaml> [options]``."""
from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .config import ExperimentConfig, config_from_dict, config_to_dict, load_config, set_path
from .errors import AccuracyError, ConfigError
from .experiment import _Writer, coefficients_csv, resolve_output_dir, run_experiment
from .hamiltonian import effective_coefficients, validate_regime
from .lattice import Dispersion
from .protocols import estimate_decoherence, plan_parallel


def _plan(cfg: ExperimentConfig):
    if cfg.protocol is None:
        raise ConfigError("protocol: block required")
    p = cfg.protocol
    gates = p.gates or ([p.kind] if p.kind != "parallel" else None)
    return plan_parallel(p.pairs, cfg.lattice, cfg.params(), cfg.lattice.dispersion,
                         gates, p.amplitudes, p.threshold)


def _coeff_table(cfg: ExperimentConfig) -> str:
    lines = []
    params = cfg.params()
    for disp in [cfg.lattice.dispersion] + [d for d in Dispersion if d is not cfg.lattice.dispersion]:
        c = effective_coefficients(cfg.lattice, params, disp)
        tag = " (configured)" if disp is cfg.lattice.dispersion else ""
        lines.append(f"dispersion: {disp.value}{tag}")
        lines.append(f"  {'site':<10}{'epsilon':>14}{'varsigma':>14}")
        for s in c.driven_sites():
            i = (s.j - 1) * cfg.lattice.N + (s.k - 1)
            lines.append(f"  {str(s):<10}{c.epsilon[i]:>14.6g}{c.varsigma[i]:>14.6g}")
        lines.append(f"  {'pair':<22}{'chi':>14}{'|chi|':>14}")
        driven = c.driven_sites()
        for n, a in enumerate(driven):
            for b in driven[n + 1:]:
                chi = c.chi_between(a, b)
                lines.append(f"  {str(a) + '-' + str(b):<22}{chi.real:>14.6g}{abs(chi):>14.6g}")
    report = validate_regime(cfg.lattice, params, cfg.lattice.dispersion)
    lines.append(f"regime: {'pass' if report.passed else 'FAIL'} (threshold {report.threshold:g}; "
                 f"{report.summary()})")
    return "\n".join(lines)


def cmd_coeffs(args, cfg, out_dir: Path) -> int:
    print(_coeff_table(cfg))
    w = _Writer(out_dir)
    w.text("coefficients.csv", coefficients_csv(cfg, list(Dispersion)))
    w.json("regime.json", validate_regime(cfg.lattice, cfg.params(), cfg.lattice.dispersion).to_dict())
    w.commit()
    return 0


def cmd_simulate(args, cfg, out_dir: Path) -> int:
    manifest = run_experiment(cfg, out_dir)
    print(json.dumps({"output_dir": str(out_dir), "basis_dim": manifest.basis_dim,
                      "outputs": sorted(manifest.outputs)}, indent=2))
    comparison = out_dir / "comparison.json"
    if comparison.exists():
        summary = json.loads(comparison.read_text())
        print(f"winner: {summary.get('winner')} "
              f"(max occupation deviation {summary.get('winner_max_occupation_deviation')})")
    return 0


def cmd_protocol(args, cfg, out_dir: Path) -> int:
    plan = _plan(cfg)
    payload = plan.to_dict()
    print(json.dumps(payload, indent=2))
    w = _Writer(out_dir)
    w.json("plan.json", payload)
    w.commit()
    return 0


def cmd_estimate(args, cfg, out_dir: Path) -> int:
    sites = None
    t = args.time
    if cfg.protocol is not None:
        sites = [s for pair in cfg.protocol.pairs for s in pair]
        if t is None:
            t = _plan(cfg).interaction_time
    if t is None:
        raise ConfigError("estimate: pass --time or configure a protocol")
    est = estimate_decoherence(cfg.lattice, cfg.params(), cfg.lattice.dispersion,
                               args.gamma, args.kappa, t, sites)
    payload = est.to_dict()
    print(json.dumps(payload, indent=2))
    w = _Writer(out_dir)
    w.json("estimate.json", payload)
    w.commit()
    return 0


def _sweep_point(index: int, value, base: dict, path: str, out_dir: Path, simulate: bool) -> dict:
    data = copy.deepcopy(base)
    set_path(data, path, value)
    cfg = config_from_dict(data)
    row = {"index": index, "value": value}
    pair = cfg.protocol.pairs[0] if cfg.protocol else tuple(cfg.driven_sites()[:2])
    if len(pair) == 2:
        chi = effective_coefficients(cfg.lattice, cfg.params(), cfg.lattice.dispersion).chi_between(*pair)
        row["chi"] = chi.real
        row["chi_abs"] = abs(chi)
        row["entangle_time"] = np.pi / (4 * abs(chi)) if chi != 0 else float("inf")
    report = validate_regime(cfg.lattice, cfg.params(), cfg.lattice.dispersion)
    row["regime_passed"] = report.passed
    row["worst_raman_ratio"] = report.worst("raman_ratio")
    if simulate:
        sub = out_dir / f"point_{index:03d}"
        run_experiment(cfg, sub)
        comparison = sub / "comparison.json"
        if comparison.exists():
            summary = json.loads(comparison.read_text())
            row["winner"] = summary.get("winner")
            row["max_occupation_deviation"] = summary.get("winner_max_occupation_deviation")
    return row


def cmd_sweep(args, cfg, out_dir: Path) -> int:
    base = config_to_dict(cfg)
    values = [yaml.safe_load(v) for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("--values: empty list")
    with ThreadPoolExecutor(max_workers=args.threads) as pool:
        rows = list(pool.map(lambda iv: _sweep_point(iv[0], iv[1], base, args.vary, out_dir, args.simulate),
                             enumerate(values)))
    pair = cfg.protocol.pairs[0] if cfg.protocol else tuple(cfg.driven_sites()[:2])
    if len(pair) == 2:
        # ratios relative to the unswept base configuration
        ref = abs(effective_coefficients(cfg.lattice, cfg.params(), cfg.lattice.dispersion).chi_between(*pair))
        for row in rows:
            row["chi_ratio"] = row["chi_abs"] / ref if ref else float("nan")
    columns = []
    for row in rows:
        columns += [k for k in row if k not in columns]
    buf = io.StringIO()
    w = csv.DictWriter(buf, columns, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    print(buf.getvalue(), end="")
    writer = _Writer(out_dir)
    writer.text("sweep_summary.csv", buf.getvalue())
    writer.commit()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cavity-array", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", type=Path)
        p.add_argument("--output-dir", type=Path, default=None,
                       help="overrides $CAVITY_ARRAY_OUTPUT_DIR and run.output_dir")
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--seedless", action="store_true",
                       help="accepted for compatibility; every computation is deterministic")
        p.set_defaults(func=func)
        return p

    add("coeffs", cmd_coeffs, "effective coefficients and regime report")
    add("simulate", cmd_simulate, "propagate the full and/or effective model")
    add("protocol", cmd_protocol, "interaction times and predicted states")
    est = add("estimate", cmd_estimate, "first-order decoherence estimate")
    est.add_argument("--gamma", type=float, required=True, help="atomic decay rate")
    est.add_argument("--kappa", type=float, required=True, help="cavity decay rate")
    est.add_argument("--time", type=float, default=None, help="defaults to the protocol time")
    sweep = add("sweep", cmd_sweep, "vary one config field over a list of values")
    sweep.add_argument("--vary", required=True, help="dotted key path; '*' spans list entries")
    sweep.add_argument("--values", required=True, help="comma-separated values")
    sweep.add_argument("--simulate", action="store_true", help="also run each point")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        cfg = load_config(args.config)
        out_dir = resolve_output_dir(cfg, args.output_dir, Path("runs") / args.config.stem)
        return args.func(args, cfg, out_dir)
    except (ConfigError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except AccuracyError as exc:
        print(f"accuracy error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
