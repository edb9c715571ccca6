"""Command line interface: ``dpate account|calibrate|simulate|report``."""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys
import time
from typing import Dict, List, Optional, Sequence

import yaml

from dpate import accounting, config as config_mod
from dpate.config import MechanismSpec, RunConfig, format_epsilon
from dpate.errors import CalibrationError, ConfigurationError
from dpate.mechanisms import MechanismSuite, PbmParams
from dpate.simulation import NonPrivate, PbmDesign, TrialConfig, run_monte_carlo

EXIT_OK = 0
EXIT_CONFIG = 3
EXIT_CALIBRATION = 4
EXIT_RUNTIME = 5

REPORT_HEADER = [
    "mechanism", "epsilon", "delta", "m", "estimand", "ci_kind",
    "coverage", "mean_width", "width_std_err", "N", "wall_time_s",
]
ACCOUNT_HEADER = ["alpha", "eps_exact", "eps_approx", "dp_eps_exact", "dp_eps_approx"]


def _fmt(x: float) -> str:
    return format(x, ".6g")


def _write(text: str, out: Optional[str]) -> None:
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _csv(rows: List[Sequence], header: Sequence[str]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


# --------------------------------------------------------------------------
# account
# --------------------------------------------------------------------------


def cmd_account(args) -> int:
    orders = tuple(sorted(set(args.orders))) if args.orders else accounting.DEFAULT_ORDERS
    theta = args.theta
    if theta is None:
        if args.epsilon is None:
            raise ConfigurationError("give either --theta or an --epsilon target")
        theta = accounting.calibrate_pbm(args.epsilon, args.delta, args.n, args.m, orders).theta
    PbmParams(args.m, theta)  # validates theta and m

    approx = accounting.pbm_curve(args.n, args.m, theta, orders)
    exact = None
    if args.n * args.m <= accounting.EXACT_SIZE_LIMIT and not args.no_exact:
        exact = accounting.pbm_curve(args.n, args.m, theta, orders, exact=True)
    offset = accounting.conversion_offset(orders, args.delta)

    rows = []
    for i, alpha in enumerate(orders):
        e_ex = exact.epsilons[i] if exact else None
        e_ap = approx.epsilons[i]
        rows.append([
            _fmt(alpha),
            "" if e_ex is None else _fmt(e_ex),
            _fmt(e_ap),
            "" if e_ex is None else _fmt(max(0.0, e_ex + offset[i])),
            _fmt(max(0.0, e_ap + offset[i])),
        ])
    rows.append([
        "min",
        "",
        "",
        "" if exact is None else _fmt(accounting.rdp_to_dp(exact, args.delta)),
        _fmt(accounting.rdp_to_dp(approx, args.delta)),
    ])
    _write(_csv(rows, ACCOUNT_HEADER), args.out)
    return EXIT_OK


# --------------------------------------------------------------------------
# calibrate
# --------------------------------------------------------------------------


def calibrate_design(
    epsilon: float, delta: float, n_c: int, n_t: int, m1: int, m2: int, fraction: float, R: float = 1.0
) -> PbmDesign:
    control = accounting.calibrate_suite(epsilon, delta, n_c, m1, m2, fraction, R=R)
    test = control if n_t == n_c else accounting.calibrate_suite(epsilon, delta, n_t, m1, m2, fraction, R=R)
    return PbmDesign(control, test)


def design_fragment(design: PbmDesign) -> Dict:
    return MechanismSpec(
        "pbm",
        design.control.params1.m,
        design.control.params2.m,
        {
            g: (design.suite(g).params1.theta, design.suite(g).params2.theta)
            for g in ("control", "test")
        },
    ).to_dict()


def cmd_calibrate(args) -> int:
    design = calibrate_design(args.epsilon, args.delta, args.n_c, args.n_t, args.m1, args.m2, args.fraction, args.R)
    text = yaml.safe_dump({"mechanisms": [design_fragment(design)]}, sort_keys=False)
    _write(text, args.out)
    return EXIT_OK


# --------------------------------------------------------------------------
# simulate
# --------------------------------------------------------------------------


def _explicit_design(spec: MechanismSpec, R: float) -> PbmDesign:
    suites = {
        g: MechanismSuite(PbmParams(spec.m1, t1, R), PbmParams(spec.m2, t2, R))
        for g, (t1, t2) in spec.thetas.items()
    }
    return PbmDesign(suites["control"], suites["test"])


def _design_epsilon(design: PbmDesign, n_c: int, n_t: int, delta: float) -> float:
    """Worst (eps, delta) over the two groups' composed mechanisms."""
    return max(
        accounting.rdp_to_dp(accounting.suite_curve(design.control, n_c), delta),
        accounting.rdp_to_dp(accounting.suite_curve(design.test, n_t), delta),
    )


def resolve_cells(cfg: RunConfig) -> List[Dict]:
    """Expand the mechanism x epsilon grid into concrete trial configurations."""
    n_t = cfg.n - cfg.n_c
    R = cfg.model.R
    cells = []
    for spec in cfg.mechanisms:
        common = dict(
            model=cfg.model, n=cfg.n, n_c=cfg.n_c, estimand=cfg.estimand,
            ci_kind=cfg.ci_kind, confidence=cfg.confidence, additive=cfg.additive,
        )
        if spec.kind == "none":
            cells.append(dict(spec=spec, epsilon=math.inf, trial=TrialConfig(mechanism=NonPrivate(), **common), resolved={}))
        elif spec.kind == "pbm" and spec.thetas is not None:
            design = _explicit_design(spec, R)
            eps = _design_epsilon(design, cfg.n_c, n_t, cfg.delta)
            cells.append(dict(spec=spec, epsilon=eps, trial=TrialConfig(mechanism=design, **common),
                              resolved=design_fragment(design)))
        else:
            for eps in cfg.epsilons:
                if spec.kind == "pbm":
                    mech = calibrate_design(eps, cfg.delta, cfg.n_c, n_t, spec.m1, spec.m2, cfg.fraction_first, R)
                    resolved = design_fragment(mech)
                else:
                    sens = accounting.difference_in_means_sensitivity(cfg.n_c, n_t, R)
                    mech = accounting.calibrate_gaussian(eps, cfg.delta, sens)
                    resolved = {"kind": "central_gaussian", "sigma": mech.sigma, "sensitivity": sens}
                cells.append(dict(spec=spec, epsilon=eps, trial=TrialConfig(mechanism=mech, **common), resolved=resolved))
    return cells


def cmd_simulate(args) -> int:
    cfg = config_mod.load(args.config)
    seed = cfg.base_seed if args.seed is None else args.seed
    out = args.out or cfg.output
    cells = resolve_cells(cfg)

    rows, sidecar = [], []
    for cell in cells:
        start = time.perf_counter()
        report = run_monte_carlo(cell["trial"], cfg.N, seed, threads=args.threads)
        elapsed = time.perf_counter() - start
        spec = cell["spec"]
        rows.append([
            spec.label,
            format_epsilon(cell["epsilon"]),
            "" if spec.kind == "none" else repr(cfg.delta),
            "" if spec.kind != "pbm" else str(spec.m1),
            cfg.estimand,
            cfg.ci_kind,
            _fmt(report.coverage),
            _fmt(report.mean_width),
            _fmt(report.width_std_err),
            str(report.N),
            _fmt(elapsed) if args.timing else "",
        ])
        sidecar.append({
            "mechanism": spec.label,
            "epsilon": format_epsilon(cell["epsilon"]),
            "resolved": cell["resolved"],
        })
    _write(_csv(rows, REPORT_HEADER), out)
    if out:
        resolved = cfg.to_dict()
        resolved["base_seed"] = seed
        with open(out + ".resolved.yaml", "w") as fh:
            yaml.safe_dump({"config": resolved, "cells": sidecar}, fh, sort_keys=False)
    return EXIT_OK


# --------------------------------------------------------------------------
# report
# --------------------------------------------------------------------------


def _eps_key(text: str) -> float:
    return math.inf if text == "inf" else float(text)


def merge_reports(texts: Sequence[str]) -> str:
    """Reshape simulation CSVs into a mechanism-by-epsilon table.

    Each mechanism contributes a coverage row and a width row; cells that
    were not simulated are rendered as ``-``.
    """
    cells: Dict = {}
    mechanisms: List[str] = []
    epsilons = set()
    for text in texts:
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header != REPORT_HEADER:
            raise ConfigurationError(f"unexpected CSV header: {header}")
        for row in reader:
            rec = dict(zip(header, row))
            label = rec["mechanism"]
            if label not in mechanisms:
                mechanisms.append(label)
            epsilons.add(rec["epsilon"])
            cells[(label, rec["epsilon"])] = rec
    eps_cols = sorted(epsilons, key=_eps_key)
    rows = []
    for label in mechanisms:
        for metric, column in (("coverage", "coverage"), ("width", "mean_width")):
            rows.append([label, metric] + [cells[(label, e)][column] if (label, e) in cells else "-" for e in eps_cols])
    return _csv(rows, ["mechanism", "metric"] + eps_cols)


def cmd_report(args) -> int:
    texts = []
    for path in args.inputs:
        try:
            with open(path, newline="") as fh:
                texts.append(fh.read())
        except OSError as exc:
            raise ConfigurationError(f"cannot read {path}: {exc}") from None
    _write(merge_reports(texts), args.out)
    return EXIT_OK


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------


def _orders(text: str) -> List[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dpate", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("account", help="tabulate PBM Renyi-DP curves")
    p.add_argument("--n", type=int, required=True, help="number of clients in the group")
    p.add_argument("--m", type=int, required=True, help="binomial trials per client")
    p.add_argument("--theta", type=float)
    p.add_argument("--epsilon", type=float, help="calibrate theta to this target instead")
    p.add_argument("--delta", type=float, default=1e-5)
    p.add_argument("--orders", type=_orders, help="comma-separated Renyi orders")
    p.add_argument("--no-exact", action="store_true", help="skip the exact accountant")
    p.add_argument("--out")
    p.set_defaults(func=cmd_account)

    p = sub.add_parser("calibrate", help="calibrate PBM parameters for both groups")
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--delta", type=float, default=1e-5)
    p.add_argument("--n-c", type=int, required=True)
    p.add_argument("--n-t", type=int, required=True)
    p.add_argument("--m1", type=int, required=True)
    p.add_argument("--m2", type=int)
    p.add_argument("--fraction", type=float, default=0.99)
    p.add_argument("--R", type=float, default=1.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("simulate", help="run the Monte Carlo grid of a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=int)
    p.add_argument("--timing", action="store_true", help="fill the wall_time_s column")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="merge simulation CSVs into one table")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "m2", "unset") is None:
        args.m2 = args.m1
    try:
        return args.func(args)
    except CalibrationError as exc:
        print(f"calibration error: {exc}", file=sys.stderr)
        return EXIT_CALIBRATION
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
