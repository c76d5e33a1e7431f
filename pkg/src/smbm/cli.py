"""Command-line driver: ``smbm calibrate|price|hedge|pnl|table2``.

Machine output is JSON written to ``--out`` (sorted keys, no timestamps, so
reruns with the same config and seed are byte-identical).  Human-readable
tables go to stdout and to ``.txt``/``.csv`` files next to the JSON.

Exit codes: 0 success, 1 a tolerance gate failed, 2 configuration or
calibration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .canary import PricingError
from .curve import CurveError
from .experiment import (
    Calibration,
    ConfigError,
    MAX_CLAMP_FRACTION,
    RunConfig,
    calibrate_market,
    clamp_fraction,
    calibration_from_sigma0,
    make_pricer,
    price_summary,
    run_hedge,
    run_pnl,
    table2_checks,
)
from .hedge import HedgeError
from .mc import SimulationError
from .swaption import CalibrationError

log = logging.getLogger("smbm")

FULL_PATHS = 2**17
METHODS = ("semi-nested", "lsmc")


class GateFailure(RuntimeError):
    pass


def _dump(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _load(args) -> RunConfig:
    overrides = {}
    sim = {}
    if args.paths is not None:
        sim["paths"] = args.paths
    if args.seed is not None:
        sim["seed"] = args.seed
    if sim:
        overrides["sim"] = sim
    cfg = RunConfig.load(args.config, overrides)
    if cfg.sim.n_paths < FULL_PATHS:
        print(
            f"warning: quick mode with {cfg.sim.n_paths} paths (< {FULL_PATHS}); "
            "Monte Carlo noise is larger and tolerances are widened",
            file=sys.stderr,
        )
    return cfg


def _calibration(cfg: RunConfig) -> Calibration:
    """Use a stored calibration when the config names one, else calibrate inline."""
    ref = cfg.raw.get("calibration")
    if ref is None:
        return calibrate_market(cfg)
    data = ref
    if isinstance(ref, str):
        path = cfg.base_dir / ref
        try:
            data = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read calibration {path}: {exc}") from exc
    try:
        sigma0 = np.asarray(data["sigma0"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"calibration has no usable sigma0: {exc}") from exc
    if sigma0.shape != (cfg.market.grid.n_rates,):
        raise ConfigError("calibration sigma0 does not match the number of rates")
    return calibration_from_sigma0(cfg, sigma0)


def _calibration_payload(cfg: RunConfig, cal: Calibration) -> dict:
    return {
        "sigma0": cal.model.params.sigma0.tolist(),
        "residuals_bp": {str(i): r for i, r in cal.residuals_bp.items()},
        "model": {k: cfg.model_section[k] for k in sorted(cfg.model_section)},
        "sim": cfg.sim.to_dict(),
    }


def cmd_calibrate(cfg: RunConfig, args) -> int:
    cal = calibrate_market(cfg)
    payload = _calibration_payload(cfg, cal)
    _dump(args.out / "calibration.json", payload)
    tol = float(cfg.tolerances.get("calibration_bp", 0.01))
    print(f"{'rate':>4}  {'sigma0':>12}  {'residual (bp)':>14}")
    worst = 0.0
    for i, r in cal.residuals_bp.items():
        print(f"{i:>4}  {cal.model.params.sigma0[i - 1]:>12.6%}  {r:>+14.2e}")
        worst = max(worst, abs(r))
    if worst > tol:
        raise GateFailure(f"calibration residual {worst:.3g} bp exceeds {tol} bp")
    return 0


def _method(args, default="semi-nested") -> str:
    return args.method or default


def _check_clamps(fraction: float) -> None:
    if fraction > MAX_CLAMP_FRACTION:
        raise GateFailure(f"{fraction:.3%} of rate updates were clamped (limit {MAX_CLAMP_FRACTION:.2%})")


def cmd_price(cfg: RunConfig, args) -> int:
    method = _method(args)
    cal = _calibration(cfg)
    summary = price_summary(cfg, cal, method)
    summary["product"] = cfg.product.to_dict()
    summary["sim"] = cfg.sim.to_dict()
    summary["clamp_fraction"] = clamp_fraction(cfg, cal)
    _dump(args.out / f"price_{method}.json", summary)
    print(f"{method} Canary value {summary['price']:.8f} (stderr {summary['stderr']:.2e})")
    _check_clamps(summary["clamp_fraction"])
    return 0


def _hedge_payload(cfg: RunConfig, run) -> dict:
    n = cfg.market.grid.n_rates
    return {
        "swap_weights": run.hedge.weights[:n].tolist(),
        "swaption_weights": run.hedge.weights[n:].tolist(),
        "bank_weight": run.hedge.bank_weight,
        "contract_delta": run.hedge.contract_delta.tolist(),
        "residual_delta": run.residual_delta.tolist(),
        "relative_residual": run.relative_residual,
        "condition_number": run.hedge.condition_number,
    }


def cmd_hedge(cfg: RunConfig, args) -> int:
    method = _method(args)
    cal = _calibration(cfg)
    run = run_hedge(cfg, cal, method)
    payload = _hedge_payload(cfg, run)
    payload["method"] = method
    _dump(args.out / f"hedge_{method}.json", payload)
    n = cfg.market.grid.n_rates
    print(f"{'state':>6}  {'dV/dY':>13}  {'residual':>13}")
    for j, (d, r) in enumerate(zip(run.hedge.contract_delta, run.residual_delta)):
        name = f"S{j + 1}" if j < n else f"X{j - n + 1}"
        print(f"{name:>6}  {d:>+13.5e}  {r:>+13.5e}")
    tol = float(cfg.tolerances.get("hedge_residual", 1e-6))
    print(f"relative residual delta {run.relative_residual:.2e} (gate {tol:g})")
    if run.relative_residual > tol:
        raise GateFailure(f"hedge residual {run.relative_residual:.3g} exceeds {tol}")
    return 0


def _pnl_for(cfg: RunConfig, cal: Calibration, method: str):
    run = run_hedge(cfg, cal, method)
    return run, run_pnl(cfg, cal, run)


def _write_report(out: Path, stem: str, report, title: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{stem}.txt").write_text(report.to_text(title) + "\n")
    (out / f"{stem}.csv").write_text(report.to_csv())


def cmd_pnl(cfg: RunConfig, args) -> int:
    method = _method(args)
    cal = _calibration(cfg)
    _, report = _pnl_for(cfg, cal, method)
    payload = report.to_dict()
    payload["method"] = method
    _dump(args.out / f"pnl_{method}.json", payload)
    title = f"{method} hedged Canary, dh={list(report.dh)}, dt={report.dt}"
    _write_report(args.out, f"pnl_{method}", report, title)
    print(report.to_text(title))
    return 0


def cmd_table2(cfg: RunConfig, args) -> int:
    methods = [args.method] if args.method else list(METHODS)
    cal = _calibration(cfg)
    quick = cfg.sim.n_paths < FULL_PATHS
    widen = float(cfg.tolerances.get("quick_factor", 3.0)) if quick else 1.0
    clamps = clamp_fraction(cfg, cal)
    payload = {"calibration": _calibration_payload(cfg, cal), "clamp_fraction": clamps, "methods": {}, "quick": quick}
    failed = [] if clamps <= MAX_CLAMP_FRACTION else [f"clamp fraction {clamps:.3%}"]
    for method in methods:
        run, report = _pnl_for(cfg, cal, method)
        checks = table2_checks(report, method, cfg.tolerances, widen)
        payload["methods"][method] = {
            "price": run.pricer(cal.state),
            "hedge": _hedge_payload(cfg, run),
            "pnl": report.to_dict(),
            "checks": checks,
        }
        title = f"{method}: receiver Canary {cfg.product.i1}y/{cfg.product.i2}y, K={cfg.product.strike:.2%}"
        _write_report(args.out, f"table2_{method}", report, title)
        print(report.to_text(title))
        print()
        for c in checks:
            mark = "PASS" if c["pass"] else "FAIL"
            print(f"{mark} {method} {c['name']}: {c['value']:+.3e} vs {c['reference']:+.3e} (tol {c['tolerance']:.2e})")
            if not c["pass"]:
                failed.append(f"{method} {c['name']}")
        print()
    _dump(args.out / "table2.json", payload)
    if failed:
        raise GateFailure("out of tolerance: " + ", ".join(failed))
    return 0


COMMANDS = {
    "calibrate": cmd_calibrate,
    "price": cmd_price,
    "hedge": cmd_hedge,
    "pnl": cmd_pnl,
    "table2": cmd_table2,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="smbm", description="Co-terminal swap market Bergomi model driver")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", type=Path, default=None, help="run configuration JSON (default: built-in Canary experiment)")
    p.add_argument("--method", choices=METHODS, default=None)
    p.add_argument("--paths", type=int, default=None, help="override the number of Monte Carlo paths")
    p.add_argument("--seed", type=int, default=None, help="override the random seed")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = _load(args)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, CalibrationError, CurveError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (PricingError, HedgeError, SimulationError, ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except GateFailure as exc:
        print(f"gate failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
