"""Command line front end.

Every subcommand parses all of its input files before computing, writes a
JSON (or CSV) report, and exits with 0 on success, 2 on a negative verdict
(arbitrage found, not viable, failed self-test) and 1 on errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import platform
import sys
from fractions import Fraction
from pathlib import Path

from . import __version__

log = logging.getLogger("rvp")

EXIT_OK, EXIT_ERROR, EXIT_NEGATIVE = 0, 1, 2


class CLIError(Exception):
    pass


# ---------------------------------------------------------------------------
# Serialisation
# ---------------------------------------------------------------------------

def _plain(obj):
    """JSON-ready copy: Fractions as strings, numpy scalars and arrays as Python values."""
    import numpy as np

    if isinstance(obj, Fraction):
        return str(obj)
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def stamp() -> dict:
    import numpy
    import scipy

    return {
        "tool": "rvp",
        "version": __version__,
        "python": platform.python_version(),
        "numpy": numpy.__version__,
        "scipy": scipy.__version__,
    }


def _flatten(d, prefix=""):
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            yield from _flatten(v, key + ".")
        elif isinstance(v, list) and v and isinstance(v[0], (dict, list)):
            yield key, json.dumps(v, sort_keys=True)
        elif isinstance(v, list):
            yield key, " ".join(str(x) for x in v)
        else:
            yield key, v


def render(report: dict, fmt: str) -> str:
    report = _plain(report)
    if fmt == "json":
        return json.dumps(report, sort_keys=True, indent=2) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["key", "value"])
    for k, v in _flatten(report):
        w.writerow([k, v])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Input loading (fail fast)
# ---------------------------------------------------------------------------

def _read_json(path: str, what: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise CLIError(f"{what} file not found: {path}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise CLIError(f"{what} file {path} is not valid JSON: {exc}") from exc


def _gamma_arg(value: str | None):
    """Consolidation from a JSON file, an inline JSON document, or a bare prior id."""
    from .pricing import parse_gamma

    if value is None:
        return None, None
    if Path(value).is_file():
        raw = _read_json(value, "gamma")
    else:
        try:
            raw = json.loads(value)
        except json.JSONDecodeError:
            raw = value
    if isinstance(raw, dict) and "gamma" in raw:
        raw = raw["gamma"]
    return parse_gamma(raw), raw


def _tol_arg(values: list[str] | None) -> dict:
    out = {}
    for item in values or []:
        for part in item.split(","):
            if not part:
                continue
            if "=" not in part:
                out["tol"] = float(part)
                continue
            k, v = part.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def _load_model(args):
    from .g_engine import load_model

    raw = _read_json(args.model, "model")
    model, payoff = load_model(raw)
    payoff = args.payoff or payoff
    if payoff is None:
        raise CLIError("no payoff given (use --payoff or a 'payoff' field in the model file)")
    from .g_engine.pde import payoff_function

    payoff_function(payoff)  # parse now, compute later
    if args.M:
        model = model.with_(M=args.M)
    return model, payoff, raw


def _load_market(args):
    from .market import load_market

    raw = _read_json(args.market, "market")
    return load_market(raw), raw


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _g_inputs(args, model, payoff, raw):
    return {"model_file": args.model, "model": raw, "payoff": payoff, "grid": model.to_json()}


def cmd_price(args, tol):
    from .g_engine import g_expectation

    model, payoff, raw = _load_model(args)
    r = g_expectation(payoff, model, of=args.of, backend=args.backend)
    result = {"value": r.value, "error_estimate": r.error, "grid": r.grid}
    return EXIT_OK, "computed", _g_inputs(args, model, payoff, raw), result, r.slice_csv()


def cmd_super(args, tol):
    from .g_engine import superreplication_price

    model, payoff, raw = _load_model(args)
    r = superreplication_price(payoff, model, n_steps=args.steps, tol=tol.get("tol", 5e-3))
    result = {
        "value": r.value,
        "error_estimate": r.error,
        "pde_value": r.pde_value,
        "lattice_value": r.lattice_value,
        "routes_agree": r.agree,
        "singleton_prices": {f"{k:.6g}": v for k, v in sorted(r.singleton_prices.items())},
        "singletons_below": r.singleton_ok,
        "lattice_steps": r.n_steps,
    }
    from .g_engine import g_expectation

    sl = g_expectation(payoff, model.driftless(), "asset", with_error=False).slice_csv()
    ok = r.agree and r.singleton_ok
    return (EXIT_OK if ok else EXIT_NEGATIVE), ("consistent" if ok else "routes disagree"), _g_inputs(args, model, payoff, raw), result, sl


def cmd_girsanov(args, tol):
    from .g_engine import g_expectation, girsanov_price

    model, payoff, raw = _load_model(args)
    r = girsanov_price(payoff, model, n_steps=args.steps, tol=tol.get("tol", 5e-3))
    result = {
        "value": r.value,
        "driftless": r.driftless,
        "difference": r.difference,
        "agree": r.agree,
        "lattice_steps": r.n_steps,
        "lattice_M": r.M,
        "kernel_residual": r.kernel_residual,
        "novikov": {"ok": r.novikov.ok, "bound": r.novikov.bound, "value": r.novikov.numeric, "refined": r.novikov.refined, "theta_sup": r.novikov.theta_sup},
    }
    sl = g_expectation(payoff, model.driftless(), "asset", with_error=False).slice_csv()
    return (EXIT_OK if r.agree else EXIT_NEGATIVE), ("drift removed" if r.agree else "drift not removed"), _g_inputs(args, model, payoff, raw), result, sl


def _scan_json(scan):
    out = {"found": scan.found}
    if scan.found:
        out.update(
            profit_prior=scan.profit_prior,
            capital=scan.capital,
            payoff=list(scan.payoff),
            strategy=scan.witness.to_json(),
            constraints=scan.constraints,
        )
    else:
        out["certificate"] = scan.constraints or {}
        if scan.per_prior:
            out["lp_duals"] = {p.prior_id: {"value": p.value, "dual": p.dual} for p in scan.per_prior}
    return out


def cmd_arbitrage(args, tol):
    from .market import find_arbitrage, select_priors

    m, raw = _load_market(args)
    R = select_priors(m, args.priors)
    scan = find_arbitrage(m, R, method=args.method)
    inputs = {"market_file": args.market, "market": raw, "priors": [p.id for p in R], "method": args.method}
    verdict = "ARBITRAGE" if scan.found else "NONE"
    return (EXIT_NEGATIVE if scan.found else EXIT_OK), verdict, inputs, _scan_json(scan), None


def cmd_viability(args, tol):
    from .market import MarketError, load_market, market_systems
    from .pricing import is_viable, load_price_spec, relevant_priors, sup_of_all

    raw = _read_json(args.market, "market")
    gamma, graw = _gamma_arg(args.gamma)
    if "systems" in raw or "S" not in raw:
        spec = load_price_spec(raw)
        ps, systems = spec.prior_set, spec.systems
        gamma = gamma or spec.gamma
    else:
        m = load_market(raw)
        ps = m.priors
        gamma = gamma or sup_of_all(ps)
        try:
            systems = market_systems(m, [ps.get(p) for p in relevant_priors(gamma)])
        except MarketError as exc:
            inputs = {"market_file": args.market, "market": raw, "gamma": graw}
            return EXIT_NEGATIVE, "NOT VIABLE", inputs, {"viable": False, "arbitrage": _scan_json(exc.scan)}, None
    from .pricing import gamma_to_json

    v = is_viable(systems, gamma, ps, relative=args.relative)
    inputs = {"market_file": args.market, "market": raw, "gamma": gamma_to_json(gamma), "relative_positivity": args.relative}
    result = {"viable": v.viable}
    if v.viable:
        result["witness"] = v.witness.to_json()
        result["positivity"] = {"full": v.positivity.full, "relative": v.positivity.relative}
    elif v.certificate is not None:
        c = v.certificate
        result["certificate"] = {"prior": c.prior_id, "farkas_ray": c.certificate, "epsilon": c.epsilon, "verified": c.verify()}
    else:
        result["positivity"] = {"full": v.positivity.full, "relative": v.positivity.relative, "failing_leaves": list(v.positivity.failing_full)}
    return (EXIT_OK if v.viable else EXIT_NEGATIVE), ("VIABLE" if v.viable else "NOT VIABLE"), inputs, result, None


def cmd_roundtrip(args, tol):
    from .esmm import check_corollary, esmm_from_extension, extension_from_esmm, same_components, verify_esmm
    from .market import find_arbitrage, market_systems
    from .pricing import gamma_to_json, is_viable, marketed_union, relevant_priors, sup_of_all

    m, raw = _load_market(args)
    gamma, _ = _gamma_arg(args.gamma)
    gamma = gamma or sup_of_all(m.priors)
    R = [m.priors.get(p) for p in relevant_priors(gamma)]
    inputs = {"market_file": args.market, "market": raw, "gamma": gamma_to_json(gamma)}
    scan = find_arbitrage(m, R)
    if scan.found:
        return EXIT_NEGATIVE, "ARBITRAGE", inputs, {"arbitrage": _scan_json(scan)}, None
    systems = market_systems(m, R)
    v = is_viable(systems, gamma, m.priors, relative=True)
    if not v.viable:
        cert = v.certificate
        res = {"viable": False}
        if cert is not None:
            res["certificate"] = {"prior": cert.prior_id, "farkas_ray": cert.certificate, "verified": cert.verify()}
        return EXIT_NEGATIVE, "NOT VIABLE", inputs, res, None
    Q = esmm_from_extension(v.witness, m)
    rep = verify_esmm(Q, m)
    psi2 = extension_from_esmm(Q, m)
    mu = marketed_union(systems, gamma, m.priors)
    table = []
    for tag, X in zip(mu.members, mu.basis):
        a, b = v.witness(X), psi2(X)
        table.append({"prior": tag[0], "basis_index": tag[1], "extension": a, "from_esmm": b, "equal": a == b})
    cor = check_corollary(m, R, gamma)
    ok = rep.ok and same_components(v.witness, psi2) and all(r["equal"] for r in table)
    result = {
        "roundtrip": ok,
        "esmm": Q.to_json(),
        "verify_esmm": {"ok": rep.ok, "equivalence": rep.equivalence, "normalised": rep.normalised, "martingale": rep.martingale, "reciprocal_l2": rep.reciprocal_l2},
        "same_components": same_components(v.witness, psi2),
        "basis_table": table,
        "corollary": {
            "ok": cor.ok,
            "viable": cor.viable,
            "esmm_found": cor.esmm_found,
            "arbitrage": cor.arbitrage,
            "completeness": cor.completeness,
        },
    }
    if not ok:
        raise CLIError("round trip mismatch: " + json.dumps(_plain(result["verify_esmm"])))
    return EXIT_OK, "ROUNDTRIP OK", inputs, result, None


def cmd_selftest(args, tol):
    from .acceptance import Tolerances, run_all

    t = Tolerances()
    pairs = {k: v for k, v in tol.items() if k != "tol"}
    if args.quick:
        pairs = {"n_coherence": 100, "n_price": 40, "n_market": 40, "n_arbitrage": 20, **pairs}
    t = t.override(pairs)
    only = set(args.only.split(",")) if args.only else None
    results = run_all(t, seed=args.seed, only=only)
    for r in results:
        print(r.line(), file=sys.stderr)
    rows = []
    for r in results:
        row = {"criterion": r.key, "title": r.title, "passed": r.ok, "details": r.details, "budget_s": r.budget}
        if args.timings:
            row["seconds"] = round(r.seconds, 3)
        rows.append(row)
    ok = all(r.ok for r in results)
    from dataclasses import asdict

    return (EXIT_OK if ok else EXIT_NEGATIVE), ("PASS" if ok else "FAIL"), {"tolerances": asdict(t), "seed": args.seed, "only": sorted(only) if only else None}, {"criteria": rows}, None


COMMANDS = {
    "price": cmd_price,
    "super": cmd_super,
    "girsanov": cmd_girsanov,
    "arbitrage-scan": cmd_arbitrage,
    "viability": cmd_viability,
    "esmm-roundtrip": cmd_roundtrip,
    "selftest": cmd_selftest,
}


# ---------------------------------------------------------------------------
# Parser and entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--tol", action="append", help="tolerance override: a number or key=value pairs")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=1, help="thread cap for numerical libraries")
    common.add_argument("--out", help="directory for report files (stdout when omitted)")
    common.add_argument("--format", choices=("json", "csv"), type=str.lower, default="json")

    p = argparse.ArgumentParser(prog="rvp", description="Pricing under volatility uncertainty.")
    p.add_argument("--version", action="version", version=f"rvp {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def g_cmd(name, help_):
        s = sub.add_parser(name, parents=[common], help=help_)
        s.add_argument("--model", required=True, help="model JSON")
        s.add_argument("--payoff", help="payoff expression in t, x")
        s.add_argument("--M", type=int, help="space intervals")
        return s

    s = g_cmd("price", "G-expectation of a payoff by the PDE")
    s.add_argument("--of", choices=("asset", "noise"), default="asset")
    s.add_argument("--backend", choices=("explicit", "implicit"), default="explicit")
    s = g_cmd("super", "superreplication price, two routes")
    s.add_argument("--steps", type=int, default=200)
    s = g_cmd("girsanov", "price under the drift-removing shift")
    s.add_argument("--steps", type=int, default=200)

    s = sub.add_parser("arbitrage-scan", parents=[common], help="search a tree market for arbitrage")
    s.add_argument("--market", required=True)
    s.add_argument("--priors", default="all", help="'all' or comma-separated prior ids")
    s.add_argument("--method", choices=("local", "lp"), default="local")

    s = sub.add_parser("viability", parents=[common], help="viability of prior-wise price systems")
    s.add_argument("--market", required=True, help="price-system or market JSON")
    s.add_argument("--gamma", help="consolidation (file, inline JSON or prior id)")
    s.add_argument("--relative", action="store_true", help="judge positivity on the priors in gamma only")

    s = sub.add_parser("esmm-roundtrip", parents=[common], help="extension -> EsMM -> extension")
    s.add_argument("--market", required=True)
    s.add_argument("--gamma")

    s = sub.add_parser("selftest", parents=[common], help="run the acceptance criteria")
    s.add_argument("--only", help="comma-separated criterion keys, e.g. C1,C5")
    s.add_argument("--quick", action="store_true", help="reduced instance counts")
    s.add_argument("--timings", action="store_true", help="include wall-clock times in the report")
    return p


def _setup_logging():
    level = os.environ.get("RVP_LOG", "WARNING").upper()
    logging.basicConfig(level=int(level) if level.isdigit() else getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _cap_threads(n: int):
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(n))


def _emit(text: str, name: str, out: str | None):
    if out is None:
        sys.stdout.write(text)
        return
    d = Path(out)
    d.mkdir(parents=True, exist_ok=True)
    (d / name).write_text(text)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging()
    _cap_threads(args.threads)
    try:
        tol = {k: float(v) if k == "tol" else v for k, v in _tol_arg(args.tol).items()}
        code, verdict, inputs, result, slice_csv = COMMANDS[args.command](args, tol)
    except Exception as exc:  # report, never traceback, unless debugging
        if os.environ.get("RVP_LOG", "").upper() == "DEBUG":
            log.exception("failure")
        mod = getattr(type(exc), "__module__", "rvp")
        print(f"error [{mod}.{type(exc).__name__}]: {exc}", file=sys.stderr)
        return EXIT_ERROR
    report = {
        "stamp": stamp(),
        "command": args.command,
        "seed": args.seed,
        "threads": args.threads,
        "inputs": inputs,
        "verdict": verdict,
        "result": result,
    }
    ext = "json" if args.format == "json" else "csv"
    if args.format == "csv" and slice_csv is not None and args.out is None:
        _emit(slice_csv, "u0_slice.csv", None)
    else:
        _emit(render(report, args.format), f"{args.command}.{ext}", args.out)
    if slice_csv is not None and args.out is not None:
        _emit(slice_csv, "u0_slice.csv", args.out)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
