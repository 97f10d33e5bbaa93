"""``fim`` command-line front end: one experiment per invocation, CSV or JSON out."""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import spinchain as sc
from .errors import FimError, NumericError, ValidationError
from .estimators import SCHEMA_HEADER, ESTIMATORS, default_grid, run_mse_experiment
from .fisher import ANALYTIC, DerivativeScheme, markov_decomposition, sample_mean_fisher, geometric_covariances
from .process import entropy_report, load_model, measure_markov_order, conditional_deviation, window_distribution
from .sampling import DEFAULT_SEED, GaussianMarkovModel, tridiagonal_gaussian_conditional_check

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC = 0, 2, 3

GLOBAL_DEFAULTS = {"seed": DEFAULT_SEED, "out": None, "format": "csv", "threads": 1}

DEFAULTS: dict[str, dict[str, Any]] = {
    "fisher": {"theta": None, "n": 8, "scheme": "auto", "richardson": False},
    "mse": {"theta": None, "estimator": "mle", "replicas": 50, "grid": None},
    "gaussian": {"rho": "-0.9,0,0.9", "mu": 1.0, "gamma0": 1.0, "replicas": 1000, "grid": "10,100,1000,10000"},
    "ising": {
        "mode": "map",
        "t_min": 0.05,
        "t_max": 10.0,
        "t_points": 100,
        "b_over_j": "-4,-3,-2.5,-1.5,-1,-0.5,0,0.5,1,1.5,2.5,3,4",
        "j": "1,-1",
        "b": 0.5,
    },
    "nnn": {
        "panel": ",".join(sc.NNN_PANELS),
        "alpha": "-1,-0.5,-0.25,0,0.25,0.5,1",
        "t_min": 0.05,
        "t_max": 10.0,
        "t_points": 100,
        "b": 1.0,
    },
    "markov-order": {"model": None, "theta": None, "max_order": None, "probe_depth": None, "tol": 1e-9,
                     "b": None, "j": None, "t": None, "rho": None},
    "entropy": {"theta": None, "n_max": 8},
}


# ---------------------------------------------------------------------------
# parsing helpers


def _floats(text, name: str) -> list[float]:
    if isinstance(text, (int, float)):
        return [float(text)]
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    try:
        values = [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise ValidationError(f"--{name} expects a comma-separated list of numbers") from None
    if not values:
        raise ValidationError(f"--{name} must not be empty")
    return values


def _ints(text, name: str) -> list[int]:
    values = _floats(text, name)
    if any(v != int(v) for v in values):
        raise ValidationError(f"--{name} expects integers")
    return [int(v) for v in values]


def _theta(text):
    return None if text is None else _floats(text, "theta")


def _scheme(name: str, model, richardson: bool) -> DerivativeScheme:
    if name == "auto":
        name = "analytic" if model.dtable_fn is not None else "central"
    if name not in ("analytic", "central"):
        raise ValidationError("--scheme must be auto, analytic or central")
    return DerivativeScheme(name, richardson=richardson)


def _temperatures(cfg) -> np.ndarray:
    lo, hi, n = float(cfg["t_min"]), float(cfg["t_max"]), int(cfg["t_points"])
    if not 0 < lo <= hi or n < 1:
        raise ValidationError("temperature grid needs 0 < t-min <= t-max and t-points >= 1")
    return sc.default_temperatures(n, lo, hi)


# ---------------------------------------------------------------------------
# emitters


def _clean(v):
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    return v


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def render(rows: list[dict], fmt: str, meta: dict | None = None) -> str:
    if fmt == "json":
        doc = {"schema": SCHEMA_HEADER.lstrip("# "), **(meta or {}), "rows": _clean(rows)}
        return json.dumps(doc, indent=2) + "\n"
    if fmt != "csv":
        raise ValidationError("--format must be csv or json")
    buf = io.StringIO()
    buf.write(SCHEMA_HEADER + "\n")
    if rows:
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(list(rows[0]))
        for row in rows:
            writer.writerow([_cell(v) for v in row.values()])
    return buf.getvalue()


def write_atomic(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    path = Path(out)
    if not path.parent.exists():
        raise ValidationError(f"output directory {path.parent} does not exist")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# subcommands


def cmd_fisher(cfg) -> tuple[list[dict], dict]:
    model = load_model(cfg["model"], _theta(cfg["theta"]))
    scheme = _scheme(cfg["scheme"], model, bool(cfg["richardson"]))
    rep = markov_decomposition(model, int(cfg["n"]), scheme)
    rows = []

    def add(name, k, fm):
        for (i, j), v in np.ndenumerate(np.asarray(fm.entries)):
            rows.append({"quantity": name, "k": k, "i": i, "j": j, "value": float(v)})

    add("F1", 1, rep.F1)
    for k, term in enumerate(rep.conditional_terms, start=2):
        add("F_cond", k, term)
    add("F_joint", rep.N, rep.F_joint)
    add("F_order", rep.order, rep.F_order)
    add("rate", rep.order + 1, rep.rate)
    add("excess", rep.order, rep.excess)
    meta = {k: v for k, v in rep.to_dict().items()}
    return rows, meta


def cmd_mse(cfg) -> tuple[list[dict], dict]:
    theta = _theta(cfg["theta"])
    model = load_model(cfg["model"], theta)
    if model.p != 1:
        raise ValidationError("mse runs need a scalar-parameter model")
    estimators = [e.strip() for e in str(cfg["estimator"]).split(",") if e.strip()]
    for e in estimators:
        if e not in ESTIMATORS or e == "sample-mean":
            raise ValidationError(f"estimator must be one of mle, uncorrelated-mle (got {e!r})")
    grid = _ints(cfg["grid"], "grid") if cfg["grid"] is not None else default_grid()
    rows = []
    for e in estimators:
        run = run_mse_experiment(
            model, model.theta[0], e, grid, int(cfg["replicas"]), int(cfg["seed"]), int(cfg["threads"])
        )
        rows.extend(run.rows())
    return rows, {"base_seed": int(cfg["seed"])}


def cmd_gaussian(cfg) -> tuple[list[dict], dict]:
    grid = _ints(cfg["grid"], "grid")
    rows = []
    for rho in _floats(cfg["rho"], "rho"):
        model = GaussianMarkovModel(float(cfg["mu"]), float(cfg["gamma0"]), rho)
        run = run_mse_experiment(
            model, model.mu, "sample-mean", grid, int(cfg["replicas"]), int(cfg["seed"]), int(cfg["threads"])
        )
        for row in run.rows():
            n = row["N"]
            covs = geometric_covariances(model.gamma0, rho, n)
            F_Y = sample_mean_fisher(model.gamma0, covs, 1.0, n)
            rows.append({**row, "rho": rho, "inv_F_Y": 1.0 / F_Y if F_Y > 0 else math.inf})
    return rows, {"base_seed": int(cfg["seed"])}


def cmd_ising(cfg) -> tuple[list[dict], dict]:
    mode = cfg["mode"]
    Ts = _temperatures(cfg)
    if mode == "map":
        points = []
        for J in _floats(cfg["j"], "j"):
            if J == 0:
                raise ValidationError("--j values must be non-zero for a B/J map")
            points.extend(sc.ising_points(Ts, _floats(cfg["b_over_j"], "b-over-j"), J))
        reports = sc.scan_maps(points, workers=int(cfg["threads"]))
        rows = [{**sc.report_row(r), "B_over_J": p[1] / p[2]} for r, p in zip(reports, points)]
        return rows, {"mode": mode}
    if mode == "curves":
        B = float(cfg["b"])
        rows = []
        for J in _floats(cfg["j"], "j"):
            for T in Ts:
                model = sc.SpinChainModel(B, (J,), T)
                P2 = sc.marginal(model, 2).probs
                rep = sc.thermometry_report(model)
                rows.append(
                    {
                        "T": float(T), "B": B, "J": J,
                        "P_up": float(P2[0].sum()),
                        "P_upup": float(P2[0, 0]), "P_updown": float(P2[0, 1]),
                        "P_downup": float(P2[1, 0]), "P_downdown": float(P2[1, 1]),
                        "F1": rep.F1, "F12": rep.F12, "f": rep.f, "xi": rep.xi,
                        "c_over_T2": rep.c_over_T2, "flags": ";".join(rep.flags),
                    }
                )
        return rows, {"mode": mode}
    if mode == "zero-curve":
        J = _floats(cfg["j"], "j")[0]
        scan = sc.zero_derivative_curve(
            _floats(cfg["b_over_j"], "b-over-j"), (float(cfg["t_min"]), float(cfg["t_max"])), J=J
        )
        rows = [{"B_over_J": r, "T_star": t, "degenerate": 0} for r, t in scan.roots]
        rows += [{"B_over_J": r, "T_star": math.nan, "degenerate": 1} for r in scan.degenerate]
        return rows, {"mode": mode, "J": J}
    raise ValidationError("--mode must be map, curves or zero-curve")


def cmd_nnn(cfg) -> tuple[list[dict], dict]:
    Ts = _temperatures(cfg)
    alphas = _floats(cfg["alpha"], "alpha")
    B = float(cfg["b"])
    points, labels = [], []
    for panel in str(cfg["panel"]).split(","):
        panel = panel.strip()
        if panel not in sc.NNN_PANELS:
            raise ValidationError(f"unknown panel {panel!r}; choose from {list(sc.NNN_PANELS)}")
        pts = sc.nnn_points(Ts, alphas, sc.NNN_PANELS[panel], B)
        points.extend(pts)
        labels.extend([panel] * len(pts))
    reports = sc.scan_maps(points, workers=int(cfg["threads"]))
    rows = [{"panel": lab, **sc.report_row(r)} for lab, r in zip(labels, reports)]
    return rows, {}


def cmd_markov_order(cfg) -> tuple[list[dict], dict]:
    tol = float(cfg["tol"])
    if cfg["model"] is not None:
        model = load_model(cfg["model"], _theta(cfg["theta"]))
        max_order = int(cfg["max_order"]) if cfg["max_order"] is not None else model.order + 1
        depth = int(cfg["probe_depth"]) if cfg["probe_depth"] is not None else max_order + 2
        cache: dict[int, np.ndarray] = {}

        def window(n):
            if n not in cache:
                cache[n] = window_distribution(model, n).probs
            return cache[n]

        measured = measure_markov_order(window, max_order, depth, tol)
        rows = [
            {"order": ell, "max_deviation": conditional_deviation(window, ell, depth)}
            for ell in range(max_order + 1)
        ]
        return rows, {"kind": "finite", "model": model.name, "declared_order": model.order,
                      "measured_order": measured}
    if cfg["j"] is not None:
        if cfg["t"] is None:
            raise ValidationError("spin-chain order check needs --t")
        chain = sc.SpinChainModel(float(cfg["b"] or 0.0), tuple(_floats(cfg["j"], "j")), float(cfg["t"]))
        measured = sc.verify_chain_markov_order(chain, tol)
        rows = [{"order": ell, "max_deviation": v} for ell, v in enumerate(sc.order_deviations(chain))]
        return rows, {"kind": "spin-chain", "R": chain.R, "measured_order": measured,
                      "factorization_defect": sc.factorization_defect(chain)}
    if cfg["rho"] is not None:
        rows = []
        for rho in _floats(cfg["rho"], "rho"):
            for structure in ("tridiagonal", "geometric"):
                coef = tridiagonal_gaussian_conditional_check(rho, structure=structure)
                rows.append({"rho": rho, "structure": structure, "x1_coefficient": coef})
        return rows, {"kind": "gaussian"}
    raise ValidationError("markov-order needs --model, --j (spin chain) or --rho (Gaussian)")


def cmd_entropy(cfg) -> tuple[list[dict], dict]:
    model = load_model(cfg["model"], _theta(cfg["theta"]))
    rep = entropy_report(model, int(cfg["n_max"]))
    rows = [
        {"n": n, "H": H, "linear": n * rep.h + rep.E, "residual": abs(H - n * rep.h - rep.E)}
        for n, H in enumerate(rep.joint_entropies, start=1)
        if n >= model.order
    ]
    return rows, {"model": model.name, "h": rep.h, "E": rep.E, "max_residual": rep.residual}


COMMANDS: dict[str, Callable] = {
    "fisher": cmd_fisher,
    "mse": cmd_mse,
    "gaussian": cmd_gaussian,
    "ising": cmd_ising,
    "nnn": cmd_nnn,
    "markov-order": cmd_markov_order,
    "entropy": cmd_entropy,
}


# ---------------------------------------------------------------------------
# argument parser


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    common = argparse.ArgumentParser(add_help=False, argument_default=S)
    common.add_argument("--seed", type=int, help=f"base seed (default {DEFAULT_SEED})")
    common.add_argument("--out", help="output file (default stdout)")
    common.add_argument("--format", choices=("csv", "json"))
    common.add_argument("--threads", type=int, help="worker threads")
    common.add_argument("--config", help="JSON file mirroring the flags; flags override it")

    parser = argparse.ArgumentParser(prog="fim", parents=[common], argument_default=S,
                                     description="Fisher information of correlated processes.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fisher", parents=[common], argument_default=S, help="rate/excess decomposition")
    p.add_argument("--model", required=True, help="builtin name or JSON model file")
    p.add_argument("--theta")
    p.add_argument("--n", type=int)
    p.add_argument("--scheme", choices=("auto", "analytic", "central"))
    p.add_argument("--richardson", action="store_true")

    p = sub.add_parser("mse", parents=[common], argument_default=S, help="Monte-Carlo MSE vs CRB")
    p.add_argument("--model", required=True)
    p.add_argument("--theta")
    p.add_argument("--estimator", help="comma list of mle, uncorrelated-mle")
    p.add_argument("--replicas", type=int)
    p.add_argument("--grid", help="comma list of trajectory lengths")

    p = sub.add_parser("gaussian", parents=[common], argument_default=S, help="sample mean on a Gaussian chain")
    p.add_argument("--rho")
    p.add_argument("--mu", type=float)
    p.add_argument("--gamma0", type=float)
    p.add_argument("--replicas", type=int)
    p.add_argument("--grid")

    p = sub.add_parser("ising", parents=[common], argument_default=S, help="nearest-neighbour chain thermometry")
    p.add_argument("--mode", choices=("map", "curves", "zero-curve"))
    p.add_argument("--t-min", type=float)
    p.add_argument("--t-max", type=float)
    p.add_argument("--t-points", type=int)
    p.add_argument("--b-over-j")
    p.add_argument("--j", help="coupling(s), comma list")
    p.add_argument("--b", type=float, help="field for --mode curves")

    p = sub.add_parser("nnn", parents=[common], argument_default=S, help="next-to-nearest-neighbour panels")
    p.add_argument("--panel", help="comma list of J=2B, J=-2B, J=0.1B, J=-0.1B")
    p.add_argument("--alpha")
    p.add_argument("--t-min", type=float)
    p.add_argument("--t-max", type=float)
    p.add_argument("--t-points", type=int)
    p.add_argument("--b", type=float)

    p = sub.add_parser("markov-order", parents=[common], argument_default=S, help="measure Markov order")
    p.add_argument("--model")
    p.add_argument("--theta")
    p.add_argument("--max-order", type=int)
    p.add_argument("--probe-depth", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--b", type=float)
    p.add_argument("--j", help="spin-chain couplings J1[,J2..]")
    p.add_argument("--t", type=float)
    p.add_argument("--rho", help="Gaussian covariance check")

    p = sub.add_parser("entropy", parents=[common], argument_default=S, help="entropy rate and excess entropy")
    p.add_argument("--model", required=True)
    p.add_argument("--theta")
    p.add_argument("--n-max", type=int)
    return parser


def resolve_config(ns: argparse.Namespace) -> dict:
    flags = vars(ns).copy()
    command = flags.pop("command")
    file_cfg: dict = {}
    if "config" in flags:
        path = Path(flags.pop("config"))
        if not path.is_file():
            raise ValidationError(f"config file {path} does not exist")
        try:
            file_cfg = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"invalid config file: {exc}") from None
        if not isinstance(file_cfg, dict):
            raise ValidationError("config file must hold a JSON object")
        file_cfg = {k.replace("-", "_"): v for k, v in file_cfg.items()}
    allowed = {**GLOBAL_DEFAULTS, **DEFAULTS[command], "model": None}
    unknown = set(file_cfg) - set(allowed) - {"command"}
    if unknown:
        raise ValidationError(f"unknown config keys for {command}: {sorted(unknown)}")
    cfg = {**allowed, **file_cfg, **flags}
    if int(cfg["seed"]) < 0 or int(cfg["seed"]) >= 2**64:
        raise ValidationError("--seed must be an unsigned 64-bit integer")
    if int(cfg["threads"]) < 1:
        raise ValidationError("--threads must be >= 1")
    return {"command": command, **cfg}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = resolve_config(ns)
        rows, meta = COMMANDS[cfg["command"]](cfg)
        text = render(rows, cfg["format"], {"command": cfg["command"], **meta})
        write_atomic(text, cfg["out"])
    except ValidationError as exc:
        print(f"fim: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"fim: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FimError as exc:
        print(f"fim: error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
