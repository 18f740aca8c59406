"""Command-line entry point: simulate, reconcile, evaluate, verify.

Exit codes: 0 ok, 1 verification failure, 2 configuration error, 3 IO error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
from collections import defaultdict
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from . import io as rio
from .basemodels import DEFAULT_MAX_P, fit_panel
from .covariance import diagonal_covariance, sample_covariance, shrink_covariance, user_supplied
from .errors import ConfigError, IncoherentOutput, MisalignedRows, MissingInput, ReconError
from .evaluate import build_report, mc_reports, mse_table, verify_suite
from .hierarchy import DEFAULT_COHERENCE_TOL, HierarchySpec, build_summing_matrix
from .reconcile import (
    TrainingPanel,
    apply,
    coherence_gap,
    g_bottom_up,
    g_emint_u,
    g_erm,
    g_gls,
    g_mint,
    g_ols,
    g_wls,
)
from .simulate import large_design, run_monte_carlo, small_design

CLI_METHODS = ("bu", "ols", "wls", "mint_sample", "mint_shrink", "gls", "erm", "emint_u")
EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3

DESIGN_KEYS = {
    "design": str, "replications": int, "t": list, "rho": list, "seed": int, "correlation_mode": str,
    "max_p": int, "horizons": list, "burn_in": int, "between_eps": float, "negate_fraction": float,
}
DESIGN_DEFAULTS = {
    "design": "small", "t": [101], "rho": [0.0], "correlation_mode": "nonnegative", "max_p": DEFAULT_MAX_P,
    "horizons": [1], "burn_in": 100, "between_eps": 0.1, "negate_fraction": 0.3,
}


def _load_toml(path) -> dict:
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _check_design_types(cfg: dict, where: str) -> dict:
    out = {}
    for key, val in cfg.items():
        if key not in DESIGN_KEYS:
            raise ConfigError(f"{where}: unknown key {key!r}")
        want = DESIGN_KEYS[key]
        if want is list and not isinstance(val, list):
            val = [val]
        if want is float and isinstance(val, int) and not isinstance(val, bool):
            val = float(val)
        if not isinstance(val, want) or isinstance(val, bool):
            raise ConfigError(f"{where}: key {key!r} must be {want.__name__}, got {type(val).__name__}")
        out[key] = val
    for key, kind in (("t", int), ("horizons", int), ("rho", (int, float))):
        if key in out and not all(isinstance(v, kind) and not isinstance(v, bool) for v in out[key]):
            raise ConfigError(f"{where}: every entry of {key!r} must be numeric")
    if "rho" in out:
        out["rho"] = [float(v) for v in out["rho"]]
    return out


def resolve_design(args) -> dict:
    """Defaults, then design-file values, then explicit flags."""
    cfg = dict(DESIGN_DEFAULTS)
    if args.design_file:
        cfg.update(_check_design_types(_load_toml(args.design_file), str(args.design_file)))
    flags = {
        "design": args.design, "replications": args.reps, "t": args.t, "rho": args.rho, "seed": args.seed,
        "correlation_mode": args.correlation, "max_p": args.max_p, "horizons": args.horizons,
        "burn_in": args.burn_in, "between_eps": args.between_eps, "negate_fraction": args.negate_fraction,
    }
    cfg.update(_check_design_types({k: v for k, v in flags.items() if v is not None}, "flags"))
    if "seed" not in cfg:
        raise ConfigError("--seed is required (or 'seed' in the design file)")
    if "replications" not in cfg:
        raise ConfigError("--reps is required (or 'replications' in the design file)")
    if cfg["replications"] < 1:
        raise ConfigError(f"replications must be >= 1, got {cfg['replications']}")
    if cfg["seed"] < 0:
        raise ConfigError("seed must be nonnegative")
    if cfg["design"] not in ("small", "large"):
        raise ConfigError(f"design must be 'small' or 'large', got {cfg['design']!r}")
    if cfg["design"] == "large":
        cfg.pop("rho", None)
    else:
        for key in ("correlation_mode", "between_eps", "negate_fraction"):
            cfg.pop(key, None)
    return cfg


def design_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def build_design(cfg: dict):
    try:
        if cfg["design"] == "small":
            return small_design(cfg["replications"], tuple(cfg["rho"]), tuple(cfg["t"]), cfg["seed"],
                                cfg["max_p"], cfg["burn_in"], tuple(cfg["horizons"]))
        return large_design(cfg["replications"], cfg["correlation_mode"], tuple(cfg["t"]), cfg["seed"],
                            cfg["max_p"], cfg["burn_in"], cfg["between_eps"], cfg["negate_fraction"],
                            tuple(cfg["horizons"]))
    except ValueError as exc:  # includes ReconError subclasses
        raise ConfigError(f"invalid design: {exc}") from exc


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, command: str, cfg: dict, files: Sequence[Path], extra: Optional[dict] = None):
    """Pretty-printed JSON; the ``created`` timestamp sits on its own line."""
    doc = {
        "command": command,
        "config": cfg,
        "design_hash": design_hash(cfg),
        "seed": cfg.get("seed"),
        "version": __version__,
        "outputs": {p.name: _sha(p) for p in files},
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    if extra:
        doc.update(extra)
    return rio.write_atomic(out / "manifest.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")


REPORT_HEADER = ["design_cell", "sample", "method", "scope", "name", "mse", "pri"]
MC_HEADER = ["design_cell", "method", "series", "level", "sample", "sum_sq_err", "count"]


def cmd_simulate(args) -> int:
    cfg = resolve_design(args)
    design = build_design(cfg)
    result = run_monte_carlo(design, threads=args.threads)
    out = Path(args.out)

    report_rows, text = [], []
    for c in range(len(result.cells)):
        if result.completed[c] == 0:
            continue
        for hi in range(len(result.horizons)):
            label = result.cell_label(c, hi)
            for samp, rep in mc_reports(result, c, hi).items():
                report_rows.extend(rep.tidy_rows(label))
                text.append(rep.text_table(f"[{label}] replications={int(result.completed[c])}"))
    files = [
        rio.write_table(out / "mc_results.csv", MC_HEADER, result.tidy_rows()),
        rio.write_table(out / "report.csv", REPORT_HEADER, report_rows),
        rio.write_atomic(out / "report.txt", "\n".join(text)),
    ]
    skips = {result.cells[c]: dict(sorted(result.skips[c].items())) for c in range(len(result.cells))}
    write_manifest(out, "simulate", cfg, files,
                   {"completed": {result.cells[c]: int(result.completed[c]) for c in range(len(result.cells))},
                    "skipped": skips})
    sys.stdout.write("\n".join(text))
    if not np.all(result.completed):
        print("warning: some design cells completed no replications", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------------
# reconcile
# ---------------------------------------------------------------------------

def _read_aligned(path, s, what: str):
    labels, t_index, data, _ = rio.read_panel(path)
    return t_index, rio.align_panel(labels, data, s.labels, f"{what} {path}")


def _cov_for(method: str, s, args, residuals, cov_file):
    if method == "wls":
        if residuals is not None:
            return diagonal_covariance(residuals), "diagonal"
        if cov_file is not None:
            return np.diag(np.diag(cov_file)), "user_supplied(diagonal)"
        raise MissingInput("wls needs --residuals or --cov-file")
    if method == "mint_sample":
        if residuals is not None:
            return sample_covariance(residuals), "sample"
        if cov_file is not None:
            return user_supplied(cov_file), "user_supplied"
        raise MissingInput("mint_sample needs --residuals or --cov-file")
    if method == "mint_shrink":
        if residuals is None:
            raise MissingInput("mint_shrink needs --residuals")
        est = shrink_covariance(residuals)
        return est, f"shrink(lambda={est.shrink_lambda!r})"
    if method == "gls":
        if cov_file is None:
            raise MissingInput("gls needs --cov-file (coherence-error covariance)")
        return cov_file, "user_supplied(Sigma)"
    raise AssertionError(method)


def _training_panel(method: str, s, actuals, fitted, h: int):
    if actuals is None or fitted is None:
        flags = "--actuals and --fitted" if method == "erm" else "--actuals and --fitted (or --history)"
        raise MissingInput(f"{method} needs {flags}")
    (t_a, y), (t_f, yh) = actuals, fitted
    if list(t_a) != list(t_f):
        raise MisalignedRows(f"{method}: actuals and fitted panels have different 't' columns")
    alignment = "holdout" if method == "erm" else "insample"
    return TrainingPanel.from_actuals(y, yh, s, alignment, t1=0 if method == "erm" else None, h=h)


def cmd_reconcile(args) -> int:
    s = build_summing_matrix(HierarchySpec.read(args.hierarchy))
    methods = list(dict.fromkeys(args.method))
    h = args.h
    base = _read_aligned(args.base, s, "base") if args.base else None
    residuals = _read_aligned(args.residuals, s, "residuals")[1] if args.residuals else None
    cov_file = rio.read_covariance(args.cov_file, s.labels) if args.cov_file else None
    actuals = _read_aligned(args.actuals, s, "actuals") if args.actuals else None
    fitted = _read_aligned(args.fitted, s, "fitted") if args.fitted else None

    extra_files = {}
    if args.history:
        t_hist, y_hist = _read_aligned(args.history, s, "history")
        fp = fit_panel(y_hist, args.max_p, h, s.labels)
        fp1 = fp if h == 1 else fit_panel(y_hist, args.max_p, 1, s.labels)
        if base is None:
            base = ([f"h={k}" for k in range(1, h + 1)], fp.base)
        if residuals is None:
            residuals = fp1.residuals
        if actuals is None and fitted is None:
            t_fit = list(t_hist[fp.start:])
            actuals, fitted = (t_fit, y_hist[fp.start:]), (t_fit, fp.fitted)
        extra_files["models.csv"] = (fp.models, [f"AR fits, max_p={args.max_p}"])
    if base is None:
        raise MissingInput("reconcile needs --base or --history")
    t_base, yhat = base

    # build everything before touching the output directory
    outputs = []
    for method in methods:
        note = "none"
        if method == "bu":
            rmap = g_bottom_up(s)
        elif method == "ols":
            rmap = g_ols(s)
        elif method in ("wls", "mint_sample", "mint_shrink", "gls"):
            cov, note = _cov_for(method, s, args, residuals, cov_file)
            if method == "wls":
                rmap = g_wls(s, cov)
            elif method == "gls":
                rmap = g_gls(s, cov)
            else:
                rmap = g_mint(s, cov)
        else:
            panel = _training_panel(method, s, actuals, fitted, h)
            rmap = g_erm(panel) if method == "erm" else g_emint_u(panel)
            note = f"{panel.alignment} panel, {panel.rows} rows"
        rec = apply(rmap, s, yhat)
        gap = coherence_gap(s, rec)
        if gap > DEFAULT_COHERENCE_TOL * max(1.0, float(np.abs(rec).max(initial=0.0))):
            raise IncoherentOutput(f"{method}: reconciled output violates coherence by {gap:.3g}")
        comments = [f"method: {method}", f"covariance: {note}", f"h: {h}"]
        outputs.append((method, rmap, rec, comments))

    out = Path(args.out)
    files = []
    for method, rmap, rec, comments in outputs:
        files.append(rio.write_panel(out / f"reconciled_{method}.csv", s.labels, rec, t_base, comments))
        files.append(rio.write_matrix(out / f"G_{method}.csv", s.bottom_labels, s.labels, rmap.g, "node", comments))
    for name, (models, comments) in extra_files.items():
        files.append(rio.write_models(out / name, models, comments))
    cfg = {"methods": methods, "h": h, "max_p": args.max_p,
           "inputs": {k: (Path(v).name if v else None) for k, v in
                      (("hierarchy", args.hierarchy), ("base", args.base), ("residuals", args.residuals),
                       ("cov_file", args.cov_file), ("actuals", args.actuals), ("fitted", args.fitted),
                       ("history", args.history))}}
    write_manifest(out, "reconcile", cfg, files)
    print(f"wrote {len(files)} files to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

def _reports_from_mc_csv(path):
    header, rows, _ = rio.read_rows(path)
    if header != MC_HEADER:
        raise ConfigError(f"{path}: expected header {MC_HEADER}")
    sums = defaultdict(dict)  # (cell, sample) -> method -> {series: mse}
    series_order, level_of = [], {}
    for i, row in enumerate(rows, start=2):
        if len(row) != len(MC_HEADER):
            raise ConfigError(f"{path}: line {i} has {len(row)} fields")
        cell, meth, ser, lev, samp, sse, cnt = row
        try:
            val = float(sse) / int(cnt)
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"{path}: line {i}: {exc}") from exc
        if ser not in level_of:
            series_order.append(ser)
            level_of[ser] = lev
        sums[(cell, samp)].setdefault(meth, {})[ser] = val
    levels = [level_of[x] for x in series_order]
    out = []
    for (cell, samp), by_method in sums.items():
        mse = {m: [v[x] for x in series_order] for m, v in by_method.items()}
        out.append((cell, build_report(mse, series_order, levels, "base", samp)))
    return out


def _reports_from_forecasts(args):
    if not (args.hierarchy and args.actuals and args.forecast):
        raise MissingInput("evaluate needs --results, or --hierarchy with --actuals and --forecast NAME=PATH")
    s = build_summing_matrix(HierarchySpec.read(args.hierarchy))
    t_a, y = _read_aligned(args.actuals, s, "actuals")
    mse = {}
    for item in args.forecast:
        name, sep, path = item.partition("=")
        if not sep or not name or not path:
            raise ConfigError(f"--forecast expects NAME=PATH, got {item!r}")
        t_f, yhat = _read_aligned(path, s, "forecast")
        if list(t_f) != list(t_a):
            raise MisalignedRows(f"forecast {name!r} rows do not match the actuals 't' column")
        mse[name] = mse_table(y, yhat)
    ref = args.reference or next(iter(mse))
    return [("", build_report(mse, s.labels, s.levels, ref, "outofsample"))]


def cmd_evaluate(args) -> int:
    reports = _reports_from_mc_csv(args.results) if args.results else _reports_from_forecasts(args)
    rows, text = [], []
    for cell, rep in reports:
        rows.extend(rep.tidy_rows(cell))
        text.append(rep.text_table(f"[{cell}]" if cell else ""))
    out = Path(args.out)
    files = [rio.write_table(out / "report.csv", REPORT_HEADER, rows),
             rio.write_atomic(out / "report.txt", "\n".join(text))]
    write_manifest(out, "evaluate", {"results": Path(args.results).name if args.results else None,
                                     "reference": args.reference}, files)
    sys.stdout.write("\n".join(text))
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------

def cmd_verify(args) -> int:
    lines = verify_suite(args.seed, args.instances, args.break_tolerance, args.remark2_reps)
    text = "".join(line.render() + "\n" for line in lines)
    ok = all(line.passed for line in lines)
    text += ("all checks passed\n" if ok else "one or more checks FAILED\n")
    sys.stdout.write(text)
    if args.out:
        out = Path(args.out)
        f = rio.write_atomic(out / "verify_report.txt", text)
        write_manifest(out, "verify", {"seed": args.seed, "instances": args.instances,
                                       "break_tolerance": args.break_tolerance,
                                       "remark2_reps": args.remark2_reps}, [f])
    return EXIT_OK if ok else EXIT_VERIFY


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hts-recon", description="Forecast reconciliation for hierarchical time series.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sp = sub.add_parser("simulate", help="run a Monte Carlo design")
    sp.add_argument("--design", choices=("small", "large"))
    sp.add_argument("--rho", type=float, nargs="+")
    sp.add_argument("--t", type=int, nargs="+", help="sample size(s) including the test rows")
    sp.add_argument("--reps", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--correlation", choices=("nonnegative", "mixed"))
    sp.add_argument("--max-p", type=int)
    sp.add_argument("--horizons", type=int, nargs="+")
    sp.add_argument("--burn-in", type=int)
    sp.add_argument("--between-eps", type=float)
    sp.add_argument("--negate-fraction", type=float)
    sp.add_argument("--design-file", help="TOML file with design keys; flags override it")
    sp.add_argument("--threads", type=int, help="worker threads (default: RECON_THREADS or 1)")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_simulate)

    rp = sub.add_parser("reconcile", help="reconcile base forecasts")
    rp.add_argument("--hierarchy", required=True)
    rp.add_argument("--method", nargs="+", choices=CLI_METHODS, required=True)
    rp.add_argument("--base", help="base forecasts CSV")
    rp.add_argument("--residuals", help="in-sample residuals CSV (wls, mint_sample, mint_shrink)")
    rp.add_argument("--cov-file", help="covariance CSV (wls, mint_sample, gls)")
    rp.add_argument("--actuals", help="actuals CSV aligned with --fitted (erm, emint_u)")
    rp.add_argument("--fitted", help="fitted values or holdout forecasts CSV (erm, emint_u)")
    rp.add_argument("--history", help="history CSV; fits AR base models to supply missing inputs")
    rp.add_argument("--max-p", type=int, default=DEFAULT_MAX_P)
    rp.add_argument("--h", type=int, default=1)
    rp.add_argument("--out", required=True)
    rp.set_defaults(func=cmd_reconcile)

    ep = sub.add_parser("evaluate", help="build accuracy tables")
    ep.add_argument("--results", help="mc_results.csv from simulate")
    ep.add_argument("--hierarchy")
    ep.add_argument("--actuals")
    ep.add_argument("--forecast", action="append", help="NAME=PATH, repeatable")
    ep.add_argument("--reference", help="reference method (default: base / first forecast)")
    ep.add_argument("--out", required=True)
    ep.set_defaults(func=cmd_evaluate)

    vp = sub.add_parser("verify", help="check the reconciliation theorems on random instances")
    vp.add_argument("--seed", type=int, required=True)
    vp.add_argument("--instances", type=int, default=100)
    vp.add_argument("--remark2-reps", type=int, default=20)
    vp.add_argument("--break-tolerance", type=float, default=None,
                    help="debug: override every check tolerance (0 should fail)")
    vp.add_argument("--out")
    vp.set_defaults(func=cmd_verify)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if getattr(args, "instances", 1) < 1 or getattr(args, "remark2_reps", 1) < 1:
            raise ConfigError("--instances and --remark2-reps must be >= 1")
        if getattr(args, "h", 1) < 1:
            raise ConfigError("--h must be >= 1")
        return args.func(args)
    except IncoherentOutput as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except (ReconError, ValueError) as exc:
        print(f"config error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
