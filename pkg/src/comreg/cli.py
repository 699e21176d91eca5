"""Command-line interface for COM-Poisson regression runs.

Subcommands: fit, test, bootstrap, diagnose, compare, simulate.  Reports
are emitted as JSON (schema: schemas/report-v1.json) or plain text.
Exit codes: 0 success, 1 statistical/convergence failure, 2 usage or
I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from . import baselines, diag, dist, fit, infer
from .data import DataError, Dataset, linear_predictor, load_csv

EXIT_OK = 0
EXIT_STAT = 1
EXIT_IO = 2


class CliError(Exception):
    def __init__(self, message: str, exit_code: int):
        super().__init__(message)
        self.exit_code = exit_code


def _parse_transforms(pairs):
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise CliError(f"bad --transform {item!r}; expected column=log|identity", EXIT_IO)
        name, tag = item.split("=", 1)
        out[name.strip()] = tag.strip()
    return out


def _load(args) -> Dataset:
    try:
        return load_csv(
            args.data,
            response=args.response,
            transforms=_parse_transforms(getattr(args, "transform", None)),
        )
    except FileNotFoundError as exc:
        raise CliError(f"input file not found: {exc}", EXIT_IO) from exc
    except DataError as exc:
        raise CliError(str(exc), EXIT_IO) from exc


def _emit(args, payload: dict, text: str) -> None:
    if args.format == "json":
        rendered = json.dumps(payload, indent=2, sort_keys=True)
    else:
        rendered = text
    if getattr(args, "output", None):
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(rendered + "\n")
    else:
        print(rendered)


def _aicc_json(value: float):
    return "inf" if np.isinf(value) else value


def _com_report(ds: Dataset, fr: fit.FitResult) -> dict:
    aic, aicc = baselines.information_criteria(fr.loglik, fr.n_params, ds.n_obs)
    se = fr.se
    coeffs = [
        {
            "name": name,
            "estimate": float(b),
            "se": float(se[j]) if np.isfinite(se[j]) else None,
            "scaled_estimate": float(b / fr.nu),
        }
        for j, (name, b) in enumerate(zip(ds.names, fr.beta))
    ]
    return {
        "model": "com-poisson",
        "coefficients": coeffs,
        "scaled_note": "scaled_estimate = estimate / nu, for crude comparison "
                       "with Poisson-scale coefficients",
        "nu": {
            "estimate": float(fr.nu),
            "se": float(se[-1]) if np.isfinite(se[-1]) and not fr.boundary else None,
            "boundary": bool(fr.boundary),
        },
        "loglik": float(fr.loglik),
        "aic": float(aic),
        "aicc": _aicc_json(aicc),
        "converged": bool(fr.converged),
        "iterations": int(fr.iterations),
        "errors": [],
    }


def _baseline_report(ds: Dataset, bf: baselines.BaselineFit) -> dict:
    aic, aicc = baselines.information_criteria(bf.loglik, bf.n_params, ds.n_obs)
    se = bf.se
    coeffs = [
        {
            "name": name,
            "estimate": float(b),
            "se": float(se[j]) if np.isfinite(se[j]) else None,
        }
        for j, (name, b) in enumerate(zip(ds.names, bf.beta))
    ]
    report = {
        "model": bf.model_kind,
        "coefficients": coeffs,
        "loglik": float(bf.loglik),
        "aic": float(aic),
        "aicc": _aicc_json(aicc),
        "converged": bool(bf.converged),
        "errors": [],
    }
    if bf.extra is not None:
        key = "r" if bf.model_kind == "negbin" else "alpha"
        report[key] = {
            "estimate": float(bf.extra),
            "se": float(bf.extra_se) if bf.extra_se is not None else None,
            "boundary": bool(bf.boundary),
        }
    return report


def _coef_text(report: dict) -> str:
    # estimate (SE) per cell, paper-table style
    lines = [f"model: {report['model']}"]
    for c in report["coefficients"]:
        se = "-" if c.get("se") is None else f"{c['se']:.4f}"
        lines.append(f"  {c['name']:<12} {c['estimate']:10.4f} ({se})")
    for key in ("nu", "r", "alpha"):
        if key in report and isinstance(report[key], dict):
            blk = report[key]
            se = "-" if blk.get("se") is None else f"{blk['se']:.4f}"
            flag = "  [boundary]" if blk.get("boundary") else ""
            lines.append(f"  {key:<12} {blk['estimate']:10.4f} ({se}){flag}")
    lines.append(f"  loglik {report['loglik']:.4f}  AICc {report['aicc']}")
    return "\n".join(lines)


def cmd_fit(args) -> int:
    ds = _load(args)
    try:
        if args.model == "com":
            fr = fit.fit_com(ds)
            if not fr.converged:
                raise CliError("COM-Poisson fit did not converge", EXIT_STAT)
            report = _com_report(ds, fr)
        elif args.model == "poisson":
            report = _baseline_report(ds, baselines.fit_poisson(ds))
        elif args.model == "negbin":
            report = _baseline_report(ds, baselines.fit_negbin(ds))
        elif args.model == "logistic":
            report = _baseline_report(ds, baselines.fit_logistic(ds))
        elif args.model == "rgpr":
            report = _baseline_report(ds, baselines.fit_rgpr(ds))
        else:
            raise CliError(f"unknown model {args.model!r}", EXIT_IO)
    except baselines.BaselineError as exc:
        raise CliError(str(exc), EXIT_STAT) from exc
    except (fit.FitError, dist.TruncationError) as exc:
        raise CliError(str(exc), EXIT_STAT) from exc
    _emit(args, report, _coef_text(report))
    return EXIT_OK


def cmd_test(args) -> int:
    ds = _load(args)
    try:
        res = infer.dispersion_test(
            ds,
            bootstrap_calibrate=args.bootstrap_calibrate,
            n_boot=args.n_boot,
            seed=args.seed,
        )
    except (fit.FitError, baselines.BaselineError) as exc:
        raise CliError(str(exc), EXIT_STAT) from exc
    payload = {
        "model": "dispersion-test",
        "statistic": res.statistic,
        "df": res.df,
        "p_value": res.p_value,
        "loglik_null": res.loglik_null,
        "loglik_alt": res.loglik_alt,
        "boundary_warning": res.boundary_warning,
        "bootstrap_p_value": res.bootstrap_p_value,
        "errors": [],
    }
    text = (
        f"dispersion test (H0: nu = 1)\n"
        f"  C = {res.statistic:.4f}  df = {res.df}  p = {res.p_value:.6g}\n"
        f"  loglik: null {res.loglik_null:.4f}, alternative {res.loglik_alt:.4f}"
    )
    if res.bootstrap_p_value is not None:
        text += f"\n  bootstrap-calibrated p = {res.bootstrap_p_value:.6g}"
    _emit(args, payload, text)
    return EXIT_OK


def cmd_bootstrap(args) -> int:
    ds = _load(args)
    try:
        fr = fit.fit_com(ds)
        if not fr.converged:
            raise CliError("COM-Poisson fit did not converge", EXIT_STAT)
        boot = infer.parametric_bootstrap(
            ds, fr, n_boot=args.n_boot, ci_level=args.ci, seed=args.seed
        )
    except (fit.FitError, baselines.BaselineError) as exc:
        raise CliError(str(exc), EXIT_STAT) from exc
    payload = {
        "model": "com-poisson-bootstrap",
        "n_boot": boot.n_boot,
        "seed": boot.seed,
        "ci_level": boot.ci_level,
        "n_failed": boot.n_failed,
        "unreliable": boot.unreliable,
        "intervals": {k: list(v) for k, v in boot.intervals.items()},
        "errors": [],
    }
    lines = [
        f"parametric bootstrap: {boot.n_boot} replicates, seed {boot.seed}, "
        f"{boot.n_failed} failed"
    ]
    for name, (lo, hi) in boot.intervals.items():
        lines.append(f"  {name:<12} {100 * boot.ci_level:.0f}% CI ({lo:.4f}, {hi:.4f})")
    _emit(args, payload, "\n".join(lines))
    return EXIT_OK


def cmd_diagnose(args) -> int:
    ds = _load(args)
    try:
        fr = fit.fit_com(ds)
        if not fr.converged:
            raise CliError("COM-Poisson fit did not converge", EXIT_STAT)
        report = diag.diagnostics_report(ds, fr, deviance_kind=args.deviance)
    except (fit.FitError, baselines.BaselineError, np.linalg.LinAlgError) as exc:
        raise CliError(str(exc), EXIT_STAT) from exc
    payload = {"model": "com-poisson-diagnostics", "errors": []}
    body = report.to_dict()
    # observation numbers are reported 1-based
    body["flagged_leverage"] = [i + 1 for i in report.flagged_leverage]
    body["flagged_residual"] = [i + 1 for i in report.flagged_residual]
    payload["diagnostics"] = body
    lines = [
        "obs  leverage  pearson  deviance",
    ]
    for i in range(ds.n_obs):
        lines.append(
            f"{i + 1:>3}  {report.leverage[i]:8.4f}  {report.pearson[i]:7.3f}  "
            f"{report.deviance[i]:8.3f}"
        )
    lines.append(f"flagged leverage (obs): {body['flagged_leverage']}")
    lines.append(f"flagged residuals (obs): {body['flagged_residual']}")
    _emit(args, payload, "\n".join(lines))
    return EXIT_OK


def cmd_compare(args) -> int:
    ds = _load(args)
    models = args.models.split(",")
    fits: dict = {}
    fitted: dict = {}
    for name in models:
        name = name.strip()
        try:
            if name == "com":
                fr = fit.fit_com(ds)
                if not fr.converged:
                    raise baselines.NonConvergenceError("COM-Poisson fit did not converge")
                fits["com-poisson"] = fr
                lam = np.exp(linear_predictor(ds, fr.beta))
                valid = all(dist.approx_mean_valid(l, fr.nu) for l in lam)
                kind = "mean_approx" if (args.fitted == "mean" and valid) else "median"
                fitted["com-poisson"] = fit.fitted_values(ds, fr, kind=kind)
            elif name == "poisson":
                bf = baselines.fit_poisson(ds)
                fits["poisson"] = bf
                fitted["poisson"] = np.exp(linear_predictor(ds, bf.beta))
            elif name == "negbin":
                bf = baselines.fit_negbin(ds)
                fits["negbin"] = bf
                fitted["negbin"] = np.exp(linear_predictor(ds, bf.beta))
            elif name == "rgpr":
                bf = baselines.fit_rgpr(ds)
                fits["rgpr"] = bf
                mu = np.exp(linear_predictor(ds, bf.beta))
                fitted["rgpr"] = mu
            elif name == "logistic":
                bf = baselines.fit_logistic(ds)
                fits["logistic"] = bf
                from scipy.special import expit

                fitted["logistic"] = expit(linear_predictor(ds, bf.beta))
            else:
                raise CliError(f"unknown model {name!r} in --models", EXIT_IO)
        except baselines.BaselineError as exc:
            fits[name if name != "com" else "com-poisson"] = exc
    comp = baselines.compare_models(ds, fits, fitted)
    rows_json = []
    lines = [f"{'model':<14} {'loglik':>10} {'k':>3} {'AIC':>9} {'AICc':>9} {'MSE':>8}  status"]
    for row in comp.rows:
        rows_json.append(
            {
                "model": row.model,
                "status": row.status,
                "loglik": row.loglik,
                "k": row.k,
                "aic": row.aic,
                "aicc": None if row.aicc is None else _aicc_json(row.aicc),
                "mse": row.mse,
                "note": row.note,
            }
        )
        if row.status == "ok":
            mse = "-" if row.mse is None else f"{row.mse:8.3f}"
            lines.append(
                f"{row.model:<14} {row.loglik:10.4f} {row.k:>3} {row.aic:9.3f} "
                f"{row.aicc:9.3f} {mse}  ok"
            )
        else:
            lines.append(f"{row.model:<14} {'-':>10} {'-':>3} {'-':>9} {'-':>9} {'-':>8}  {row.status}")
    payload = {"model": "comparison", "rows": rows_json, "errors": []}
    _emit(args, payload, "\n".join(lines))
    return EXIT_OK


def cmd_simulate(args) -> int:
    beta = np.asarray([float(b) for b in args.beta.split(",")], dtype=float)
    nu = args.nu
    if nu < 0:
        raise CliError("nu must be nonnegative", EXIT_IO)
    rng = np.random.default_rng(args.seed)
    n_cov = len(beta) - 1
    X = np.column_stack(
        [np.ones(args.n)]
        + [rng.uniform(args.x_min, args.x_max, size=args.n) for _ in range(n_cov)]
    )
    lam = np.exp(X @ beta)
    if nu == 0 and np.any(lam >= 1):
        raise CliError("nu=0 requires every lambda_i < 1 for the simulated design", EXIT_IO)
    try:
        y = dist.sample_many(lam, nu, rng)
    except dist.TruncationError as exc:
        raise CliError(str(exc), EXIT_STAT) from exc
    header = ["y"] + [f"x{j + 1}" for j in range(n_cov)]
    with open(args.output, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(args.n):
            writer.writerow([int(y[i]), *(repr(float(v)) for v in X[i, 1:])])
    print(f"wrote {args.n} rows to {args.output}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="comreg", description="COM-Poisson regression toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_data_args(p):
        p.add_argument("--data", required=True, help="input CSV path")
        p.add_argument("--response", required=True, help="response column name")
        p.add_argument("--transform", action="append", metavar="COL=TAG",
                       help="per-column transform, e.g. flow1=log")
        p.add_argument("--format", choices=["json", "text"], default="json")
        p.add_argument("--output", help="write report to this path instead of stdout")

    p = sub.add_parser("fit", help="fit one regression model")
    add_data_args(p)
    p.add_argument("--model", choices=["com", "poisson", "negbin", "logistic", "rgpr"],
                   default="com")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("test", help="dispersion likelihood-ratio test")
    add_data_args(p)
    p.add_argument("--bootstrap-calibrate", action="store_true",
                   help="also report a bootstrap-calibrated p-value")
    p.add_argument("--n-boot", type=int, default=500)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("bootstrap", help="parametric bootstrap for the COM-Poisson fit")
    add_data_args(p)
    p.add_argument("--n-boot", type=int, default=1000)
    p.add_argument("--ci", type=float, default=0.90)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_bootstrap)

    p = sub.add_parser("diagnose", help="leverage and residual diagnostics")
    add_data_args(p)
    p.add_argument("--deviance", choices=["exact", "approx"], default="exact")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("compare", help="side-by-side model comparison")
    add_data_args(p)
    p.add_argument("--models", default="com,poisson,negbin,rgpr",
                   help="comma-separated model list")
    p.add_argument("--fitted", choices=["mean", "median"], default="median",
                   help="fitted-value kind for the COM-Poisson MSE")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("simulate", help="write a simulated COM-Poisson dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--beta", required=True, help="comma-separated true coefficients "
                   "(intercept first)")
    p.add_argument("--nu", type=float, required=True)
    p.add_argument("--x-min", type=float, default=0.0)
    p.add_argument("--x-max", type=float, default=1.0)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_simulate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        if getattr(args, "format", "text") == "json":
            print(json.dumps({"errors": [{"message": str(exc)}]}, indent=2))
        else:
            print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
