"""Command line interface.

Every subcommand writes a JSON report with a fixed schema version, the fully
resolved configuration and seed, and a single ``generated_at`` timestamp, so
two runs with the same configuration differ only in that field. Exit codes:
0 success, 2 domain or input errors, 3 numeric or optimization failures.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import anomaly, assess, ingest, mvgp, pipeline, predict, simulate, unigp
from .errors import ConfigurationError, DomainError, EvtFluError

SCHEMA_VERSION = "1"
log = logging.getLogger("evtflu")


class _ArgumentError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _ArgumentError(message)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if hasattr(obj, "to_dict"):
        return _jsonable(obj.to_dict())
    return obj


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def write_report(out_dir: Path, command: str, config: dict, results: dict,
                 artifacts: dict | None = None) -> Path:
    report = {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "config": config,
        "results": results,
        "artifacts": artifacts or {},
        "generated_at": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    path = out_dir / f"{command}_report.json"
    _write(path, json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n")
    return path


def _load_config(args) -> pipeline.PipelineConfig:
    values = {}
    if args.config:
        try:
            values = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(values, dict):
            raise ConfigurationError("config file must hold a JSON object")
    overrides = {
        "input_path": args.input, "seed": args.seed, "family": getattr(args, "family", None),
        "kappas": getattr(args, "kappas", None), "n_datasets": getattr(args, "n_datasets", None),
        "n_vectors": getattr(args, "n_vectors", None), "n_jobs": getattr(args, "n_jobs", None),
        "n_starts": getattr(args, "n_starts", None), "refit_starts": getattr(args, "refit_starts", None),
        "end_rule": getattr(args, "end_rule", None), "start_quantile": getattr(args, "start_quantile", None),
        "train_end": getattr(args, "train_end", None),
    }
    values.update({k: v for k, v in overrides.items() if v is not None})
    return pipeline.PipelineConfig.from_mapping(values)


def _load_model(path: str) -> mvgp.MvGpModel:
    try:
        return mvgp.MvGpModel.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
    except (OSError, json.JSONDecodeError) as exc:
        raise DomainError(f"cannot read model {path}: {exc}") from None


# --- subcommands ----------------------------------------------------------------

def cmd_segment(args, cfg, out):
    prep = pipeline.prepare(cfg)
    _write(out / "epidemics.json", ingest.epidemics_to_json(prep.epidemics) + "\n")
    durations = [e.duration for e in prep.epidemics]
    results = {
        "n_weeks": len(prep.series), "first_week": prep.series.labels[0], "last_week": prep.series.labels[-1],
        "start_threshold": prep.start_threshold, "rate_threshold": prep.rate_threshold,
        "size_threshold": prep.size_threshold, "n_epidemics": len(prep.epidemics),
        "n_train_epidemics": int(prep.train_mask.sum()),
        "duration_range": [min(durations), max(durations)] if durations else None,
        "epidemics": [e.to_dict() for e in prep.epidemics],
    }
    return results, {"epidemics": "epidemics.json"}


def cmd_fit_uni(args, cfg, out):
    prep = pipeline.prepare(cfg)
    fits = pipeline.univariate_fits(prep)
    results, artifacts = {}, {}
    for name, entry in fits.items():
        values = prep.matrix("size" if name == "size" else "week3")[:, {"week1": 0, "week2": 1}.get(name, 2)]
        fit = entry["exponential"]
        exc = values[values > fit.threshold] - fit.threshold
        fname = f"qq_{name}.csv"
        _write(out / fname, unigp.qq_to_csv(unigp.qq_plot_data(exc, fit)))
        artifacts[f"qq_{name}"] = fname
        results[name] = {k: v for k, v in entry.items()}
    _write(out / "univariate_fits.json", json.dumps(_jsonable(results), indent=2, sort_keys=True) + "\n")
    artifacts["fits"] = "univariate_fits.json"
    return results, artifacts


def _fits_from_args(args, cfg):
    if args.threshold is not None:
        if args.sigma is None or args.exceed_freq is None:
            raise ConfigurationError("--threshold needs --sigma and --exceed-freq")
        fit = unigp.UnivariateGpFit(args.threshold, args.exceed_freq, args.sigma, 0.0, math.nan,
                                    (math.nan, math.nan), 1, True)
        return {"custom": fit}
    if args.fits:
        raw = json.loads(Path(args.fits).read_text(encoding="utf-8"))
        return {k: unigp.UnivariateGpFit.from_dict(v["exponential"]) for k, v in raw.items()
                if k in ("week3", "size")}
    prep = pipeline.prepare(cfg)
    fits = pipeline.univariate_fits(prep)
    return {k: fits[k]["exponential"] for k in ("week3", "size")}


def cmd_return_levels(args, cfg, out):
    fits = _fits_from_args(args, cfg)
    rows = []
    for name, fit in fits.items():
        for a in args.alpha:
            for n in args.years:
                rows.append({"series": name, "alpha": a, "n": n,
                             "level": unigp.return_level(fit, unigp.ReturnLevelQuery(a, n))})
    return {"levels": rows}, {}


def cmd_fit_mvgp(args, cfg, out):
    prep = pipeline.prepare(cfg)
    fits = pipeline.univariate_fits(prep)
    seed = pipeline.substream_seed(cfg.resolved_seed(), "fit-mvgp")
    results, artifacts = {}, {}
    for target in args.target:
        model, x = pipeline.fit_target(prep, target, cfg.family, n_starts=cfg.n_starts, seed=seed, fits=fits)
        fname = f"{target}_model.json"
        _write(out / fname, json.dumps(_jsonable(model.to_dict()), indent=2, sort_keys=True) + "\n")
        artifacts[f"{target}_model"] = fname
        entry = {"model": model.to_dict(), "aic": model.aic, "bic": model.bic, "n_vectors": int(x.shape[0])}
        if args.select:
            entry["selection"] = [{k: v for k, v in r.items() if k != "model"}
                                  for r in mvgp.model_selection(x, n_starts=cfg.n_starts, seed=seed)]
        if args.ladder:
            entry["ladder"] = [{k: v for k, v in r.items() if k != "model"}
                               for r in mvgp.simplify_ladder(x, cfg.family, n_starts=cfg.n_starts, seed=seed)]
        results[target] = entry
    return results, artifacts


def cmd_predict(args, cfg, out):
    model = _load_model(args.model)
    base = args.base_max if args.base_max is not None else model.meta.get("history_max")
    if base is None:
        raise ConfigurationError("--base-max is required when the model has no history_max")
    below = args.below_prob if args.below_prob is not None else model.meta.get("below_threshold_prob")
    if below is None:
        if args.y1 <= model.thresholds[0] and args.y2 <= model.thresholds[1]:
            raise ConfigurationError("--below-prob is required when y1 and y2 are below their thresholds")
        below = 1.0
    rows = predict.prediction_report(model, args.y1, args.y2, base, cfg.kappas, below)
    _write(out / "predictions.json", json.dumps(_jsonable(rows), indent=2) + "\n")
    return {"y1": args.y1, "y2": args.y2, "base_max": base, "below_threshold_prob": below,
            "predictions": rows}, {"predictions": "predictions.json"}


def cmd_anomaly(args, cfg, out):
    model = _load_model(args.model)
    seed = pipeline.substream_seed(cfg.resolved_seed(), "anomaly")
    sim = simulate.SimulationConfig(seed, cfg.n_vectors, cfg.n_datasets)
    cal = anomaly.calibrate(model, sim, n_starts=cfg.refit_starts, n_jobs=cfg.n_jobs)
    results = {"calibration": cal.to_dict()}
    artifacts = {}
    p1, p2 = anomaly.demo_points(model, seed)
    results["demo_points"] = [{"label": lab, "x": p, **anomaly.test_anomaly(model, cal, p)}
                              for lab, p in (("high_third_component", p1), ("anomalous", p2))]
    if args.x is not None:
        results["test"] = {"x": args.x, **anomaly.test_anomaly(model, cal, np.array(args.x))}
    if args.loo:
        prep = pipeline.prepare(cfg)
        target = model.meta.get("target", "week3")
        rows = prep.matrix(target, train_only=False)
        x_all = mvgp.standardize(rows, model.thresholds, model.scales, keep_all=True)
        keep = x_all.max(axis=1) > 0
        seasons = [f.season for f in prep.features if f.complete or target == "size"]
        loo = anomaly.leave_one_out_nll(x_all[keep], model.family.kind, n_starts=cfg.n_starts,
                                        seed=seed, start=model.family)
        kept_seasons = [s for s, k in zip(seasons, keep) if k]
        for row, season in zip(loo, kept_seasons):
            row["season"] = season
            row["flagged_levels"] = sorted((s for s, c in cal.quantiles.items() if row["nll"] > c), reverse=True)
        results["leave_one_out"] = loo
        _write(out / "loo_nll.csv", anomaly.nll_plot_csv(
            [{"index": r["index"], "nll": r["nll"], "label": r["season"]} for r in loo], cal))
        artifacts["loo_plot"] = "loo_nll.csv"
    return results, artifacts


def cmd_simulate(args, cfg, out):
    model = _load_model(args.model)
    seed = pipeline.substream_seed(cfg.resolved_seed(), "simulate")
    sim = simulate.SimulationConfig(seed, cfg.n_vectors, cfg.n_datasets)
    data = simulate.sample_datasets(model, sim)
    _write(out / "simulated.csv", simulate.datasets_to_csv(data))
    return {"n_datasets": sim.n_datasets, "n_vectors": sim.n_vectors, "stream_seed": seed}, \
        {"datasets": "simulated.csv"}


def cmd_assess(args, cfg, out):
    seed = pipeline.substream_seed(cfg.resolved_seed(), "assess")
    if args.mode == "loo":
        prep = pipeline.prepare(cfg)
        results = {}
        records = []
        for target in args.target:
            rows = prep.matrix(target, train_only=False)
            train_rows = prep.matrix(target)
            base = args.base_max if args.base_max is not None else float(train_rows[:, 2].max())
            levels = predict.levels_from_kappas(base, cfg.kappas)
            res = assess.loo_assess(rows, prep.thresholds(target), levels, cfg.family,
                                    n_starts=cfg.n_starts, seed=seed)
            records += res["records"]
            results[target] = {"base_max": base, "levels": levels, "scores": res["scores"],
                               "skipped": res["skipped"], "failures": res["failures"]}
    else:
        if not args.model:
            raise ConfigurationError("simulation assessment needs --model")
        model = _load_model(args.model)
        base = args.base_max if args.base_max is not None else model.meta.get("history_max")
        if base is None:
            raise ConfigurationError("--base-max is required when the model has no history_max")
        sim = simulate.SimulationConfig(seed, cfg.n_vectors, cfg.n_datasets)
        res = assess.sim_assess(model, sim, base_max=base, kappas=cfg.kappas,
                                n_starts=cfg.refit_starts, n_jobs=cfg.n_jobs)
        records = res["records"]
        results = {"base_max": base, "levels": res["levels"], "scores": res["scores"],
                   "quartiles": res["quartiles"], "n_failed": res["n_failed"],
                   "logistic_fits": res["logistic_fits"]}
    _write(out / "records.csv", assess.records_to_csv(records))
    return results, {"records": "records.csv"}


COMMANDS = {
    "segment": cmd_segment, "fit-uni": cmd_fit_uni, "return-levels": cmd_return_levels,
    "fit-mvgp": cmd_fit_mvgp, "predict": cmd_predict, "anomaly": cmd_anomaly,
    "simulate": cmd_simulate, "assess": cmd_assess,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON configuration file; flags override it")
    common.add_argument("--input", help="weekly incidence CSV")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--seed", type=int, help=f"master seed (fallback: ${pipeline.SEED_ENV}, then 0)")
    common.add_argument("--log-level", default="WARNING")
    common.add_argument("--train-end", help="last ISO week of the training window, e.g. 2018-W52")
    common.add_argument("--end-rule", choices=("serfling", "threshold"))
    common.add_argument("--start-quantile", type=float)

    p = _Parser(prog="evtflu", description="Extreme-value analysis of weekly epidemic series.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("segment", parents=[common], help="segment the series into epidemics")
    sub.add_parser("fit-uni", parents=[common], help="univariate threshold fits")

    rl = sub.add_parser("return-levels", parents=[common], help="return levels from exponential fits")
    rl.add_argument("--alpha", type=float, nargs="+", default=[0.9, 0.99])
    rl.add_argument("--years", type=int, nargs="+", default=[1, 10],
                    help="horizon in independent epidemics (one per year)")
    rl.add_argument("--fits", help="univariate_fits.json from fit-uni")
    rl.add_argument("--threshold", type=float)
    rl.add_argument("--sigma", type=float)
    rl.add_argument("--exceed-freq", type=float)

    fm = sub.add_parser("fit-mvgp", parents=[common], help="fit three-dimensional GP models")
    fm.add_argument("--target", nargs="+", choices=pipeline.TARGETS, default=list(pipeline.TARGETS))
    fm.add_argument("--family", choices=mvgp.FAMILIES)
    fm.add_argument("--n-starts", type=int)
    fm.add_argument("--select", action="store_true", help="also rank all generator families")
    fm.add_argument("--ladder", action="store_true", help="also fit submodels M2-M4")

    pr = sub.add_parser("predict", parents=[common], help="exceedance probabilities for an epidemic")
    pr.add_argument("--model", required=True)
    pr.add_argument("--y1", type=float, required=True)
    pr.add_argument("--y2", type=float, required=True)
    pr.add_argument("--kappas", type=float, nargs="+")
    pr.add_argument("--base-max", type=float)
    pr.add_argument("--below-prob", type=float)

    an = sub.add_parser("anomaly", parents=[common], help="calibrate and apply NLL anomaly cutoffs")
    an.add_argument("--model", required=True)
    an.add_argument("--n-datasets", type=int)
    an.add_argument("--n-vectors", type=int)
    an.add_argument("--n-jobs", type=int)
    an.add_argument("--refit-starts", type=int)
    an.add_argument("--n-starts", type=int)
    an.add_argument("--x", type=float, nargs=3, help="standardized vector to test")
    an.add_argument("--loo", action="store_true", help="leave-one-out NLLs on the input data")

    sm = sub.add_parser("simulate", parents=[common], help="simulate standardized datasets")
    sm.add_argument("--model", required=True)
    sm.add_argument("--n-datasets", type=int)
    sm.add_argument("--n-vectors", type=int)

    asx = sub.add_parser("assess", parents=[common], help="prediction assessment")
    asx.add_argument("--mode", choices=("loo", "sim"), default="loo")
    asx.add_argument("--model", help="true model for --mode sim")
    asx.add_argument("--target", nargs="+", choices=pipeline.TARGETS, default=list(pipeline.TARGETS))
    asx.add_argument("--kappas", type=float, nargs="+")
    asx.add_argument("--base-max", type=float)
    asx.add_argument("--n-datasets", type=int)
    asx.add_argument("--n-vectors", type=int)
    asx.add_argument("--n-jobs", type=int)
    asx.add_argument("--n-starts", type=int)
    asx.add_argument("--refit-starts", type=int)
    asx.add_argument("--family", choices=mvgp.FAMILIES)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _ArgumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args)
        out = Path(args.out)
        results, artifacts = COMMANDS[args.command](args, cfg, out)
        path = write_report(out, args.command, cfg.to_dict(), results, artifacts)
    except EvtFluError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
