"""Command-line entry point: preprocess, simulate, fit, evaluate, summarize, diagnose."""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .core import ConfigError, NumericalError, SeriesError, read_series_csv, write_series_csv
from .evaluate import (activity_summaries, chain_diagnostics, improvement,
                       interval_summary, simulation_metrics)
from .preprocess import preprocess, read_minutes_csv
from .runconfig import RunConfig, derive_seed, load_config
from .sampler import fit
from .simulate import make_dataset, read_scenarios, read_truth, write_dataset
from .storage import read_draws, write_draws

log = logging.getLogger("pahmm")

TIDY_HEADER = ("patient", "model", "metric", "draw", "value")


class CommandError(Exception):
    """Reported on stderr with exit status 2."""


# ---------------------------------------------------------------- helpers


def _require_file(path: Path, what: str) -> Path:
    if not path.is_file():
        raise CommandError(f"{what} not found: {path}")
    return path


def _writable_dir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CommandError(f"cannot create {path}: {exc.strerror}") from None
    return path


def _master_seed(args, cfg: RunConfig) -> int:
    return cfg.model.seed if args.seed is None else args.seed


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_tidy(rows, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TIDY_HEADER)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def read_tidy(path: Path) -> list[tuple]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != TIDY_HEADER:
            raise CommandError(f"{path}: expected header {','.join(TIDY_HEADER)}")
        return [(p, m, k, int(d), float(v)) for p, m, k, d, v in reader]


def aligned_table(header, rows) -> str:
    cells = [list(map(str, header))] + [[str(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = []
    for n, r in enumerate(cells):
        lines.append("  ".join(c.rjust(w) if n and i else c.ljust(w)
                               for i, (c, w) in enumerate(zip(r, widths))).rstrip())
        if n == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _interval_cell(values, digits: int = 3) -> str:
    s = interval_summary(values)
    return f"{s['median']:.{digits}g} [{s['lower']:.{digits}g}, {s['upper']:.{digits}g}]"


# ---------------------------------------------------------------- preprocess


def cmd_preprocess(args, cfg: RunConfig) -> int:
    src = _require_file(Path(args.input), "input")
    out = Path(args.output)
    _writable_dir(out.parent)
    minutes = read_minutes_csv(src)
    series, report = preprocess(
        minutes,
        window_len=cfg.get("window_len", 90),
        spike_tolerance=cfg.get("spike_tolerance", 2),
        min_hours=cfg.get("min_hours", 5.0),
        min_days=cfg.get("min_days", 30),
        hr_indicates_wear=cfg.get("hr_indicates_wear", False),
        hr_mode=cfg.get("hr_mode", "sum"),
    )
    write_series_csv(series, out)
    report_path = Path(args.report) if args.report else out.with_suffix(".report.txt")
    lines = report.lines() + [f"empty = {report.empty}"]
    report_path.write_text("\n".join(lines) + "\n")
    status = "eligible" if report.eligible else "ineligible"
    print(f"{src.name}: {report.days_retained}/{report.days_total} days retained, {status}")
    return 0


# ---------------------------------------------------------------- simulate


def _simulate_one(job):
    sc, seed, out_dir = job
    ds = make_dataset(sc, np.random.default_rng(seed))
    write_dataset(ds, out_dir)
    return sc.name, ds.series.missing_rate


def cmd_simulate(args, cfg: RunConfig) -> int:
    scen = read_scenarios(_require_file(Path(args.scenarios), "scenario file"))
    root = _writable_dir(Path(args.out_dir))
    master = _master_seed(args, cfg)
    jobs = [(sc, derive_seed(master, "simulate", sc.seed), root / sc.name) for sc in scen]
    names = [j[2].name for j in jobs]
    if len(set(names)) != len(names):
        raise CommandError("scenario records produce duplicate directory names")
    for name, rate in _map(_simulate_one, jobs, args.jobs):
        print(f"{name}: missing rate {rate:.3f}")
    return 0


# ---------------------------------------------------------------- fit


def _fit_one(job):
    data_path, out_path, config, model, seed, quiet = job
    series = read_series_csv(data_path)
    config = config.with_(seed=seed)

    def progress(it, total, elapsed):
        if not quiet:
            rate = it / elapsed if elapsed > 0 else float("inf")
            print(f"{Path(data_path).name} {model}: sweep {it}/{total} ({rate:.0f} sweeps/s)",
                  file=sys.stderr, flush=True)

    draws = fit(series, config, model=model, progress=progress)
    draws.meta["source"] = Path(data_path).name
    write_draws(draws, out_path)
    return str(out_path), len(draws)


def cmd_fit(args, cfg: RunConfig) -> int:
    model = args.model or cfg.get("model", "nhmm")
    if model not in ("nhmm", "hmm"):
        raise ConfigError(f"model: expected nhmm or hmm, got {model!r}")
    data = [_require_file(Path(p), "data file") for p in args.data]
    out = Path(args.out)
    if len(data) == 1 and out.suffix == ".ndjson":
        targets = [out]
        _writable_dir(out.parent)
    else:
        _writable_dir(out)
        targets = [out / f"{p.stem}.{model}.ndjson" for p in data]
    master = _master_seed(args, cfg)
    jobs = [(str(p), t, cfg.model, model, derive_seed(master, f"fit:{model}", i), args.quiet)
            for i, (p, t) in enumerate(zip(data, targets))]
    for path, n in _map(_fit_one, jobs, args.jobs):
        print(f"wrote {n} draws to {path}")
    return 0


# ---------------------------------------------------------------- evaluate


def cmd_evaluate(args, cfg: RunConfig) -> int:
    truth_dir = Path(args.truth)
    _require_file(truth_dir / "truth.json", "truth metadata")
    series = read_series_csv(_require_file(truth_dir / "data.csv", "dataset"))
    truth = read_truth(truth_dir)
    patient = args.patient or truth_dir.name
    rows = []
    for p in args.draws:
        draws = read_draws(_require_file(Path(p), "draw file"))
        if draws.z.shape[1] != series.T + 1:
            raise CommandError(f"{p}: draws cover {draws.z.shape[1] - 1} rows, data has {series.T}")
        rows_true = truth["artificial_rows"]
        metrics = simulation_metrics(draws, series.timestamps, truth["z_true"], truth["Q_true"],
                                     rows_true, truth["y_complete"][rows_true],
                                     channels=series.channels)
        for name, values in metrics.items():
            for s, v in enumerate(values):
                rows.append((patient, draws.model, name, s, float(v)))
    out = Path(args.out)
    _writable_dir(out.parent)
    write_tidy(rows, out)
    print(f"wrote {len(rows)} metric rows to {out}")
    return 0


# ---------------------------------------------------------------- summarize


def _comparison_rows(tidy):
    """Median and 90% interval per model plus the paired improvement."""
    by = {}
    for patient, model, metric, draw, value in tidy:
        by.setdefault((patient, metric), {}).setdefault(model, {})[draw] = value
    out = []
    for (patient, metric), models in sorted(by.items()):
        vals = {m: np.array([d[k] for k in sorted(d)]) for m, d in models.items()}
        cells = [patient, metric]
        for m in ("hmm", "nhmm"):
            cells.append(_interval_cell(vals[m]) if m in vals else "-")
        if "hmm" in vals and "nhmm" in vals:
            cells.append(_interval_cell(improvement(vals["hmm"], vals["nhmm"], metric)))
        else:
            cells.append("-")
        out.append(cells)
    return out


def cmd_summarize(args, cfg: RunConfig) -> int:
    text = []
    tidy_out = []
    if args.metrics:
        tidy = []
        for p in args.metrics:
            tidy.extend(read_tidy(_require_file(Path(p), "metrics file")))
        text.append(aligned_table(("patient", "metric", "hmm", "nhmm", "nhmm advantage"),
                                  _comparison_rows(tidy)))
    if args.draws:
        if not args.data:
            raise CommandError("--draws requires --data")
        series = read_series_csv(_require_file(Path(args.data), "dataset"))
        night = (cfg.get("night_start", 22), cfg.get("night_end", 8))
        patient = args.patient or Path(args.data).stem
        table = []
        raw_done = False
        for p in args.draws:
            draws = read_draws(_require_file(Path(p), "draw file"))
            summ = activity_summaries(series, draws, night=night)
            if summ.get("undefined"):
                raise CommandError(f"{args.data}: empty series")
            for key in ("avg_daily_steps", "hr_per_minute_daily", "hr_per_minute_pooled",
                        "prob_sedentary", "night_sedentary_bout"):
                vals = summ[key]
                table.append((draws.model, key, _interval_cell(vals, 5)))
                tidy_out.extend((patient, draws.model, key, s, float(v))
                                for s, v in enumerate(vals))
            if not raw_done:
                for key in ("raw_avg_daily_steps", "raw_hr_per_minute_daily",
                            "raw_hr_per_minute_pooled"):
                    table.append(("raw", key[4:], f"{summ[key]:.5g}"))
                    tidy_out.append((patient, "raw", key[4:], 0, summ[key]))
                raw_done = True
        text.append(aligned_table(("model", "summary", "median [90% interval]"), table))
    if not text:
        raise CommandError("nothing to summarize: pass --metrics and/or --draws")
    report = "\n".join(text)
    if args.out:
        out = Path(args.out)
        _writable_dir(out.parent)
        out.write_text(report)
        if tidy_out:
            write_tidy(tidy_out, out.with_suffix(".csv"))
    sys.stdout.write(report)
    return 0


# ---------------------------------------------------------------- diagnose


def cmd_diagnose(args, cfg: RunConfig) -> int:
    rows = []
    for p in args.draws:
        draws = read_draws(_require_file(Path(p), "draw file"))
        diag = chain_diagnostics(draws, min_draws=args.min_draws)
        for name, ess in diag["ess"].items():
            flag = "degenerate" if name in diag["degenerate"] else ""
            mean = float(np.mean(diag["traces"][name]))
            rows.append((Path(p).name, name, f"{mean:.5g}",
                         "nan" if np.isnan(ess) else f"{ess:.1f}", flag))
        if args.traces:
            out = Path(args.traces)
            _writable_dir(out.parent)
            names = list(diag["traces"])
            with open(out, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["iter"] + names)
                for i, it in enumerate(diag["iterations"]):
                    w.writerow([int(it)] + [repr(float(diag["traces"][n][i])) for n in names])
    sys.stdout.write(aligned_table(("draws", "parameter", "mean", "ess", ""), rows))
    return 0


# ---------------------------------------------------------------- plumbing


def _map(fn, jobs, n_jobs: int):
    if n_jobs <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(fn, jobs))


def _global_flags(ap, default) -> None:
    ap.add_argument("--seed", type=int, default=default, help="master seed (overrides config)")
    ap.add_argument("--jobs", type=int, default=default, help="parallel independent chains")
    ap.add_argument("--config", default=default, help="flat key = value configuration file")
    ap.add_argument("-v", "--verbose", action="store_true", default=default)


GLOBAL_DEFAULTS = {"seed": None, "jobs": 1, "config": None, "verbose": False}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pahmm", description=__doc__)
    _global_flags(ap, argparse.SUPPRESS)
    # the same flags are accepted after the subcommand name
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, argparse.SUPPRESS)
    sub = ap.add_subparsers(dest="command", required=True)
    _add = sub.add_parser
    sub.add_parser = lambda *a, **kw: _add(*a, parents=[common], **kw)

    p = sub.add_parser("preprocess", help="minute CSV to filtered quarter-hour CSV")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--report", default=None, help="eligibility report path")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("simulate", help="materialize scenario datasets")
    p.add_argument("scenarios", help="NDJSON scenario records")
    p.add_argument("out_dir")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="run the Gibbs sampler")
    p.add_argument("data", nargs="+", help="quarter-hour CSV file(s)")
    p.add_argument("--model", choices=("nhmm", "hmm"), default=None)
    p.add_argument("--out", required=True, help="draw file (.ndjson) or output directory")
    p.add_argument("--quiet", action="store_true", help="no sweep-rate progress")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("evaluate", help="metrics against simulated truth")
    p.add_argument("--truth", required=True, help="dataset directory from simulate")
    p.add_argument("--draws", nargs="+", required=True)
    p.add_argument("--out", required=True, help="tidy CSV path")
    p.add_argument("--patient", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("summarize", help="comparison and activity-summary tables")
    p.add_argument("--metrics", nargs="*", default=None, help="tidy CSVs from evaluate")
    p.add_argument("--draws", nargs="*", default=None)
    p.add_argument("--data", default=None, help="quarter-hour CSV the draws were fit to")
    p.add_argument("--patient", default=None)
    p.add_argument("--out", default=None, help="text table path; tidy CSV written alongside")
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("diagnose", help="batch-means ESS per parameter")
    p.add_argument("draws", nargs="+")
    p.add_argument("--min-draws", type=int, default=100)
    p.add_argument("--traces", default=None, help="write traces as CSV")
    p.set_defaults(func=cmd_diagnose)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    for k, v in GLOBAL_DEFAULTS.items():
        if not hasattr(args, k):
            setattr(args, k, v)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.jobs < 1:
            raise CommandError("--jobs must be >= 1")
        cfg = load_config(args.config) if args.config else RunConfig()
        return args.func(args, cfg)
    except (CommandError, ConfigError, SeriesError, NumericalError, OSError, ValueError,
            KeyError) as exc:
        msg = str(exc) if not isinstance(exc, OSError) or not exc.filename else \
            f"{exc.filename}: {exc.strerror}"
        print(f"pahmm {args.command}: error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
