"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 configuration or usage error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .adnn import save_network
from .config import ConfigError, RunConfig, dump_config, load_config
from .diversity import METRICS, default_k, diversity_score
from .evaluation import (
    SchemeConfig,
    backtest_top_decile,
    derive_int,
    format_summary,
    read_scheme_report,
    run_scheme,
    sort_teachers,
    split_ics,
    write_backtest,
    write_contrib_trace,
    write_diversity_report,
    write_scheme_report,
)
from .market_data import (
    FeaturePanel,
    PanelFormatError,
    build_windows,
    load_panel,
    read_feature_table,
    write_feature_table,
    write_panel,
)
from .synthetic import generate_synthetic_panel

log = logging.getLogger("alphalab")

GP_FEATURES = "gp_features.csv"
FEATURE_FILES = {"A": GP_FEATURES, "B": "adnn_features.csv", "C": "adnn_features.csv"}


class UsageError(Exception):
    pass


def _resolve(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.workers is not None:
        cfg = replace(cfg, workers=args.workers)
    if args.out is not None:
        cfg = replace(cfg, out=args.out)
    cfg.validate()
    return cfg


def _load_data(cfg: RunConfig):
    if cfg.data.source == "csv":
        panel = load_panel(cfg.data.path)
    else:
        panel = generate_synthetic_panel(cfg.synth_config()).panel
    ds = build_windows(panel, cfg.data.window_len, cfg.data.splits, cfg.data.horizon, cfg.data.min_cross_section)
    return panel, ds


def _write_config(cfg: RunConfig, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "config.ini").write_text(dump_config(cfg), encoding="utf-8")


def _read_features(paths, panel):
    features = []
    for p in paths:
        if not Path(p).is_file():
            raise UsageError(f"feature file not found: {p}")
        features.extend(read_feature_table(p, panel))
    if not features:
        raise UsageError("no feature columns found in the given files")
    return features


# ---------------------------------------------------------------------------
# Commands

def cmd_synth(args, cfg: RunConfig) -> int:
    out = Path(cfg.out)
    _write_config(cfg, out)
    res = generate_synthetic_panel(cfg.synth_config())
    write_panel(res.panel, out / "panel.csv")
    oracle = FeaturePanel("value", res.oracle.values, res.oracle.valid)
    write_feature_table([oracle], res.panel, out / "oracle_feature.csv")
    ds = build_windows(res.panel, cfg.data.window_len, cfg.data.splits, cfg.data.horizon, cfg.data.min_cross_section)
    print(f"wrote {out / 'panel.csv'} ({res.panel.n_assets} assets x {res.panel.n_days} days)")
    print(f"oracle IC ({cfg.synth.planted_feature}): all days {res.oracle_ic_mean:.4f}, "
          f"test {res.oracle_ic_on(ds.splits['test']):.4f}")
    return 0


def _scheme_dir(cfg: RunConfig, scheme: str) -> Path:
    return Path(cfg.out) / f"scheme_{scheme}"


def cmd_run(args, cfg: RunConfig) -> int:
    scheme = args.scheme
    teachers = ()
    panel, ds = _load_data(cfg)
    if scheme == "B":
        src = _scheme_dir(cfg, "A") / GP_FEATURES
        if not src.is_file():
            raise UsageError(f"scheme B needs GP teacher features at {src}; "
                             f"run `alphalab run A --out {cfg.out}` with the same config first")
        teachers = sort_teachers(read_feature_table(src, panel), ds)
    scfg = SchemeConfig(scheme, cfg.n_features, cfg.gp, cfg.train, cfg.kernel, cfg.diversity.metric,
                        cfg.diversity.k_fraction, cfg.seed, cfg.workers,
                        cfg.diversity.raw_cross_entropy)
    result = run_scheme(scfg, panel, ds, teachers)
    out = _scheme_dir(cfg, scheme)
    _write_config(cfg, out)
    rep = result.report
    write_scheme_report(rep, out / "scheme_report.csv")
    write_feature_table(result.features, panel, out / FEATURE_FILES[scheme])
    if rep.diversity is not None:
        write_diversity_report(rep.diversity, out / "diversity_report.csv", panel.days)
    if result.networks:
        write_contrib_trace(result.networks, out / "contrib_trace.csv", ds.window_len)
        (out / "networks").mkdir(exist_ok=True)
        for n in result.networks:
            save_network(n.network, out / "networks" / f"{n.row.feature_id}.net")
    if args.timing:
        (out / "timing.csv").write_text(f"scheme,seconds\n{scheme},{rep.seconds!r}\n", encoding="utf-8")
    _write_summary(cfg, args.timing)
    m, s = rep.ic("test")
    print(f"scheme {scheme}: {len(rep.rows)} features, test IC {m:.4f} +/- {s:.4f}, failures {rep.failures}")
    if rep.diversity is not None:
        print(f"test diversity ({rep.diversity.metric}, k={rep.diversity.k}): "
              f"{rep.diversity.mean:.6f} +/- {rep.diversity.std:.6f}")
    return 1 if not rep.rows else 0


def _read_diversity(path: Path):
    stats = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            if rec["day"] in ("mean", "std"):
                stats[rec["day"]] = float(rec["score"])
    return stats


class _StoredDiversity:
    def __init__(self, mean: float, std: float):
        self.mean, self.std = mean, std


def _write_summary(cfg: RunConfig, with_time: bool) -> None:
    reports = []
    for scheme in ("A", "B", "C"):
        d = _scheme_dir(cfg, scheme)
        if not (d / "scheme_report.csv").is_file():
            continue
        rep = read_scheme_report(d / "scheme_report.csv")
        rep.failures = max(cfg.n_features - len(rep.rows), 0) if scheme != "A" else 0
        if (d / "diversity_report.csv").is_file():
            st = _read_diversity(d / "diversity_report.csv")
            rep.diversity = _StoredDiversity(st["mean"], st["std"])
        timing = d / "timing.csv"
        if with_time and timing.is_file():
            rep.seconds = float(timing.read_text(encoding="utf-8").splitlines()[1].split(",")[1])
        reports.append(rep)
    text = format_summary(reports, with_time)
    (Path(cfg.out) / "summary.txt").write_text(f"seed {cfg.seed}\n" + text, encoding="utf-8")


def cmd_eval(args, cfg: RunConfig) -> int:
    panel, ds = _load_data(cfg)
    features = _read_features(args.features, panel)
    rows = [(f.name, *split_ics(f, ds)) for f in features]
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "eval_report.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature_id", "train_ic", "val_ic", "test_ic"])
        for name, tr, va, te in rows:
            w.writerow([name, repr(tr), repr(va), repr(te)])
            print(f"{name:<24} train {tr:+.4f}  val {va:+.4f}  test {te:+.4f}")
    return 0


def cmd_diversity(args, cfg: RunConfig) -> int:
    panel, ds = _load_data(cfg)
    features = _read_features(args.features, panel)
    if len(features) < 2:
        raise UsageError("diversity needs at least 2 feature columns")
    metric = args.metric or cfg.diversity.metric
    k = args.k or default_k(len(features), cfg.diversity.k_fraction)
    rep = diversity_score(features, ds.splits[args.split], metric, k, seed=derive_int(cfg.seed, "diversity"),
                          raw_cross_entropy=cfg.diversity.raw_cross_entropy)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_diversity_report(rep, out / "diversity_report.csv", panel.days)
    print(f"diversity ({metric}, k={k}, {args.split}): {rep.mean:.6f} +/- {rep.std:.6f}")
    return 0


def cmd_backtest(args, cfg: RunConfig) -> int:
    if not args.features:
        raise UsageError("backtest needs at least one feature file")
    panel, ds = _load_data(cfg)
    features = _read_features(args.features, panel)
    res = backtest_top_decile(features, panel, ds.returns, ds.splits[args.split])
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_backtest(res, out / "backtest.csv", panel.days)
    cum = res.cumulative[-1] if len(res.portfolio) else 0.0
    bcum = res.benchmark_cumulative[-1] if len(res.benchmark) else 0.0
    print(f"{len(res.portfolio)} periods: cumulative {cum:+.4%} vs benchmark {bcum:+.4%}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI configuration file")
    common.add_argument("--seed", type=int, help="root seed (overrides [global] seed)")
    common.add_argument("--workers", type=int, help="parallel feature-training processes")
    common.add_argument("--out", help="output directory (overrides [output] directory)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="alphalab", description="Alpha factor discovery experiments.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("synth", parents=[common], help="write a synthetic panel and its oracle feature")

    r = sub.add_parser("run", parents=[common], help="build and score one scheme's features")
    r.add_argument("scheme", choices=["A", "B", "C"])
    r.add_argument("--timing", action="store_true", help="record wall-clock (makes outputs run-dependent)")

    for name, helptext in (("eval", "IC of feature files"), ("diversity", "diversity of feature files"),
                           ("backtest", "top-decile backtest of feature files")):
        c = sub.add_parser(name, parents=[common], help=helptext)
        c.add_argument("features", nargs="*", help="feature CSV files (date,asset_id,<name>...)")
        c.add_argument("--split", choices=["train", "val", "test"], default="test")
        if name == "diversity":
            c.add_argument("--metric", choices=METRICS)
            c.add_argument("--k", type=int)
    return p


COMMANDS = {"synth": cmd_synth, "run": cmd_run, "eval": cmd_eval, "diversity": cmd_diversity,
            "backtest": cmd_backtest}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command in ("eval", "diversity") and not args.features:
        parser.error(f"{args.command} needs at least one feature file")
    try:
        cfg = _resolve(args)
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (PanelFormatError, OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
