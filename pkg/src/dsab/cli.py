"""Command-line entry point: ``dsab {simulate,train,detect,evaluate,plot}``.

Exit codes: 0 success, 2 usage, 3 config, 4 checkpoint, 5 missing file,
6 malformed data, 7 simulation failure, 8 training failure, 9 output
validation failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import pandas as pd

from .config import SWEEPABLE, ConfigError, RunConfig
from .model import CheckpointError, load_checkpoint, save_checkpoint
from .pipeline import METHODS, detect, train_on
from .plotting import loss_curve, roc_curve, score_histogram, sweep_curve
from .scoring import ScoreReport
from .simulator import Scenario, SimulationError, generate, write_scenario
from .trajectory import DatasetFormatError, read_dataset_csv
from .training import LOSS_LOG_COLUMNS, TrainingError, write_loss_log

log = logging.getLogger("dsab")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_CHECKPOINT = 4
EXIT_MISSING = 5
EXIT_DATA = 6
EXIT_SIMULATION = 7
EXIT_TRAINING = 8
EXIT_OUTPUT = 9


class MissingFileError(FileNotFoundError):
    pass


class OutputError(RuntimeError):
    pass


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig.from_dict({"schema_version": 1})
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _need(path: Path | None, what: str) -> Path:
    if path is None:
        raise ConfigError(f"no {what} given (flag or config 'paths')")
    if not Path(path).exists():
        raise MissingFileError(f"{what} not found: {path}")
    return Path(path)


def _arg_or_cfg(value, cfg: RunConfig, key: str) -> Path | None:
    return Path(value) if value is not None else cfg.path(key)


def _out_dir(args, cfg: RunConfig) -> Path:
    out = _arg_or_cfg(args.out, cfg, "out") or Path(".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _validate(paths: list[Path]) -> None:
    """Every output must exist, be non-empty and parse as its format."""
    for p in paths:
        if not p.exists() or p.stat().st_size == 0:
            raise OutputError(f"output {p} missing or empty")
        if p.suffix == ".json":
            json.loads(p.read_text(encoding="utf-8"))
        elif p.suffix == ".csv":
            pd.read_csv(p, nrows=1)
        elif p.suffix == ".svg" and b"<svg" not in p.read_bytes()[:2000]:
            raise OutputError(f"{p} is not an SVG document")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> list[Path]:
    cfg = _load_config(args)
    scfg = cfg.scenario_config(args.scenario)
    out = _out_dir(args, cfg)
    log.info("simulating %s (seed %d, %g min)", scfg.scenario.value, scfg.seed, scfg.duration)
    data = generate(scfg)
    csv_path = out / f"{scfg.scenario.value}.csv"
    sidecar = write_scenario(data, scfg, csv_path)
    return [csv_path, sidecar]


def cmd_train(args) -> list[Path]:
    cfg = _load_config(args)
    data_path = _need(_arg_or_cfg(args.data, cfg, "train_data"), "training data")
    out = _out_dir(args, cfg)
    data = read_dataset_csv(data_path)
    wcfg = cfg.window_config()
    res = train_on(data, wcfg, cfg.train_config(), cfg.model_config(data.n_lanes),
                   cfg.loss_weight_config())
    ckpt, loss_log = out / "checkpoint.json", out / "loss_log.csv"
    save_checkpoint(ckpt, res.model_config, res.stats, res.params,
                    extra={"windows": {**wcfg.__dict__, "policy": wcfg.policy.value},
                           "seed": cfg.seed, "train_data": data_path.name})
    write_loss_log(res.loss_log, loss_log)
    return [ckpt, loss_log]


def cmd_detect(args) -> list[Path]:
    cfg = _load_config(args)
    data_path = _need(_arg_or_cfg(args.data, cfg, "data"), "dataset")
    out = _out_dir(args, cfg)
    data = read_dataset_csv(data_path)
    wcfg = cfg.window_config()
    params = stats = None
    if args.method == "dsab":
        ckpt = _need(_arg_or_cfg(args.checkpoint, cfg, "checkpoint"), "checkpoint")
        model_cfg, stats, params, _ = load_checkpoint(ckpt)
        if model_cfg.n_lanes != data.n_lanes or model_cfg.T != wcfg.T:
            raise CheckpointError(f"{ckpt}: trained for {model_cfg.n_lanes} lanes and T={model_cfg.T}, "
                                  f"data has {data.n_lanes} lanes and T={wcfg.T}")
    report = detect(data, wcfg, args.method, params, stats, cfg.ks)
    path = out / f"report_{args.method}.csv"
    report.write_csv(path)
    return [path]


def cmd_evaluate(args) -> list[Path]:
    cfg = _load_config(args)
    rep_path = _need(_arg_or_cfg(args.report, cfg, "report"), "score report")
    out = _out_dir(args, cfg)
    try:
        report = ScoreReport.read_csv(rep_path)
    except (ValueError, KeyError) as exc:
        raise DatasetFormatError(str(exc)) from exc
    report.evaluate(cfg.ks)
    path = out / f"{rep_path.stem}_metrics.json"
    report.write_metrics(path)
    return [path]


def _sweep(cfg: RunConfig, param: str, values: list[float], out: Path) -> list[Path]:
    train_path = _need(cfg.path("train_data"), "training data")
    test_path = _need(cfg.path("data"), "dataset")
    train_data, test_data = read_dataset_csv(train_path), read_dataset_csv(test_path)
    rows = []
    for value in values:
        windows, model = dict(cfg.windows), dict(cfg.model)
        if param in ("d_h", "K"):
            model[param] = int(value)
        else:
            windows[param] = int(value) if param == "T" else float(value)
        run = RunConfig(cfg.seed, cfg.scenario, model, cfg.train, windows, cfg.loss_weights,
                        cfg.paths, cfg.ks, {}, cfg.base_dir)
        wcfg = run.window_config()
        log.info("sweep %s=%g", param, value)
        res = train_on(train_data, wcfg, run.train_config(), run.model_config(train_data.n_lanes),
                       run.loss_weight_config())
        summary = detect(test_data, wcfg, "dsab", res.params, res.stats, cfg.ks).summary["vehicle"]
        rows.append({"value": value, "auc": summary["auc"], "ap": summary["ap"]})
    return sweep_curve(pd.DataFrame(rows), param, out)


def cmd_plot(args) -> list[Path]:
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    written: list[Path] = []
    sweep_param = args.sweep or cfg.sweep.get("param")
    if sweep_param:
        if sweep_param not in SWEEPABLE:
            raise ConfigError(f"cannot sweep {sweep_param!r}; choose from {SWEEPABLE}")
        values = args.values or cfg.sweep.get("values") or [0.0, 0.05, 0.1, 0.15, 0.2]
        written += _sweep(cfg, sweep_param, [float(v) for v in values], out)
    rep_path = _arg_or_cfg(args.report, cfg, "report")
    if rep_path is not None:
        report = ScoreReport.read_csv(_need(rep_path, "score report"))
        for entity in ("vehicle", "scene"):
            written += score_histogram(report, out, entity)
            df = report.vehicles if entity == "vehicle" else report.scenes
            if df.label.nunique() == 2:
                written += roc_curve(report, out, entity)
    ll_path = _arg_or_cfg(args.loss_log, cfg, "loss_log")
    if ll_path is not None:
        table = pd.read_csv(_need(ll_path, "loss log"))
        if list(table.columns) != LOSS_LOG_COLUMNS:
            raise DatasetFormatError(f"{ll_path}: header must be {','.join(LOSS_LOG_COLUMNS)}")
        written += loss_curve(table, out)
    if not written:
        raise ConfigError("nothing to plot: give --report, --loss-log or --sweep")
    return written


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dsab", description="Socially abnormal driving detection.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", type=Path, help="run config JSON")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out", type=Path, help="output directory")
        return sp

    sp = common(sub.add_parser("simulate", help="generate a labelled scenario dataset"))
    sp.add_argument("--scenario", choices=[s.value for s in Scenario])
    sp.set_defaults(func=cmd_simulate)

    sp = common(sub.add_parser("train", help="train the autoencoder on normal traffic"))
    sp.add_argument("--data", type=Path, help="training dataset CSV")
    sp.set_defaults(func=cmd_train)

    sp = common(sub.add_parser("detect", help="score vehicles and scenes"))
    sp.add_argument("--data", type=Path, help="dataset CSV to score")
    sp.add_argument("--checkpoint", type=Path)
    sp.add_argument("--method", choices=METHODS, default="dsab")
    sp.set_defaults(func=cmd_detect)

    sp = common(sub.add_parser("evaluate", help="metrics JSON from a score report"))
    sp.add_argument("--report", type=Path)
    sp.set_defaults(func=cmd_evaluate)

    sp = common(sub.add_parser("plot", help="SVG + CSV figures"))
    sp.add_argument("--report", type=Path)
    sp.add_argument("--loss-log", type=Path)
    sp.add_argument("--sweep", choices=SWEEPABLE, help="retrain per value and plot detection quality")
    sp.add_argument("--values", type=float, nargs="+")
    sp.set_defaults(func=cmd_plot)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        written = args.func(args)
        _validate(written)
    except ConfigError as exc:
        log.error("config: %s", exc)
        return EXIT_CONFIG
    except CheckpointError as exc:
        log.error("checkpoint: %s", exc)
        return EXIT_CHECKPOINT
    except (MissingFileError, FileNotFoundError) as exc:
        log.error("missing file: %s", exc)
        return EXIT_MISSING
    except (DatasetFormatError, pd.errors.ParserError) as exc:
        log.error("data: %s", exc)
        return EXIT_DATA
    except SimulationError as exc:
        log.error("simulation: %s", exc)
        return EXIT_SIMULATION
    except TrainingError as exc:
        log.error("training: %s", exc)
        return EXIT_TRAINING
    except OutputError as exc:
        log.error("output: %s", exc)
        return EXIT_OUTPUT
    for path in written:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
