"""Command-line entry point: ppisvrg gen|optimize|compare|mc|bound"""
import argparse
import json
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from ppisvrg import __version__
from ppisvrg.config import (
    COMMANDS, FORMATS, ConfigError, ExperimentConfig, apply_overrides, load_config_file)
from ppisvrg.data import SplitDataset, SyntheticSpec, generate
from ppisvrg.data_loader import (
    read_csv, write_csv, write_json, write_rows_csv, write_sidecar)
from ppisvrg.harness import (
    REPORT_COLUMNS, bound_experiment, compare_optimizers, label_scarcity_trend,
    reduction_table, run_protocol)
from ppisvrg.inference import Method
from ppisvrg.losses import LossModel, certify
from ppisvrg.optim import Trajectory, reference_solution, run
from ppisvrg.theory import conditional_variance_floor
from ppisvrg.logging import logger, timeit, add_file_handler

TRAJECTORY_COLUMNS = ("epoch", "t", "gap", "v_norm", "mu_norm")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="TOML experiment file")
    common.add_argument("--seed", type=int, metavar="U64", help="experiment seed")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--jobs", type=int, metavar="N", help="parallel workers")
    common.add_argument("--format", choices=FORMATS, help="format of tabular artifacts")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        dest="overrides", help="override one config value (repeatable)")
    common.add_argument("--log-file", metavar="PATH", help="also log warnings to this file")

    parser = argparse.ArgumentParser(
        prog="ppisvrg", description="Variance-reduced optimization with prediction-powered "
                                    "control variates")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "gen": "generate a synthetic dataset",
        "optimize": "run one optimizer and record its trajectory",
        "compare": "run SGD, SVRG, PPI-SVRG and PPI-SVRG++ on one dataset",
        "mc": "run the Monte Carlo protocol over labeled fractions",
        "bound": "compare averaged PPI-SVRG gaps with the linear-rate bound",
    }
    for command in COMMANDS:
        sub.add_parser(command, parents=[common], help=helps[command])
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    values: Dict[str, Any] = load_config_file(args.config) if args.config else {}
    values = apply_overrides(values, args.overrides)
    values["command"] = args.command
    if args.seed is not None:
        values["seed"] = args.seed
    output = dict(values.get("output", {}))
    for key, flag in (("dir", args.out), ("jobs", args.jobs), ("format", args.format)):
        if flag is not None:
            output[key] = flag
    values["output"] = output
    return ExperimentConfig.from_dict(values)


def load_dataset(cfg: ExperimentConfig) -> Tuple[SplitDataset, Optional[SyntheticSpec]]:
    if cfg.dataset.is_synthetic:
        spec = cfg.spec()
        return generate(spec), spec
    return read_csv(cfg.dataset.path), None


def _echo(payload: Dict[str, Any], cfg: ExperimentConfig) -> Dict[str, Any]:
    return {**payload, "config": cfg.to_dict()}


def _write_trajectory(traj: Trajectory, out: Path, cfg: ExperimentConfig) -> None:
    name = traj.algorithm.value
    summary = traj.summary()
    if cfg.output.format == "csv":
        write_rows_csv(traj.to_rows(), TRAJECTORY_COLUMNS, out / f"trajectory_{name}.csv")
    else:
        summary["records"] = traj.to_rows()
    write_json(_echo(summary, cfg), out / f"summary_{name}.json")


@timeit
def cmd_gen(cfg: ExperimentConfig, out: Path) -> None:
    if not cfg.dataset.is_synthetic:
        raise ConfigError("dataset", "gen needs synthetic dataset fields, not a path")
    ds, spec = load_dataset(cfg)
    write_csv(ds, out / "dataset.csv")
    write_sidecar(ds, out / "dataset.json", spec, cfg.to_dict())
    logger.info(f"Wrote n={ds.n}, N={ds.N} records to {out / 'dataset.csv'}")


def _model(cfg: ExperimentConfig, ds: SplitDataset, spec: Optional[SyntheticSpec]) -> LossModel:
    return certify(cfg.model.build(spec), ds)


@timeit
def cmd_optimize(cfg: ExperimentConfig, out: Path) -> None:
    ds, spec = load_dataset(cfg)
    model = _model(cfg, ds, spec)
    opt = cfg.opt_config()
    theta_star = reference_solution(model, ds, opt.algorithm.target)
    traj = run(model, ds, opt, theta_star=theta_star)
    _write_trajectory(traj, out, cfg)
    logger.info(f"{opt.algorithm.value}: final gap {traj.gaps[-1]:.3e} after T={traj.total_inner_iterations}")


@timeit
def cmd_compare(cfg: ExperimentConfig, out: Path) -> None:
    ds, spec = load_dataset(cfg)
    model = _model(cfg, ds, spec)
    for traj in compare_optimizers(model, ds, cfg.opt_config()).values():
        _write_trajectory(traj, out, cfg)


@timeit
def cmd_mc(cfg: ExperimentConfig, out: Path) -> None:
    pool, spec = load_dataset(cfg)
    theta_star = None
    if spec is not None and spec.dim == 0:
        theta_star = float(spec.true_theta())
    elif cfg.protocol.get("theta_star") is None and not cfg.protocol.get("pool_mean_target"):
        raise ConfigError("protocol.theta_star",
                          "set theta_star or pool_mean_target for this dataset")
    protocol = cfg.protocol_config(theta_star, cfg.model.build(spec))
    report = run_protocol(pool, protocol, n_jobs=cfg.output.jobs)
    payload = report.to_dict()
    payload["model"] = protocol.model.to_dict()
    methods = report.methods
    if Method.PPI_SVRG in methods and {Method.PPI, Method.NAIVE} <= set(methods):
        try:
            payload["reductions"] = reduction_table(report)
        except ValueError as e:
            logger.warning(f"Reduction table skipped: {e}")
    if len(report.gammas) >= 3:
        payload["label_scarcity_trend"] = {
            m.value: vars(label_scarcity_trend(report, m)) for m in methods}
    if cfg.output.format == "csv":
        write_rows_csv(report.rows(), REPORT_COLUMNS, out / "mc_report.csv")
    write_json(_echo(payload, cfg), out / "mc_report.json")


@timeit
def cmd_bound(cfg: ExperimentConfig, out: Path) -> None:
    ds, spec = load_dataset(cfg)
    model = _model(cfg, ds, spec)
    floor_source = ds
    if cfg.bound.floor in ("auto", "analytic") and spec is not None:
        try:
            conditional_variance_floor(model, spec)
            floor_source = spec
        except ValueError:
            if cfg.bound.floor == "analytic":
                raise
    elif cfg.bound.floor == "analytic":
        raise ConfigError("bound.floor", "analytic floor needs a synthetic dataset")
    report = bound_experiment(model, ds, cfg.opt_config(), floor_source=floor_source,
                              seeds=cfg.bound.seeds, max_violations=cfg.bound.max_violations,
                              tolerance=cfg.bound.tolerance, n_jobs=cfg.output.jobs)
    write_json(_echo(report.to_dict(), cfg), out / "bound.json")
    logger.info(f"bound satisfied: {report.satisfied}")


COMMAND_HANDLERS = {
    "gen": cmd_gen,
    "optimize": cmd_optimize,
    "compare": cmd_compare,
    "mc": cmd_mc,
    "bound": cmd_bound,
}


def _report_error(error: Exception) -> None:
    record = {"error": type(error).__name__, "message": str(error),
              "field": getattr(error, "field", None)}
    print(json.dumps(record), file=sys.stderr)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    handler = None
    try:
        if args.log_file:
            handler = add_file_handler(args.log_file)
        cfg = resolve_config(args)
        out = Path(cfg.output.dir)
        out.mkdir(parents=True, exist_ok=True)
        COMMAND_HANDLERS[cfg.command](cfg, out)
    except (ValueError, OSError) as e:
        logger.error(str(e))
        _report_error(e)
        return 2
    except Exception as e:  # pylint: disable=broad-except
        logger.exception("unexpected failure")
        _report_error(e)
        return 1
    finally:
        if handler is not None:
            logger.removeHandler(handler)
            handler.close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
