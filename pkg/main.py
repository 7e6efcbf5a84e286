"""
trajforge command line: simulate a dataset, run SLAM, merge sequences, run
bundle adjustment, localize queries and evaluate the results.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.
"""

import argparse
import sys
from pathlib import Path
from typing import List, Optional

from src.bundle.solver import active_reprojection_errors
from src.dataset.io import Dataset, read_dataset, read_estimates, write_dataset, write_estimates
from src.errors import ConfigError, DataError, NumericalError
from src.localize.evaluate import accuracy_curve, evaluate, evaluate_subsets
from src.localize.lowfreq import lowfreq_table, read_pgm
from src.logger import Logger
from src.pipeline import run_ba, run_localize, run_merge, run_slam, to_problem
from src.simulator.scenario import simulate_dataset
from src.utils import config_to_text, format_markdown_table, load_config, load_config_from_env
from src.validator import PipelineConfig
from src.visualization import plot_accuracy_curve, plot_reprojection_histogram, plot_trajectories

CONFIG_FILE = "config.txt"


class UsageParser(argparse.ArgumentParser):
    """ArgumentParser that exits with code 1 on usage errors."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="key = value config file (defaults to <input>/config.txt)")
    common.add_argument("--threads", type=int, default=None, help="Worker cap (falls back to TRAJFORGE_THREADS)")
    common.add_argument("--log", default=None, help="Append log lines to this file")

    parser = UsageParser(prog="trajforge", description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=UsageParser)

    p = sub.add_parser("simulate", parents=[common], help="Simulate a dataset with ground truth")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("slam", parents=[common], help="Motion-compensated pose-graph SLAM per sequence")
    p.add_argument("--in", dest="inputs", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--plot", default=None, help="Write a trajectory overlay PNG")

    p = sub.add_parser("merge", parents=[common], help="Merge sequences into one pose graph")
    p.add_argument("--in", dest="inputs", required=True, nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--plot", default=None, help="Write a trajectory overlay PNG")

    p = sub.add_parser("ba", parents=[common], help="Spline-prior bundle adjustment")
    p.add_argument("--in", dest="inputs", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--plot", default=None, help="Write a reprojection error histogram PNG")

    p = sub.add_parser("localize", parents=[common], help="PnP-RANSAC localization of query images")
    p.add_argument("--map", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--out", required=True, help="Estimate CSV")

    p = sub.add_parser("evaluate", parents=[common], help="Accuracy of localization estimates")
    p.add_argument("--est", required=True)
    p.add_argument("--gt", required=True, help="Query dataset with ground truth (or a dataset holding queries/)")
    p.add_argument("--out", default=None, help="Per-query CSV")
    p.add_argument("--plot", default=None, help="Write an accuracy curve PNG")

    p = sub.add_parser("lowfreq", parents=[common], help="Low-frequency score per image")
    p.add_argument("--images", required=True, help="Directory of PGM images (or a dataset holding images/)")
    p.add_argument("--out", default=None, help="Score CSV")
    return parser


def _config(args: argparse.Namespace, root: Optional[str] = None) -> PipelineConfig:
    if args.config is not None:
        return load_config(args.config)
    if root is not None and (Path(root) / CONFIG_FILE).is_file():
        return load_config(str(Path(root) / CONFIG_FILE))
    return PipelineConfig()


def _save(dataset: Dataset, config: PipelineConfig, out: str) -> None:
    write_dataset(dataset, out)
    (Path(out) / CONFIG_FILE).write_text(config_to_text(config), encoding="utf-8")


def _queries(dataset: Dataset) -> Dataset:
    return dataset.queries if dataset.queries is not None else dataset


def cmd_simulate(args: argparse.Namespace, threads: Optional[int], logger: Logger) -> None:
    config = _config(args)
    if args.seed is not None:
        config = config.model_copy(update={"seed": args.seed})
    simulation = simulate_dataset(config, logger=logger)
    _save(simulation.dataset, config, args.out)
    print(f"✅ Simulated {len(simulation.dataset.sequences)} sequence(s) into {args.out}")


def _plot_trajectories(dataset: Dataset, path: Optional[str]) -> None:
    if path is None:
        return
    gt = dataset.ground_truth.trajectory if dataset.ground_truth is not None else None
    plot_trajectories(dataset.trajectory, gt, path=path)


def cmd_slam(args: argparse.Namespace, threads: Optional[int], logger: Logger) -> None:
    config = _config(args, args.inputs)
    out = run_slam(read_dataset(args.inputs), config, threads, logger)
    _save(out, config, args.out)
    _plot_trajectories(out, args.plot)
    print(f"✅ SLAM: {len(out.graph)} node(s), {len(out.graph.edges)} edge(s) written to {args.out}")


def cmd_merge(args: argparse.Namespace, threads: Optional[int], logger: Logger) -> None:
    config = _config(args, args.inputs[0])
    out = run_merge([read_dataset(path) for path in args.inputs], config, threads, logger)
    _save(out, config, args.out)
    _plot_trajectories(out, args.plot)
    print(f"✅ Merged {len(out.sequences)} sequence(s) into {args.out}")


def cmd_ba(args: argparse.Namespace, threads: Optional[int], logger: Logger) -> None:
    config = _config(args, args.inputs)
    out, report = run_ba(read_dataset(args.inputs), config, logger)
    _save(out, config, args.out)
    if args.plot is not None:
        plot_reprojection_histogram(active_reprojection_errors(to_problem(out, config)), path=args.plot)
    print(out.report)
    print(f"✅ Bundle adjustment written to {args.out}")


def cmd_localize(args: argparse.Namespace, threads: Optional[int], logger: Logger) -> None:
    config = _config(args, args.map)
    results = run_localize(read_dataset(args.map), _queries(read_dataset(args.queries)), config, threads, logger)
    write_estimates(args.out, {k: (r.pose if r.localized else None, r.num_inliers) for k, r in results.items()})
    localized = sum(1 for r in results.values() if r.localized)
    print(f"✅ Localized {localized} of {len(results)} queries, estimates written to {args.out}")


def cmd_evaluate(args: argparse.Namespace, threads: Optional[int], logger: Logger) -> None:
    config = _config(args, args.gt)
    queries = _queries(read_dataset(args.gt))
    if queries.ground_truth is None:
        raise DataError("dataset has no ground truth", f"{args.gt}/ground_truth")
    ground_truth = {image_id: image.pose for image_id, image in queries.ground_truth.images.items()}
    estimates = read_estimates(args.est)
    report = evaluate(estimates, ground_truth)
    print(report.to_text())
    if queries.pictures:
        table = lowfreq_table(queries.pictures, config.lowfreq_cutoff, config.lowfreq_threshold)
        labels = set(table.loc[table["low_frequency"], "image_id"])
        low, rest = evaluate_subsets(estimates, ground_truth, labels)
        print(f"\nlow-frequency queries ({len(low.errors)}):\n{low.to_text()}")
        print(f"\nother queries ({len(rest.errors)}):\n{rest.to_text()}")
    if args.out is not None:
        report.to_frame().to_csv(args.out, index=False)
    if args.plot is not None:
        plot_accuracy_curve(accuracy_curve(report.errors.values()), path=args.plot)
    logger.add_log(f"evaluate: fractions {report.fractions}")
    print("✅ Evaluation complete")


def cmd_lowfreq(args: argparse.Namespace, threads: Optional[int], logger: Logger) -> None:
    config = _config(args)
    folder = Path(args.images)
    if (folder / "images").is_dir():
        folder = folder / "images"
    if not folder.is_dir():
        raise DataError("image directory does not exist", str(folder))
    images = {f.stem: read_pgm(f) for f in sorted(folder.glob("*.pgm"))}
    table = lowfreq_table(images, config.lowfreq_cutoff, config.lowfreq_threshold)
    print(format_markdown_table(table))
    if args.out is not None:
        table.to_csv(args.out, index=False)


COMMANDS = {
    "simulate": cmd_simulate,
    "slam": cmd_slam,
    "merge": cmd_merge,
    "ba": cmd_ba,
    "localize": cmd_localize,
    "evaluate": cmd_evaluate,
    "lowfreq": cmd_lowfreq,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    env = load_config_from_env()
    threads = args.threads if args.threads is not None else env["threads"]
    logger = Logger(args.log or env["log_file"], echo=True)
    try:
        COMMANDS[args.command](args, threads, logger)
    except ConfigError as e:
        print(f"❌ Configuration error: {e}", file=sys.stderr)
        return 1
    except DataError as e:
        print(f"❌ Data error: {e}", file=sys.stderr)
        return 2
    except NumericalError as e:
        print(f"❌ Numerical failure: {e}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
