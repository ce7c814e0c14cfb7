"""
Command-line entry point: ``crtxnn <subcommand> [options]``.

Prefect reads its logging level when it is first imported, so everything that pulls
in Prefect is imported inside the subcommand functions, after ``--log-level`` has
been applied.
"""
import argparse
import os
import pathlib
import sys
import typing

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


def _add_common(parser: argparse.ArgumentParser, config_required: bool = True):
    parser.add_argument("--config", required=config_required, type=pathlib.Path,
                        help="experiment TOML file")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--out", type=pathlib.Path, help="override the output directory")
    parser.add_argument("--take", type=int, help="cap every sample count (desk-scale runs)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crtxnn", description="Cortex neural network experiments.")
    parser.add_argument("--log-level", choices=LOG_LEVELS, default=os.environ.get("PREFECT__LOGGING__LEVEL", "INFO"),
                        type=str.upper, help="logging level (default: %(default)s)")
    commands = parser.add_subparsers(dest="command", metavar="command")
    commands.required = True

    _add_common(commands.add_parser("gen-data", help="write the configured function dataset as CSV"))
    _add_common(commands.add_parser("train", help="run an experiment end to end"))
    _add_common(commands.add_parser("evaluate", help="recompute metrics from a saved model"))

    predict = commands.add_parser("predict", help="predict one input with a saved model")
    predict.add_argument("--model", required=True, type=pathlib.Path, help="model.crtx file")
    predict.add_argument("--input", required=True, type=pathlib.Path,
                         help=".npy array or a text file of numbers separated by spaces or commas")
    predict.add_argument("--output-shape", help="output shape such as 1 or 10; needed when several areas share the input shape")

    bound = commands.add_parser("verify-bound", help="check the reflection bound on a (t, k, N) grid")
    _add_common(bound, config_required=False)

    report = commands.add_parser("report", help="print the reports in an output directory")
    report.add_argument("--out", required=True, type=pathlib.Path, help="experiment output directory")
    return parser


def _load(args: argparse.Namespace):
    from crtxnn import config as cfg

    overrides = {"seed": args.seed, "output_dir": args.out, "take": args.take}
    if args.config is None:
        raw = {"experiment": cfg.VERIFY_BOUND, "name": cfg.VERIFY_BOUND, "seed": 0, "output_dir": "."}
        return cfg.parse_config(cfg.apply_overrides(raw, overrides), "default verify-bound settings")
    return cfg.load_config(args.config, overrides)


def _print_frame(title: str, frame) -> None:
    print(f"{title}:")
    print(frame.to_string(index=False))


def gen_data(args: argparse.Namespace) -> int:
    from crtxnn import flows

    path = flows.export_function_data(_load(args))
    print(f"wrote {path}")
    return 0


def train(args: argparse.Namespace) -> int:
    from crtxnn import flows

    report = flows.run_experiment(_load(args))
    _print_frame(report.experiment, report.frame)
    for name, path in sorted(report.artifacts.items()):
        print(f"{name}: {path}")
    if report.experiment == "verify-bound":
        return _bound_status(report.frame)
    return 0


def evaluate(args: argparse.Namespace) -> int:
    from crtxnn import flows

    report = flows.evaluate_saved_model(_load(args))
    _print_frame("metrics", report.frame)
    return 0


def read_input(path: pathlib.Path):
    """Read an ``.npy`` array, or a flat vector from text; raises ValueError on anything else."""
    import numpy as np

    if path.suffix == ".npy":
        return np.load(str(path), allow_pickle=False)
    text = path.read_text().replace(",", " ").split()
    if not text:
        raise ValueError(f"{path}: no numbers found")
    try:
        return np.array([float(token) for token in text])
    except ValueError:
        raise ValueError(f"{path}: cannot parse {' '.join(text[:5])!r} as numbers")


def _output_shape(model, x, requested: typing.Optional[str]):
    from crtxnn.cortex import RoutingError
    from crtxnn.tensor import Shape, shape_of

    if requested:
        return Shape.parse(requested)
    input_shape = shape_of(x)
    candidates = [key.output_shape for key in model.areas if key.input_shape == input_shape]
    if len(candidates) == 1:
        return candidates[0]
    known = ", ".join(str(key) for key in model.areas)
    if not candidates:
        raise RoutingError(f"no association area takes input {input_shape}; known keys: {known}")
    raise RoutingError(f"several areas take input {input_shape} ({known}); pass --output-shape")


def predict(args: argparse.Namespace) -> int:
    from crtxnn import cortex
    from crtxnn.serialization import load_model

    model = load_model(args.model)
    x = read_input(args.input)
    routing = cortex.predict_with_provenance(model, x, _output_shape(model, x, args.output_shape))
    print("prediction: " + " ".join(f"{value:.17g}" for value in routing.output.ravel()))
    print(f"area: {routing.key}")
    print(f"network id: {routing.network_id}")
    return 0


def _bound_status(frame) -> int:
    counterexamples = int(frame["counterexample"].sum())
    disagreements = int((~frame["mc_agrees"].astype(bool)).sum())
    print(f"{len(frame)} cell(s), {counterexamples} counterexample(s), "
          f"{disagreements} Monte Carlo disagreement(s), min r_analytic {frame['r_analytic'].min():.6g}")
    for row in frame[~frame["mc_agrees"].astype(bool)].itertuples(index=False):
        print(f"disagreement: t={row.t:g} k={row.k} N={row.N} r_mc={row.r_mc:.6g} "
              f"r_expected={row.r_expected:.6g} se={row.se:.3g} z={row.mc_z:g}")
    if counterexamples or disagreements:
        print("error: the reflection bound check failed", file=sys.stderr)
        return 1
    return 0


def verify_bound(args: argparse.Namespace) -> int:
    from crtxnn import config as cfg
    from crtxnn import flows

    config = _load(args)
    if config.experiment != cfg.VERIFY_BOUND:
        raise cfg.ConfigError([f"verify-bound needs a verify-bound config, got {config.experiment!r}"], config.name)
    report = flows.run_experiment(config)
    print(f"bound: {report.artifacts['bound']}")
    return _bound_status(report.frame)


def report(args: argparse.Namespace) -> int:
    from crtxnn import flows
    from crtxnn.result_handlers import PandasResultHandler

    found = False
    for title, name in (("metrics", flows.METRICS_FILE), ("bound", flows.BOUND_FILE), ("timing", flows.TIMING_FILE)):
        path = args.out / name
        if path.exists():
            _print_frame(title, PandasResultHandler(path).read())
            found = found or title != "timing"
    if not found:
        print(f"error: no metrics.csv or bound.csv in {args.out}", file=sys.stderr)
        return 1
    return 0


COMMANDS = {
    "gen-data": gen_data,
    "train": train,
    "evaluate": evaluate,
    "predict": predict,
    "verify-bound": verify_bound,
    "report": report,
}


def main(argv: typing.Optional[typing.Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    os.environ["PREFECT__LOGGING__LEVEL"] = args.log_level
    try:
        return COMMANDS[args.command](args)
    except (ValueError, KeyError, OSError, RuntimeError) as error:
        from prefect.utilities.logging import get_logger

        get_logger("crtxnn.cli").debug("%s failed", args.command, exc_info=True)
        message = str(error)
        if isinstance(error, KeyError) and error.args:
            message = str(error.args[0])
        print(f"error: {message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
