"""
Experiments as Prefect flows.

``run_experiment`` builds the flow for a config, runs it with ``CortexFlowRunner`` and
``CheckpointTaskRunner`` and writes the reports into the config's output directory:

- ``metrics.csv``: one row per (split, association area), recomputed from the model
- ``plotdata.csv``: fnapprox only, a dense grid of x, f(x) and both predictions
- ``bound.csv``: verify-bound only
- ``model.crtx``: the learned model
- ``timing.csv``: wall time, kept out of ``metrics.csv`` so reruns compare byte for byte
"""
import dataclasses
import pathlib
import time
import typing

import numpy as np
import pandas as pd
import prefect
from prefect import Flow, task
from prefect.core.task import Task
from prefect.engine.state import State, TriggerFailed
from prefect.utilities.logging import get_logger

from crtxnn import config as cfg
from crtxnn import cortex, data, nets, theory
from crtxnn.checkpointing import CheckpointTaskRunner, checkpoint_handler
from crtxnn.flow_runner import CortexFlowRunner
from crtxnn.result_handlers import ModelResultHandler, PandasResultHandler
from crtxnn.seeding import sub_seed

logger = get_logger("crtxnn.flows")

METRICS_FILE = "metrics.csv"
PLOTDATA_FILE = "plotdata.csv"
BOUND_FILE = "bound.csv"
TIMING_FILE = "timing.csv"
MODEL_FILE = "model.crtx"
FUNCTION_FILE = "function.csv"

METRICS_COLUMNS = [
    "split", "key", "kind", "samples", "accuracy", "loss", "baseline_accuracy", "baseline_loss",
    "loss_reduction_pct", "epsilon", "delta", "err_max", "t", "network_count", "routing",
]

# Relative slack for the training-loss non-degradation check.
_LOSS_SLACK = 1e-12


class ExperimentError(RuntimeError):
    pass


@dataclasses.dataclass
class Source:
    name: str
    train: cortex.LabeledDataset
    test: typing.Optional[cortex.LabeledDataset] = None


@dataclasses.dataclass
class MetricsReport:
    experiment: str
    frame: pd.DataFrame
    wall_time: float
    artifacts: typing.Dict[str, pathlib.Path]


def _task_logger():
    return prefect.context.get("logger") or logger


# Data ########################################################################

def _function_spec(config: cfg.ExperimentConfig) -> data.FunctionSpec:
    return data.FUNCTIONS[config.data.function].with_domain(*config.data.domain)


def function_dataset(config: cfg.ExperimentConfig) -> cortex.LabeledDataset:
    return data.gen_function_dataset(_function_spec(config), config.data.n, config.seed)


def _taken(config: cfg.ExperimentConfig, name: str, train, test) -> Source:
    train = data.take(train, config.data.take_train, sub_seed(config.seed, name, "train"))
    if test is not None:
        test = data.take(test, config.data.take_test, sub_seed(config.seed, name, "test"))
    return Source(name=name, train=train, test=test)


@task
def load_sources(config: cfg.ExperimentConfig) -> typing.List[Source]:
    log = _task_logger()
    if config.experiment == cfg.FNAPPROX:
        dataset = function_dataset(config)
        if config.data.test_fraction > 0:
            train, test = data.split(dataset, 1.0 - config.data.test_fraction, config.seed)
        else:
            train, test = dataset, None
        sources = [_taken(config, config.data.function, train, test)]
    else:
        paths = cfg.dataset_paths(config)
        sources = [
            _taken(config, "mnist",
                   data.load_mnist(paths["mnist_train_images"], paths["mnist_train_labels"]),
                   data.load_mnist(paths["mnist_test_images"], paths["mnist_test_labels"])),
            _taken(config, "cifar",
                   data.load_cifar10(paths["cifar_train"]),
                   data.load_cifar10(paths["cifar_test"])),
        ]
    for source in sources:
        log.info("Source %s: %d training and %d test sample(s)", source.name, len(source.train),
                 len(source.test) if source.test is not None else 0)
    return sources


@task
def mix_sources(sources: typing.List[Source], seed: int) -> typing.List[typing.Tuple[np.ndarray, np.ndarray]]:
    return data.mix([source.train for source in sources], seed)


def datasets_by_key(sources: typing.Sequence[Source], split: str) -> typing.Dict[cortex.SenseKey, cortex.LabeledDataset]:
    """The ``train`` or ``test`` part of every source, merged per sense key."""
    grouped: typing.Dict[cortex.SenseKey, typing.List[cortex.LabeledDataset]] = {}
    for source in sources:
        dataset = getattr(source, split)
        if dataset is not None:
            grouped.setdefault(dataset.sense_key, []).append(dataset)
    return {
        key: parts[0] if len(parts) == 1 else cortex.LabeledDataset(
            inputs=np.concatenate([p.inputs for p in parts]),
            targets=np.concatenate([p.targets for p in parts]),
            kind=parts[0].kind,
        )
        for key, parts in grouped.items()
    }


# Learning ####################################################################

def check_non_degradation(model: cortex.CortexModel, datasets: typing.Mapping[cortex.SenseKey, cortex.LabeledDataset]):
    """
    Raises
    ------
    CortexError
        If reflection left the training ``cortex_loss`` above the general networks' loss.
    """
    reflected = cortex.cortex_loss(model, datasets)
    baseline = cortex.cortex_loss(model.without_reflection(), datasets)
    if reflected > baseline + _LOSS_SLACK * max(1.0, abs(baseline)):
        raise cortex.CortexError(f"reflection raised the training cortex loss from {baseline:.6g} to {reflected:.6g}")
    return baseline, reflected


@task
def learn_model(mixed: typing.List[typing.Tuple[np.ndarray, np.ndarray]], config: cfg.ExperimentConfig) -> cortex.CortexModel:
    log = _task_logger()
    model = cortex.learn(
        mixed,
        config.net_configs(),
        config.train_params(),
        config.reflection_params(),
        config=config.to_dict(),
    )
    baseline, reflected = check_non_degradation(model, cortex.sense_partition(mixed))
    log.info("Training cortex loss %.6g (general networks only: %.6g), %d network(s)",
             reflected, baseline, model.network_count())
    return model


@task
def save_model(model: cortex.CortexModel, path: pathlib.Path) -> pathlib.Path:
    return ModelResultHandler(path).write(model)


@task
def load_saved_model(path: pathlib.Path, digest: str) -> cortex.CortexModel:
    try:
        return ModelResultHandler(path, expected_digest=digest).read()
    except FileNotFoundError as missing:
        raise ExperimentError(f"no usable model at {path}: {missing}")


# Reports #####################################################################

@task
def evaluate_model(model: cortex.CortexModel, sources: typing.List[Source]) -> pd.DataFrame:
    rows = []
    for split in ("train", "test"):
        datasets = datasets_by_key(sources, split)
        if not datasets:
            continue
        for metrics in cortex.evaluate(model, datasets):
            rows.append(dict(metrics.to_record(), split=split))
    return pd.DataFrame(rows, columns=METRICS_COLUMNS)


def plot_frame(model: cortex.CortexModel, config: cfg.ExperimentConfig) -> pd.DataFrame:
    spec = _function_spec(config)
    grid = data.function_grid(spec, config.data.plot_points)
    area = next(iter(model.areas.values()))
    outputs, ids = cortex.area_outputs(area, grid)
    return pd.DataFrame({
        "x": grid[:, 0],
        "f_x": spec.evaluate(grid)[:, 0],
        "baseline": nets.predict_batch(area.networks[0], grid)[:, 0],
        "crtxnn": outputs[:, 0],
        "network_id": ids,
    })


@task
def function_plot_data(model: cortex.CortexModel, config: cfg.ExperimentConfig) -> pd.DataFrame:
    return plot_frame(model, config)


@task
def bound_table(bound: cfg.BoundConfig, seed: int) -> pd.DataFrame:
    return theory.bound_grid(
        bound.t_values(),
        bound.n_values(),
        samples=bound.samples,
        seed=seed,
        distribution=bound.distribution,
        k_values=bound.k,
        z=bound.agreement_z,
    )


@task
def write_csv(frame: pd.DataFrame, path: pathlib.Path) -> pd.DataFrame:
    PandasResultHandler(path).write(frame)
    _task_logger().info("Wrote %d row(s) to %s", len(frame), path)
    return frame


# Flows #######################################################################

def build_flow(config: cfg.ExperimentConfig, reuse_model: bool = False) -> typing.Tuple[Flow, typing.Dict[str, Task]]:
    """
    The flow for ``config`` and its report tasks by name (``metrics``, ``plotdata``,
    ``bound``). With ``reuse_model`` the model is read from ``model.crtx`` instead of
    being learned.
    """
    out = config.output_path
    reports: typing.Dict[str, Task] = {}
    with Flow(config.name) as flow:
        if config.experiment == cfg.VERIFY_BOUND:
            reports["bound"] = write_csv(bound_table(config.bound, config.seed), out / BOUND_FILE)
            return flow, reports

        sources = load_sources(config)
        if reuse_model:
            model = load_saved_model(out / MODEL_FILE, cfg.config_digest(config))
        else:
            mixed = mix_sources(sources, config.seed)
            model = learn_model(mixed, config)
            if config.checkpoint:
                model.result_handler = ModelResultHandler(out / MODEL_FILE, cfg.config_digest(config))
            else:
                save_model(model, out / MODEL_FILE)
        reports["metrics"] = write_csv(evaluate_model(model, sources), out / METRICS_FILE)
        if config.experiment == cfg.FNAPPROX:
            reports["plotdata"] = write_csv(function_plot_data(model, config), out / PLOTDATA_FILE)
    return flow, reports


def _raise_on_failure(config: cfg.ExperimentConfig, state: State):
    if not state.is_failed():
        return
    for failed_task, task_state in state.result.items():
        if task_state.is_failed() and not isinstance(task_state, TriggerFailed):
            cause = task_state.result if isinstance(task_state.result, BaseException) else None
            raise ExperimentError(
                f"experiment {config.name!r}: task '{failed_task.name}' failed: {task_state.message}"
            ) from cause
    raise ExperimentError(f"experiment {config.name!r} failed: {state.message}")


def run_flow(config: cfg.ExperimentConfig, reuse_model: bool = False) -> typing.Dict[str, pd.DataFrame]:
    flow, reports = build_flow(config, reuse_model)
    state = CortexFlowRunner(flow=flow, task_runner_cls=CheckpointTaskRunner).run(
        return_tasks=flow.tasks,
        task_runner_state_handlers=[checkpoint_handler] if config.checkpoint and not reuse_model else [],
    )
    _raise_on_failure(config, state)
    return {name: state.result[report].result for name, report in reports.items()}


def _artifacts(config: cfg.ExperimentConfig, frames: typing.Mapping[str, pd.DataFrame]) -> typing.Dict[str, pathlib.Path]:
    files = {"metrics": METRICS_FILE, "plotdata": PLOTDATA_FILE, "bound": BOUND_FILE}
    artifacts = {name: config.output_path / files[name] for name in frames}
    if config.experiment != cfg.VERIFY_BOUND:
        artifacts["model"] = config.output_path / MODEL_FILE
    artifacts["timing"] = config.output_path / TIMING_FILE
    return artifacts


def _report(config: cfg.ExperimentConfig, frames, started: float, stage: str) -> MetricsReport:
    wall_time = time.perf_counter() - started
    timing = pd.DataFrame([{"name": config.name, "experiment": config.experiment, "stage": stage,
                            "seed": config.seed, "wall_time_s": wall_time}])
    PandasResultHandler(config.output_path / TIMING_FILE, write_kwargs={"float_format": "%.3f"}).write(timing)
    frame = frames["bound"] if config.experiment == cfg.VERIFY_BOUND else frames["metrics"]
    logger.info("Experiment %s (%s) finished in %.1fs", config.name, stage, wall_time)
    return MetricsReport(experiment=config.experiment, frame=frame, wall_time=wall_time,
                         artifacts=_artifacts(config, frames))


def run_experiment(config: cfg.ExperimentConfig) -> MetricsReport:
    """
    Learn, reflect and evaluate (or check the bound grid) for ``config`` and write the
    reports to its output directory.

    Raises
    ------
    ConfigError
        If dataset files are missing.
    ExperimentError
        If any task fails; the message names the experiment and the task.
    """
    if config.experiment == cfg.MIXED_IMAGES:
        cfg.dataset_paths(config)
    started = time.perf_counter()
    return _report(config, run_flow(config), started, "train")


def evaluate_saved_model(config: cfg.ExperimentConfig) -> MetricsReport:
    """Recompute ``metrics.csv`` (and ``plotdata.csv``) from the saved ``model.crtx``."""
    if config.experiment == cfg.VERIFY_BOUND:
        raise ExperimentError("verify-bound experiments have no model to evaluate")
    if config.experiment == cfg.MIXED_IMAGES:
        cfg.dataset_paths(config)
    started = time.perf_counter()
    return _report(config, run_flow(config, reuse_model=True), started, "evaluate")


def export_function_data(config: cfg.ExperimentConfig) -> pathlib.Path:
    """Write the configured function dataset as an (x, y) CSV."""
    if config.experiment != cfg.FNAPPROX:
        raise cfg.ConfigError([f"gen-data needs an fnapprox config, got {config.experiment!r}"], config.name)
    frame = data.export_function_csv(function_dataset(config))
    return PandasResultHandler(config.output_path / FUNCTION_FILE).write(frame)
