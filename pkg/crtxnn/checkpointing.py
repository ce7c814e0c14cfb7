"""
Filename-keyed checkpoints for Prefect tasks. A task whose result handler can read its
file is marked successful with the loaded value instead of running; a task that does
run has its result written afterwards.
"""
import os
import typing

from prefect.core.edge import Edge
from prefect.engine.result import Result
from prefect.engine.state import State, Success
from prefect.engine.task_runner import TaskRunner

from crtxnn.result_handlers import TemplatedResultHandler


class CheckpointTaskRunner(TaskRunner):
    """A ``TaskRunner`` that keeps the upstream states so handlers can template file paths."""

    def run(
        self,
        state: State = None,
        upstream_states: typing.Dict[Edge, State] = None,
        context: typing.Dict[str, typing.Any] = None,
        executor: "prefect.engine.executors.Executor" = None,
    ) -> State:
        self.upstream_states = upstream_states if upstream_states is not None else {}
        return super().run(state=state, upstream_states=upstream_states, context=context, executor=executor)


def checkpoint_handler(task_runner: CheckpointTaskRunner, old_state: State, new_state: State) -> State:
    """
    Task-runner state handler implementing checkpoints through the task's
    ``TemplatedResultHandler``. Tasks with any other (or no) result handler are left alone.

    A read that raises ``FileNotFoundError`` (including a stale model checkpoint) lets
    the task run; any other read error propagates.

    Parameters
    ----------
    task_runner : CheckpointTaskRunner
        The runner of the task whose state is changing.
    old_state, new_state : prefect.engine.state.State
        The current and the proposed state.

    Returns
    -------
    prefect.engine.state.State
        The state the task should actually enter.
    """
    if os.environ.get("PREFECT__FLOWS__CHECKPOINTING") == "true":
        raise AttributeError("Cannot use standard prefect checkpointing with this handler")

    handler = getattr(task_runner.task, "result_handler", None)
    if not isinstance(handler, TemplatedResultHandler):
        return new_state
    if not hasattr(task_runner, "upstream_states"):
        raise TypeError(
            "upstream_states not found in task runner. Make sure to use "
            "crtxnn.checkpointing.CheckpointTaskRunner."
        )

    if old_state.is_pending() and new_state.is_running():
        input_mapping = _create_input_mapping(task_runner.upstream_states)
        try:
            data = handler.read(input_mapping=input_mapping)
        except FileNotFoundError as missing:
            task_runner.logger.info("No usable checkpoint for task '%s': %s", task_runner.task.name, missing)
            return new_state
        return Success(result=Result(value=data, result_handler=handler), message="Task loaded from disk.")

    if old_state.is_running() and new_state.is_successful():
        input_mapping = _create_input_mapping(task_runner.upstream_states)
        handler.write(new_state.result, input_mapping=input_mapping)

    return new_state


def _create_input_mapping(upstream_states: typing.Dict[Edge, State]) -> typing.Dict[str, typing.Any]:
    return {edge.key: state.result for edge, state in upstream_states.items() if edge.key is not None}
