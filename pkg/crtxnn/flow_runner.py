from typing import Any, Callable, Dict, Iterable, Set

from prefect.core.edge import Edge
from prefect.core.task import Task
from prefect.engine.flow_runner import FlowRunner
from prefect.engine.state import State

from crtxnn.result import PurgedResultType, summarize


class CortexFlowRunner(FlowRunner):
    """
    A ``FlowRunner`` that drops a task's result as soon as every task downstream of
    it has succeeded, so raw image datasets and the mixed sample list do not stay in
    memory while networks train. Terminal tasks keep their results.
    """

    def get_flow_run_state(
        self,
        state: State,
        task_states: Dict[Task, State],
        task_contexts: Dict[Task, Dict[str, Any]],
        return_tasks: Set[Task],
        task_runner_state_handlers: Iterable[Callable],
        executor: "prefect.engine.executors.base.Executor",
    ) -> State:
        self.task_states = task_states
        return super().get_flow_run_state(
            state=state,
            task_states=task_states,
            task_contexts=task_contexts,
            return_tasks=return_tasks,
            task_runner_state_handlers=task_runner_state_handlers,
            executor=executor
        )

    def run_task(
        self,
        task: Task,
        state: State,
        upstream_states: Dict[Edge, State],
        context: Dict[str, Any],
        task_runner_state_handlers: Iterable[Callable],
        executor: "prefect.engine.executors.Executor",
    ) -> State:
        task_output = super().run_task(
            task=task,
            state=state,
            upstream_states=upstream_states,
            context=context,
            task_runner_state_handlers=task_runner_state_handlers,
            executor=executor
        )
        self._purge_consumed(task, upstream_states)
        return task_output

    def _is_consumed(self, upstream_task: Task, current: Task) -> bool:
        for edge in self.flow.edges_from(upstream_task):
            if edge.downstream_task == current:
                continue
            downstream_state = self.task_states.get(edge.downstream_task)
            if downstream_state is None or not downstream_state.is_successful():
                return False
        return True

    def _purge_consumed(self, task: Task, upstream_states: Dict[Edge, State]):
        for edge in upstream_states:
            upstream_task = edge.upstream_task
            # constants passed as task inputs are not tasks of the flow
            if upstream_task not in self.flow.tasks or upstream_task not in self.task_states:
                continue
            if not self._is_consumed(upstream_task, task):
                continue
            upstream_state = self.task_states[upstream_task]
            if isinstance(upstream_state._result, PurgedResultType):
                continue
            if upstream_state.is_mapped():
                for mapped_state in upstream_state.map_states:
                    mapped_state._result = PurgedResultType(summarize(mapped_state.result))
            purged = PurgedResultType(summarize(upstream_state.result))
            self.logger.debug("Purging result of task '%s': %s", upstream_task.name, purged.summary)
            upstream_state._result = purged
