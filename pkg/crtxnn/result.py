from typing import Any

from prefect.engine.result import SafeResult
from prefect.engine.result_handlers import ResultHandler


def summarize(value: Any) -> str:
    """A short description of a value that is about to be dropped."""
    if hasattr(value, "inputs") and hasattr(value, "targets"):
        return f"{type(value).__name__} of {len(value)} sample(s)"
    if isinstance(value, dict):
        return f"dict of {len(value)} item(s): " + ", ".join(str(key) for key in list(value)[:4])
    if isinstance(value, (list, tuple)):
        return f"{type(value).__name__} of {len(value)} item(s)"
    if hasattr(value, "shape"):
        return f"{type(value).__name__} of shape {tuple(value.shape)}"
    return type(value).__name__


class PurgedResultType(SafeResult):
    """
    A ``SafeResult`` standing in for a task result that was dropped from memory once
    every downstream task had consumed it. It keeps a short ``summary`` of what was
    dropped; its ``value`` is ``None``. All purged results compare equal.
    """

    def __init__(self, summary: str = "") -> None:
        self.summary = summary
        super().__init__(value=None, result_handler=ResultHandler())

    def __eq__(self, other: Any) -> bool:
        return type(self) == type(other)

    def __hash__(self) -> int:
        return hash(type(self))

    def __repr__(self) -> str:
        return f"<Purged result: {self.summary}>" if self.summary else "<Purged result>"

    def __str__(self) -> str:
        return "PurgedResult"

    def to_result(self, result_handler: ResultHandler = None) -> "ResultInterface":
        return self


PurgedResult = PurgedResultType()
