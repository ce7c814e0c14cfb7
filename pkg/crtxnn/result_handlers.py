import pathlib
import typing

import pandas as pd
from prefect.engine.result_handlers.result_handler import ResultHandler

from crtxnn.config import config_digest
from crtxnn.cortex import CortexModel
from crtxnn.serialization import load_model, save_model


class StaleCheckpointError(FileNotFoundError):
    """A model file exists but was learned from a different configuration."""


class TemplatedResultHandler(ResultHandler):
    """
    Base for handlers whose file path may contain ``str.format`` fields named after
    the task's arguments, e.g. ``"runs/{name}/metrics.csv"``. Only handlers of this
    type are read and written by ``crtxnn.checkpointing.checkpoint_handler``.

    Parameters
    ----------
    path : str or pathlib.Path
        Filepath to be read from or written to, including file name and extension.
    """

    def __init__(self, path: typing.Union[str, pathlib.Path]):
        self.path = pathlib.Path(path)
        super().__init__()

    def resolve(self, input_mapping: typing.Optional[dict] = None) -> pathlib.Path:
        input_mapping = {} if input_mapping is None else input_mapping
        return pathlib.Path(str(self.path).format(**input_mapping))


class PandasResultHandler(TemplatedResultHandler):
    """
    Store and retrieve ``DataFrame`` reports. Writes use the ``to_<file_type>`` method,
    reads the matching ``pd.read_<file_type>``. CSV output defaults to no index and
    ``%.17g`` floats, so equal frames always give byte-identical files.

    Parameters
    ----------
    path : str or pathlib.Path
        Filepath, may be templated (see ``TemplatedResultHandler``).
    file_type : str
        ``"csv"`` or ``"json"``.
    read_kwargs, write_kwargs : dict or None
        Extra keyword arguments for the pandas reader and writer.
    """
    _IO_OPS = {
        "csv": (pd.read_csv, {"float_precision": "round_trip"}, "to_csv", {"index": False, "float_format": "%.17g"}),
        "json": (pd.read_json, {"orient": "records"}, "to_json", {"orient": "records", "double_precision": 15}),
    }

    def __init__(
            self,
            path: typing.Union[str, pathlib.Path],
            file_type: str = "csv",
            read_kwargs: dict = None,
            write_kwargs: dict = None
    ):
        if file_type.lower() not in self._IO_OPS:
            raise ValueError(
                f"{file_type} not available. "
                f"Known file types are {list(self._IO_OPS)}"
            )
        self.file_type = file_type.lower()
        _, default_read_kwargs, _, default_write_kwargs = self._IO_OPS[self.file_type]
        self.read_kwargs = dict(default_read_kwargs, **(read_kwargs or {}))
        self.write_kwargs = dict(default_write_kwargs, **(write_kwargs or {}))
        super().__init__(path)

    def read(self, *, input_mapping=None) -> pd.DataFrame:
        path = self.resolve(input_mapping)
        self.logger.debug("Starting to read result from {}...".format(path))
        reader, _, _, _ = self._IO_OPS[self.file_type]
        data = reader(str(path), **self.read_kwargs)
        self.logger.debug("Finished reading result from {}...".format(path))
        return data

    def write(self, result: pd.DataFrame, input_mapping=None) -> pathlib.Path:
        path = self.resolve(input_mapping)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.logger.debug("Starting to write result to {}...".format(path))
        _, _, writer, _ = self._IO_OPS[self.file_type]
        getattr(result, writer)(str(path), **self.write_kwargs)
        self.logger.debug("Finished writing result to {}...".format(path))
        return path


class ModelResultHandler(TemplatedResultHandler):
    """
    Store and retrieve a ``CortexModel`` as a ``.crtx`` file.

    Parameters
    ----------
    path : str or pathlib.Path
        Filepath, may be templated.
    expected_digest : str or None
        If given, ``read`` only accepts a model whose stored configuration has this
        ``config_digest``; any other model raises ``StaleCheckpointError``.
    """

    def __init__(self, path: typing.Union[str, pathlib.Path], expected_digest: typing.Optional[str] = None):
        self.expected_digest = expected_digest
        super().__init__(path)

    def read(self, *, input_mapping=None) -> CortexModel:
        path = self.resolve(input_mapping)
        self.logger.debug("Starting to read result from {}...".format(path))
        model = load_model(path)
        if self.expected_digest is not None:
            found = config_digest(model.config) if model.config else None
            if found != self.expected_digest:
                raise StaleCheckpointError(f"{path} was learned from a different configuration")
        self.logger.debug("Finished reading result from {}...".format(path))
        return model

    def write(self, result: CortexModel, input_mapping=None) -> pathlib.Path:
        path = self.resolve(input_mapping)
        self.logger.debug("Starting to write result to {}...".format(path))
        save_model(result, path)
        self.logger.debug("Finished writing result to {}...".format(path))
        return path
