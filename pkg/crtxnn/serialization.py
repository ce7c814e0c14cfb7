"""
The ``.crtx`` model container.

Layout (big-endian)::

    b"CRTX" | u16 format version | u64 payload length | u32 CRC-32 of payload | payload

The payload is an ``np.savez`` archive holding a JSON header (config snapshot, sense
keys, reflection stats, network configs) and one array per network parameter vector
and tree field. Nothing is returned unless the whole file checks out.
"""
import dataclasses
import io
import json
import os
import pathlib
import struct
import typing
import zlib

import numpy as np
from prefect.utilities.logging import get_logger

from crtxnn import nets, tree
from crtxnn.cortex import AssociationArea, CortexModel, ReflectionStats, SenseKey

logger = get_logger("crtxnn.serialization")

MAGIC = b"CRTX"
FORMAT_VERSION = 1
_PREAMBLE = struct.Struct(">4sHQI")

PathLike = typing.Union[str, pathlib.Path]


class ModelFormatError(ValueError):
    pass


class VersionError(ModelFormatError):
    pass


class ChecksumError(ModelFormatError):
    pass


class TruncatedModelError(ModelFormatError):
    pass


def _header(model: CortexModel) -> dict:
    areas = []
    for key, area in model.areas.items():
        areas.append({
            "key": str(key),
            "kind": area.kind,
            "tree_features": area.tree_features,
            "has_classifier": area.classifier is not None,
            "stats": dataclasses.asdict(area.stats) if area.stats is not None else None,
            "networks": [{"id": net.id, "config": net.config.to_dict()} for net in area.networks],
        })
    return {"format_version": FORMAT_VERSION, "config": model.config, "areas": areas}


def encode_model(model: CortexModel) -> bytes:
    arrays = {"header": np.frombuffer(json.dumps(_header(model), sort_keys=True).encode("utf-8"), dtype=np.uint8)}
    for a, area in enumerate(model.areas.values()):
        for net in area.networks:
            arrays[f"area{a}_net{net.id}"] = net.params
        if area.classifier is not None:
            for field, values in tree.to_arrays(area.classifier).items():
                arrays[f"area{a}_tree_{field}"] = values
    buffer = io.BytesIO()
    np.savez(buffer, **arrays)
    payload = buffer.getvalue()
    return _PREAMBLE.pack(MAGIC, FORMAT_VERSION, len(payload), zlib.crc32(payload)) + payload


def decode_model(raw: bytes, source: str = "<bytes>") -> CortexModel:
    if len(raw) < _PREAMBLE.size:
        raise TruncatedModelError(f"{source}: {len(raw)} bytes is shorter than the {_PREAMBLE.size}-byte preamble")
    magic, version, length, checksum = _PREAMBLE.unpack_from(raw)
    if magic != MAGIC:
        raise ModelFormatError(f"{source}: not a crtx model (magic {magic!r})")
    if version != FORMAT_VERSION:
        raise VersionError(f"{source}: format version {version}, this build reads version {FORMAT_VERSION}")
    payload = raw[_PREAMBLE.size:]
    if len(payload) < length:
        raise TruncatedModelError(f"{source}: payload declares {length} bytes, only {len(payload)} present")
    payload = payload[:length]
    if zlib.crc32(payload) != checksum:
        raise ChecksumError(f"{source}: checksum mismatch (stored {checksum:08x}, computed {zlib.crc32(payload):08x})")

    try:
        with np.load(io.BytesIO(payload), allow_pickle=False) as archive:
            arrays = {name: archive[name] for name in archive.files}
        header = json.loads(arrays["header"].tobytes().decode("utf-8"))
        return _model_from(header, arrays)
    except (KeyError, ValueError, TypeError) as error:
        raise ModelFormatError(f"{source}: malformed payload: {error}")


def _model_from(header: dict, arrays: typing.Mapping[str, np.ndarray]) -> CortexModel:
    areas = {}
    for a, entry in enumerate(header["areas"]):
        key = SenseKey.parse(entry["key"])
        networks = [
            nets.BaseNetwork(
                id=net["id"],
                config=nets.NetworkConfig.from_dict(net["config"]),
                params=arrays[f"area{a}_net{net['id']}"].copy(),
            )
            for net in entry["networks"]
        ]
        classifier = None
        if entry["has_classifier"]:
            prefix = f"area{a}_tree_"
            classifier = tree.from_arrays({name[len(prefix):]: values for name, values in arrays.items()
                                           if name.startswith(prefix)})
        stats = ReflectionStats(**entry["stats"]) if entry["stats"] is not None else None
        areas[key] = AssociationArea(key=key, kind=entry["kind"], networks=networks, classifier=classifier,
                                     stats=stats, tree_features=entry["tree_features"])
    return CortexModel(areas=areas, config=header["config"])


def save_model(model: CortexModel, path: PathLike) -> pathlib.Path:
    """Write ``model`` to ``path``, replacing any existing file only once the new one is complete."""
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    partial = path.with_name(path.name + ".partial")
    with open(partial, "wb") as f:
        f.write(encode_model(model))
    os.replace(partial, path)
    logger.info("saved model with %d network(s) to %s", model.network_count(), path)
    return path


def load_model(path: PathLike) -> CortexModel:
    """
    Read a ``.crtx`` file.

    Raises
    ------
    VersionError
        The file was written by a different format version (checked before the payload).
    ChecksumError
        The payload does not match its stored CRC-32.
    TruncatedModelError
        The file ends before the declared payload does.
    ModelFormatError
        Bad magic or an unreadable payload.
    """
    path = pathlib.Path(path)
    with open(path, "rb") as f:
        raw = f.read()
    return decode_model(raw, str(path))
