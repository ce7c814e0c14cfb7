"""
Named sub-seeds. Every random draw in an experiment comes from a generator seeded
with ``sub_seed(experiment_seed, "some", "path")``, so adding a new consumer never
shifts the numbers an existing consumer sees.
"""
import typing
import zlib

import numpy as np


def sub_seed(seed: int, *names: typing.Union[str, int]) -> int:
    """
    Derive an independent 32-bit seed from ``seed`` and a path of names.

    Parameters
    ----------
    seed : int
        The experiment (or caller) seed.
    *names : str or int
        Path identifying the consumer, e.g. ``("init", "area", 0, "net", 2)``.

    Returns
    -------
    int
        A seed that depends only on ``seed`` and ``names``.
    """
    spawn_key = tuple(
        name if isinstance(name, int) else zlib.crc32(str(name).encode("utf-8"))
        for name in names
    )
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=spawn_key)
    return int(sequence.generate_state(1, dtype=np.uint32)[0])


def rng(seed: int, *names: typing.Union[str, int]) -> np.random.Generator:
    return np.random.default_rng(sub_seed(seed, *names))
