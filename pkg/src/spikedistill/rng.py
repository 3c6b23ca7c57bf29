"""Per-purpose random streams derived from one master seed.

Every stream is numpy's Philox-4x64 counter-based generator keyed through a
``SeedSequence(master_seed, spawn_key=(purpose, *extra))``. Streams for
different purposes never share state, so e.g. changing the blur ratio does not
perturb weight initialisation or batch order.
"""
from __future__ import annotations

import numpy as np

# purpose codes are part of the reproducibility contract; never renumber
PURPOSES = {
    "init": 1,
    "mask": 2,
    "shuffle": 3,
    "subset": 4,
    "augment": 5,
    "test": 99,
}


def stream(seed: int, purpose: str, *extra: int) -> np.random.Generator:
    if purpose not in PURPOSES:
        raise KeyError(f"unknown rng purpose {purpose!r}")
    ss = np.random.SeedSequence(int(seed), spawn_key=(PURPOSES[purpose], *map(int, extra)))
    return np.random.Generator(np.random.Philox(ss))


def get_state(gen: np.random.Generator) -> dict[str, np.ndarray]:
    """Flatten a Philox generator state into uint64 arrays (checkpoint friendly)."""
    st = gen.bit_generator.state
    if st["bit_generator"] != "Philox":
        raise TypeError("only Philox streams are checkpointable")
    inner = st["state"]
    return {
        "counter": np.asarray(inner["counter"], dtype=np.uint64),
        "key": np.asarray(inner["key"], dtype=np.uint64),
        "buffer": np.asarray(st["buffer"], dtype=np.uint64),
        "misc": np.array([st["buffer_pos"], st["has_uint32"], st["uinteger"]], dtype=np.uint64),
    }


def set_state(gen: np.random.Generator, flat: dict[str, np.ndarray]) -> None:
    misc = flat["misc"]
    gen.bit_generator.state = {
        "bit_generator": "Philox",
        "state": {"counter": flat["counter"].copy(), "key": flat["key"].copy()},
        "buffer": flat["buffer"].copy(),
        "buffer_pos": int(misc[0]),
        "has_uint32": int(misc[1]),
        "uinteger": int(misc[2]),
    }
