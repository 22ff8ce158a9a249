"""
Deterministic seeding for reproducible experiments

Every random draw in the lab comes from a numpy Generator derived from the
experiment's master seed. Streams are forked by label (SeedSequence spawn keys),
so the same (seed, label) pair always yields the same stream no matter how many
workers run or in which order replicates finish.

Environment trees use counter-based Philox streams keyed per vertex: the root
key comes from the tree seed and every vertex draws its children's keys from its
own stream, so a vertex's marks are a function of its root-to-vertex path only.
"""

import hashlib
from typing import List, Union

import numpy as np

Label = Union[int, str]


def _label_word(label: Label) -> int:
    """Map a label to a 32-bit word (strings hashed, ints passed through)"""
    if isinstance(label, (int, np.integer)):
        return int(label) & 0xFFFFFFFF
    digest = hashlib.sha256(str(label).encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def fork(master_seed: int, *labels: Label) -> np.random.SeedSequence:
    """Derive an independent SeedSequence for a labelled sub-stream"""
    return np.random.SeedSequence(
        entropy=int(master_seed),
        spawn_key=tuple(_label_word(label) for label in labels),
    )


def generator(master_seed: int, *labels: Label) -> np.random.Generator:
    """Generator for a labelled sub-stream"""
    return np.random.Generator(np.random.PCG64(fork(master_seed, *labels)))


def batch_seeds(master_seed: int, label: Label, n_batches: int) -> List[np.random.SeedSequence]:
    """One SeedSequence per replication batch, in batch order"""
    return fork(master_seed, label).spawn(n_batches)


def derived_seed(master_seed: int, *labels: Label) -> int:
    """A 63-bit integer seed for objects that take a plain seed (EnvTree)"""
    state = fork(master_seed, *labels).generate_state(2, np.uint64)
    return int(state[0]) >> 1


def vertex_root_key(tree_seed: int) -> int:
    """128-bit Philox key of the root vertex"""
    words = np.random.SeedSequence(int(tree_seed)).generate_state(2, np.uint64)
    return (int(words[0]) << 64) | int(words[1])


def vertex_stream(key: int) -> np.random.Generator:
    """Counter-based stream owned by one vertex"""
    return np.random.Generator(np.random.Philox(key=key))


def child_keys(stream: np.random.Generator, count: int) -> List[int]:
    """Draw the Philox keys of a vertex's children from the vertex's own stream"""
    if count == 0:
        return []
    words = stream.integers(0, 2**64 - 1, size=(count, 2), dtype=np.uint64, endpoint=True)
    return [(int(hi) << 64) | int(lo) for hi, lo in words]
