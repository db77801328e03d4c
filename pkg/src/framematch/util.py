"""Seed derivation and small shared helpers."""
from __future__ import annotations

import hashlib
from concurrent.futures import ProcessPoolExecutor

import numpy as np

_MAX_SEED = 2**63 - 1


def derive_seed(base_seed: int, *labels) -> int:
    """Stable child seed from a base seed and a path of labels.

    Hash-based so that independent jobs never share a stream and the same
    (seed, labels) pair reproduces bit-identically across platforms.
    """
    text = repr(int(base_seed)) + "/" + "/".join(str(part) for part in labels)
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") & _MAX_SEED


def derive_rng(base_seed: int, *labels) -> np.random.Generator:
    return np.random.default_rng(derive_seed(base_seed, *labels))


def run_jobs(fn, jobs, workers: int = 1) -> list:
    """Map fn over independent jobs, optionally on a bounded process pool.

    Results come back in job order, so aggregation downstream is identical
    whether the jobs ran serially or concurrently.
    """
    if workers <= 1:
        return [fn(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))
