from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master_seed: int, *labels: object) -> int:
    """64-bit sub-seed from a master seed and purpose labels.

    Subsystems draw from their own labelled streams so one cannot perturb another.
    """
    material = ":".join([str(int(master_seed))] + [str(label) for label in labels])
    digest = hashlib.blake2b(material.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def make_rng(master_seed: int, *labels: object) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master_seed, *labels))
