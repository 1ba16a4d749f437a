"""Domain-separated random streams derived from a single run seed."""

import hashlib

import numpy as np

__all__ = ["stream_rng", "stream_seed"]


def stream_seed(seed, stream):
    """64-bit sub-seed from ``(seed, stream name)``; new streams never shift old ones."""
    digest = hashlib.sha256(f"{int(seed)}/{stream}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def stream_rng(seed, stream):
    """``numpy`` Generator for the named stream of ``seed``."""
    return np.random.default_rng(stream_seed(seed, stream))
