"""Shared plumbing: named RNG substreams and deterministic JSON output."""

from __future__ import annotations

import hashlib
import json

import numpy as np


def substream(seed, *names) -> np.random.Generator:
    """Generator derived from a root seed and a name path.

    Every consumer draws from its own named stream, so adding a consumer
    never perturbs the draws seen by existing ones.
    """
    label = "/".join(str(n) for n in names)
    digest = hashlib.sha256(label.encode("utf-8")).digest()[:8]
    entropy = [int(seed) % (2 ** 63), int.from_bytes(digest, "little")]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    return obj


def stable_json(obj) -> str:
    """Key-sorted JSON with native scalars; byte-stable across runs."""
    return json.dumps(_plain(obj), sort_keys=True, indent=2) + "\n"
