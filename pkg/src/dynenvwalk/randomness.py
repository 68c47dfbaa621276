"""Counter-based uniform random streams keyed by structured tags.

Every random decision in a simulation run is a pure function of a
:class:`RandomTag` — ``(seed, label, walk_id, time, site)`` — hashed through a
splitmix64 finalizer chain.  Nothing stateful is ever advanced, so

* two walkers sharing a seed see the *same* environment coins at the same
  (site, time) cells, which is what makes a shared environment consistent;
* replicas with distinct seeds or walk ids get statistically independent
  streams without any coordination;
* a run can be replayed bit-for-bit from its manifest.

Byte layout of the chain (documented for reproducibility): starting from
``h = mix64(seed)``, each field is folded in the fixed order
``label_salt, walk_id, time, zigzag(site[0]), ..., zigzag(site[d-1])``
via ``h = mix64(h XOR field)``.  Uniforms are the top 53 bits of the final
hash scaled to [0, 1).  The scalar and vectorized paths are required to be
bit-identical (tested).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_INV53 = float(2.0**-53)

# Stream labels.  The walk-owned streams (EPS, STEP) carry a walk id; the
# environment-owned streams (ALPHA, INIT, PI, KTILDE) are keyed by site and
# shared by every walker on the same seed.
LABEL_ALPHA = 0xA1FA_0001
LABEL_INIT = 0xA1FA_0002
LABEL_PI = 0xA1FA_0003
LABEL_KTILDE = 0xA1FA_0004
LABEL_EPS = 0xA1FA_0005
LABEL_STEP = 0xA1FA_0006

LABEL_NAMES = {
    LABEL_ALPHA: "alpha",
    LABEL_INIT: "init",
    LABEL_PI: "pi",
    LABEL_KTILDE: "ktilde",
    LABEL_EPS: "eps",
    LABEL_STEP: "step",
}


@dataclass(frozen=True)
class RandomTag:
    """Full key of one uniform draw; the draw is a pure function of it."""

    seed: int
    label: int
    walk_id: int = 0
    time: int = 0
    site: tuple[int, ...] = ()


def mix64(x: int) -> int:
    """splitmix64 finalizer on a 64-bit word."""
    x = (int(x) + _GOLDEN) & _MASK64
    x = ((x ^ (x >> 30)) * _MIX1) & _MASK64
    x = ((x ^ (x >> 27)) * _MIX2) & _MASK64
    return x ^ (x >> 31)


def _zigzag(c: int) -> int:
    c = int(c)
    return (c << 1) if c >= 0 else ((-c << 1) - 1)


def stream_base(seed: int, label: int, walk_id: int = 0) -> int:
    """Partial tag hash over the per-stream constant fields."""
    h = mix64(seed & _MASK64)
    h = mix64(h ^ label)
    return mix64(h ^ (walk_id & _MASK64))


def tag_hash(seed: int, label: int, walk_id: int = 0, time: int = 0,
             site: Sequence[int] = ()) -> int:
    h = mix64(stream_base(seed, label, walk_id) ^ (time & _MASK64))
    for c in site:
        h = mix64(h ^ _zigzag(c))
    return h


def uniform(seed: int, label: int, walk_id: int = 0, time: int = 0,
            site: Sequence[int] = ()) -> float:
    """Uniform in [0, 1) for one tag (scalar path)."""
    return (tag_hash(seed, label, walk_id, time, site) >> 11) * _INV53


def uniform_from_tag(tag: RandomTag) -> float:
    return uniform(tag.seed, tag.label, tag.walk_id, tag.time, tag.site)


# ---------------------------------------------------------------------------
# Vectorized twin.  Operates on uint64 arrays and must match the scalar path
# bit for bit; uint64 arithmetic wraps like the masked Python-int version.
# ---------------------------------------------------------------------------

_U_GOLDEN = np.uint64(_GOLDEN)
_U_MIX1 = np.uint64(_MIX1)
_U_MIX2 = np.uint64(_MIX2)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)


def mix64_vec(x: np.ndarray) -> np.ndarray:
    x = x + _U_GOLDEN
    x = (x ^ (x >> _S30)) * _U_MIX1
    x = (x ^ (x >> _S27)) * _U_MIX2
    return x ^ (x >> _S31)


def _zigzag_vec(c: np.ndarray) -> np.ndarray:
    c = c.astype(np.int64, copy=False)
    return ((c << np.int64(1)) ^ (c >> np.int64(63))).astype(np.uint64)


def stream_base_vec(seed, label: int, walk_id=0) -> np.ndarray:
    # at least 1-d: scalar (0-d) unsigned ops would raise overflow warnings
    seed = np.atleast_1d(np.asarray(seed, dtype=np.uint64))
    h = mix64_vec(seed)
    h = mix64_vec(h ^ np.uint64(label))
    return mix64_vec(h ^ np.asarray(walk_id, dtype=np.uint64))


def _fold_site(h: np.ndarray, site) -> np.ndarray:
    site = np.asarray(site)
    if site.ndim == 1:
        site = site[:, None]
    for i in range(site.shape[1]):
        h = mix64_vec(h ^ _zigzag_vec(site[..., i]))
    return h


def tag_hash_vec(seed, label: int, walk_id=0, time=0, site=None) -> np.ndarray:
    """Vectorized tag hash; ``seed``/``walk_id``/``time`` broadcast, ``site``
    is an (N, d) integer array (or None for site-free streams)."""
    h = mix64_vec(stream_base_vec(seed, label, walk_id)
                  ^ np.asarray(time, dtype=np.uint64))
    if site is not None:
        h = _fold_site(h, site)
    return h


def uniform_vec(seed, label: int, walk_id=0, time=0, site=None) -> np.ndarray:
    return (tag_hash_vec(seed, label, walk_id, time, site) >> _S11) * _INV53


def uniform_at_vec(base: np.ndarray, time, site=None) -> np.ndarray:
    """Uniforms from precomputed stream bases (see :func:`stream_base_vec`)."""
    h = mix64_vec(base ^ np.asarray(time, dtype=np.uint64))
    if site is not None:
        h = _fold_site(h, site)
    return (h >> _S11) * _INV53


def derive_seed(master: int, purpose: str, index: int = 0) -> int:
    """Child seed for a named purpose and replica index.

    Used by the CLI so that every replica / sub-experiment has an
    independent stream family while staying a pure function of the master
    seed (``hash(master, purpose-label, replica-index)``).
    """
    h = mix64(master & _MASK64)
    for b in purpose.encode("utf-8"):
        h = mix64(h ^ b)
    return mix64(h ^ (index & _MASK64))


def derive_seeds(master: int, purpose: str, count: int) -> np.ndarray:
    """Vector of ``count`` child seeds (uint64), one per replica index."""
    h = mix64(master & _MASK64)
    for b in purpose.encode("utf-8"):
        h = mix64(h ^ b)
    idx = np.arange(count, dtype=np.uint64)
    return mix64_vec(np.uint64(h) ^ idx)
