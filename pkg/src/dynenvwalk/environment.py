"""Per-site environment chains, materialized lazily and deterministically.

Two exact modes are provided:

* **replay** (:class:`EnvironmentReplay`) — the state at (site, t) is a pure
  function of the environment seed: scan the refresh coins backward from t to
  the most recent refresh, draw the refreshed state from the stationary
  vector, then replay residual-kernel steps forward.  Identical for every
  caller, which is what makes a shared (quenched) environment consistent
  between walkers.

* **deferred decision** (:func:`fast_forward` over :class:`SiteRecord`) — for
  a single annealed walk, the chain at a visited site is summarized by the
  time of its last proper visit, the state observed there, and a sampled
  clearance (first refresh strictly after that visit).  Queries before the
  clearance advance the state by a residual-kernel power; queries at or after
  it are fresh stationary draws.  Exact because the stationary vector is
  preserved by every kernel in play.

Refresh-coin indexing: the coin at time u >= 1 decides the chain step from
time u-1 to time u, so "refresh at u" means the state *at* u is a fresh
stationary draw.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import DomainError, ModelSpec
from .randomness import (LABEL_ALPHA, LABEL_INIT, LABEL_KTILDE, LABEL_PI,
                         uniform)

POWER_CACHE_CEILING_LOG2 = 40
_SCAN_GUARD = 10**7


class FastForwardError(ValueError):
    """Contract violation in a deferred-decision query."""


@dataclass
class SiteRecord:
    """Lazy per-site state: last proper visit, pending clearance, state seen.

    Invariant: clearance > gamma >= 0.
    """

    gamma: int
    clearance: int
    state_at_gamma: int

    def __post_init__(self):
        if not self.clearance > self.gamma >= 0:
            raise ValueError(
                f"clearance must exceed gamma >= 0, got gamma={self.gamma} "
                f"clearance={self.clearance}")


class PowerCache:
    """Binary powers of the residual kernel for O(log gap) fast-forwarding."""

    def __init__(self, ktilde: np.ndarray, ceiling_log2: int = POWER_CACHE_CEILING_LOG2):
        self.ceiling_log2 = ceiling_log2
        self._powers = [np.asarray(ktilde, dtype=float)]

    def _power(self, j: int) -> np.ndarray:
        while len(self._powers) <= j:
            nxt = self._powers[-1] @ self._powers[-1]
            rowsums = nxt.sum(axis=1)
            if np.max(np.abs(rowsums - 1.0)) > 1e-10:
                raise FastForwardError(
                    f"cached kernel power 2^{len(self._powers)} drifted from "
                    f"row-stochastic by {np.max(np.abs(rowsums - 1.0)):.2e}")
            self._powers.append(nxt)
        return self._powers[j]

    def row(self, state: int, steps: int) -> np.ndarray:
        """Distribution of the chain ``steps`` residual moves after ``state``."""
        if steps < 1:
            raise FastForwardError(f"power gap must be >= 1, got {steps}")
        if steps >> self.ceiling_log2:
            raise FastForwardError(
                f"fast-forward gap {steps} exceeds the 2^{self.ceiling_log2} ceiling")
        k = self._powers[0].shape[0]
        row = np.zeros(k)
        row[state] = 1.0
        j = 0
        while steps:
            if steps & 1:
                row = row @ self._power(j)
            steps >>= 1
            j += 1
        return row


def _draw_from_cdf(cdf: np.ndarray, u: float) -> int:
    return bisect_right(cdf, u)


def _cdf(p: np.ndarray) -> np.ndarray:
    c = np.cumsum(np.asarray(p, dtype=float))
    c[-1] = 1.0
    return c


def alpha_coin(seed: int, site: Sequence[int], t: int, kappa: float) -> int:
    """Refresh coin at (site, t), t >= 1: 1 with probability kappa."""
    if t < 1:
        raise DomainError(f"refresh coins start at time 1, got t={t}")
    return 1 if uniform(seed, LABEL_ALPHA, time=t, site=site) < kappa else 0


def sample_clearance(t_visit: int, kappa: float, rng: np.random.Generator) -> int:
    """First refresh time strictly after a proper visit at ``t_visit``.

    Geometric on {1, 2, ...} with success probability kappa, added to
    t_visit; deferred-decision twin of the replay-mode forward coin scan.
    """
    if kappa <= 0.0:
        raise DomainError(f"kappa must be positive, got {kappa}")
    if t_visit < 0:
        raise DomainError(f"visit time must be >= 0, got {t_visit}")
    if kappa >= 1.0:
        return t_visit + 1
    return t_visit + int(rng.geometric(kappa))


def fast_forward(record: SiteRecord, t_target: int, power_cache: PowerCache,
                 pi_cdf: np.ndarray, rng: np.random.Generator) -> int:
    """State at ``t_target`` given a site record (single-walk annealed mode).

    Before the clearance no refresh has happened, so the state is a single
    draw from the residual kernel raised to the gap; at or past the
    clearance the chain has refreshed and the stationary draw is exact.
    """
    if t_target <= record.gamma:
        raise FastForwardError(
            f"fast_forward needs t_target > gamma, got {t_target} <= {record.gamma}")
    u = float(rng.random())
    if t_target >= record.clearance:
        return _draw_from_cdf(pi_cdf, u)
    row = power_cache.row(record.state_at_gamma, t_target - record.gamma)
    return _draw_from_cdf(_cdf(row), u)


class EnvironmentReplay:
    """Shared, replayable environment: states are pure functions of the seed.

    The optional memo is an insert-only cache; correctness never depends on
    it.  ``scan_steps``/``queries`` count backward-scan work for the
    scan-cost diagnostic.
    """

    def __init__(self, spec: ModelSpec, seed: int, memoize: bool = True):
        self.spec = spec
        self.seed = int(seed)
        self.kappa = spec.kappa
        self.pi_cdf = _cdf(spec.pi)
        self.ktilde_cdf = np.cumsum(spec.ktilde, axis=1)
        self.ktilde_cdf[:, -1] = 1.0
        self._memo: dict[tuple, int] | None = {} if memoize else None
        self.scan_steps = 0
        self.queries = 0

    def _alpha(self, site: Sequence[int], t: int) -> bool:
        return uniform(self.seed, LABEL_ALPHA, time=t, site=site) < self.kappa

    def state(self, site: Sequence[int], t: int) -> int:
        """State index of the chain at ``site`` at time ``t`` (t >= 0)."""
        site = tuple(site)
        self.queries += 1
        memo = self._memo
        if memo is not None:
            hit = memo.get((site, t))
            if hit is not None:
                return hit
        # Walk backward to the most recent refresh (or a memoized earlier
        # state, which already accounts for any refresh at its own time).
        u = t
        s = -1
        while u >= 1:
            if memo is not None and u < t:
                hit = memo.get((site, u))
                if hit is not None:
                    s = hit
                    break
            self.scan_steps += 1
            if self._alpha(site, u):
                s = _draw_from_cdf(
                    self.pi_cdf, uniform(self.seed, LABEL_PI, time=u, site=site))
                break
            u -= 1
        if s < 0:
            # No refresh since time 1: independent stationary draw at time 0.
            u = 0
            s = _draw_from_cdf(
                self.pi_cdf, uniform(self.seed, LABEL_INIT, time=0, site=site))
            if memo is not None:
                memo[(site, 0)] = s
        for w in range(u + 1, t + 1):
            uu = uniform(self.seed, LABEL_KTILDE, time=w, site=site)
            s = _draw_from_cdf(self.ktilde_cdf[s], uu)
            if memo is not None:
                memo[(site, w)] = s
        return s

    def clearance(self, site: Sequence[int], t: int) -> int:
        """First refresh time strictly after ``t`` (forward coin scan)."""
        site = tuple(site)
        for s in range(1, _SCAN_GUARD):
            if self._alpha(site, t + s):
                return t + s
        raise DomainError(
            f"no refresh within {_SCAN_GUARD} steps after t={t}; kappa={self.kappa}")
