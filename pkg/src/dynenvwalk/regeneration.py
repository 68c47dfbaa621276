"""Online regeneration detection and renewal blocks.

A site is "properly visited" at time t when the departure from it consults
the environment (reference coin = 0).  Each properly visited site carries a
clearance: the first refresh of its chain strictly after the last proper
visit.  A regeneration happens at the first time exceeding every clearance;
from that time on, all chains at visited sites have restarted from the
stationary law, so the (duration, displacement) increments between
consecutive regenerations are i.i.d.  Detection is O(1) per step via a
running maximum of clearances.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .environment import SiteRecord, sample_clearance


class OrderingError(ValueError):
    """Events fed to the tracker out of time order."""


class InsufficientDataError(ValueError):
    """Too few samples/blocks for the requested statistic."""


@dataclass(frozen=True)
class RenewalBlock:
    """One (duration, displacement) increment between regenerations."""

    dtau: int
    dx: np.ndarray

    def __post_init__(self):
        dx = np.asarray(self.dx, dtype=np.int64)
        object.__setattr__(self, "dx", dx)
        if self.dtau < 1:
            raise ValueError(f"block duration must be >= 1, got {self.dtau}")
        if int(np.abs(dx).sum()) > self.dtau:
            raise ValueError(
                f"|dx|_1 = {int(np.abs(dx).sum())} exceeds duration {self.dtau}")


class RegenTracker:
    """Per-walk bookkeeping of proper visits, clearances and regenerations.

    ``max_clearance`` equals the running max of clearances over tracked
    sites, or ``last_tau`` when no site is tracked; after each regeneration
    the site records are discarded wholesale.
    """

    def __init__(self, last_tau: int = 0):
        self.site_records: dict[tuple, SiteRecord] = {}
        self.last_tau = last_tau
        self.max_clearance = last_tau

    def note_proper_visit(self, x: Sequence[int], t: int, state: int,
                          rng: np.random.Generator | None = None,
                          kappa: float | None = None,
                          clearance: int | None = None) -> None:
        """Record a proper visit at site ``x`` at time ``t``.

        The clearance is either supplied (replay mode: deterministic forward
        coin scan) or resolved here: a pending clearance that still lies in
        the future is retained (memorylessness); otherwise a fresh geometric
        clearance is sampled from ``rng``.
        """
        if t < self.last_tau:
            raise OrderingError(
                f"proper visit at t={t} precedes the last regeneration {self.last_tau}")
        x = tuple(x)
        if clearance is None:
            rec = self.site_records.get(x)
            if rec is not None and rec.clearance > t:
                clearance = rec.clearance
            else:
                if rng is None or kappa is None:
                    raise ValueError("need rng and kappa to sample a clearance")
                clearance = sample_clearance(t, kappa, rng)
        self.site_records[x] = SiteRecord(t, clearance, state)
        if clearance > self.max_clearance:
            self.max_clearance = clearance

    def check_regeneration(self, t: int) -> bool:
        """True iff ``t`` exceeds every pending clearance (and the last tau)."""
        if t <= self.last_tau:
            raise OrderingError(
                f"regeneration check at t={t} not after last tau {self.last_tau}")
        return t > self.max_clearance

    def reset(self, tau: int) -> None:
        """Start a fresh block at regeneration time ``tau``."""
        self.site_records.clear()
        self.last_tau = tau
        self.max_clearance = tau


def extract_blocks(run) -> list[RenewalBlock]:
    """Cut a completed run into renewal blocks.

    The blocks partition [0, tau_N]: durations sum to the last regeneration
    time and displacements sum to the position there.  A run with no
    regeneration yields an empty list (callers decide).
    """
    taus = list(run.taus)
    if not taus:
        return []
    blocks = []
    prev_t = 0
    prev_x = run.positions[0]
    for tau in taus:
        blocks.append(RenewalBlock(tau - prev_t, run.positions[tau] - prev_x))
        prev_t = tau
        prev_x = run.positions[tau]
    return blocks


def blocks_to_arrays(blocks: Sequence[RenewalBlock]) -> tuple[np.ndarray, np.ndarray]:
    """(durations (N,), displacements (N, d)) arrays from a block list."""
    if len(blocks) == 0:
        raise InsufficientDataError("no blocks")
    dtau = np.array([b.dtau for b in blocks], dtype=np.int64)
    dx = np.stack([b.dx for b in blocks]).astype(np.int64)
    return dtau, dx


# ---------------------------------------------------------------------------
# Tail statistics of the first regeneration time
# ---------------------------------------------------------------------------

@dataclass
class MomentEstimate:
    order: float
    value: float
    half_value: float
    doubling_stable: bool

    def to_dict(self) -> dict:
        return {"order": self.order, "value": self.value,
                "half_value": self.half_value,
                "doubling_stable": self.doubling_stable}


@dataclass
class TauTailReport:
    n_samples: int
    times: np.ndarray            # integer ts with positive empirical survival
    survival: np.ndarray         # P(tau > t) at those ts
    tail_slope: float            # -d log S / d log t, least squares on the window
    fit_window: tuple[float, float]
    fit_points: int
    moments: list[MomentEstimate] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "times": self.times.tolist(),
            "survival": self.survival.tolist(),
            "tail_slope": self.tail_slope,
            "fit_window": list(self.fit_window),
            "fit_points": self.fit_points,
            "moments": [m.to_dict() for m in self.moments],
        }


def tau_tail_stats(samples, gamma: float | None = None,
                   fit_window: tuple[float, float] | None = None,
                   min_samples: int = 1000) -> TauTailReport:
    """Survival curve, fitted tail exponent and moment table for tau samples.

    The log-log slope is fitted over ``fit_window`` restricted to times with
    positive empirical survival; if fewer than 3 such points exist there, the
    fit falls back to the upper decade of the observed range.  Moments are
    reported for orders 1, 2 and gamma - 0.5 (when gamma is given), each with
    a doubling-stability flag: half-sample estimate within 10% of the full
    one.
    """
    samples = np.asarray(samples, dtype=np.int64)
    if samples.size < min_samples:
        raise InsufficientDataError(
            f"need >= {min_samples} tau samples, got {samples.size}")
    if samples.min() < 1:
        raise ValueError("tau samples must be >= 1")
    tmax = int(samples.max())
    ts = np.arange(1, tmax + 1)
    # P(tau > t): counts of samples exceeding each integer t.
    counts = np.bincount(samples, minlength=tmax + 1)
    exceed = samples.size - np.cumsum(counts)[1:]
    surv = exceed / samples.size
    keep = surv > 0
    ts, surv = ts[keep], surv[keep]

    window = fit_window if fit_window is not None else (tmax / 10.0, float(tmax))
    sel = (ts >= window[0]) & (ts <= window[1])
    if sel.sum() < 3:
        window = (tmax / 10.0, float(tmax))
        sel = (ts >= window[0]) & (ts <= window[1])
    if sel.sum() < 2:
        sel = np.ones_like(ts, dtype=bool)
        window = (float(ts[0]), float(ts[-1]))
    slope = -np.polyfit(np.log(ts[sel]), np.log(surv[sel]), 1)[0]

    orders = [1.0, 2.0]
    if gamma is not None and np.isfinite(gamma):
        orders.append(gamma - 0.5)
    moments = []
    half = samples[: samples.size // 2]
    for p in orders:
        full_m = float(np.mean(samples.astype(float) ** p))
        half_m = float(np.mean(half.astype(float) ** p))
        stable = abs(half_m - full_m) <= 0.1 * full_m
        moments.append(MomentEstimate(p, full_m, half_m, stable))
    return TauTailReport(samples.size, ts, surv, float(slope), window,
                         int(sel.sum()), moments)
