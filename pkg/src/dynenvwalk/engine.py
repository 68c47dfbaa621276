"""Vectorized lockstep ensemble runner.

Advances many replay-mode walks simultaneously with numpy, one wall-clock
time step at a time.  Every coin consumed here carries the same tag a scalar
quenched run would use, so a row of the ensemble is bit-identical to
:func:`dynenvwalk.walk.run_walk` in ``quenched_shared`` mode with the same
seeds (tested).  Environment- and walk-side streams are keyed separately:
rows sharing an ``env_seed`` live in one environment realization; rows
sharing a ``walk_seed``/``walk_id`` replay the same coin streams.

Aggregation order is fixed by replica index, so statistics are independent
of any outer parallelism.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import ModelSpec
from .randomness import (LABEL_ALPHA, LABEL_EPS, LABEL_INIT, LABEL_KTILDE,
                         LABEL_PI, LABEL_STEP, stream_base_vec, uniform_at_vec)
from .walk import RuntimeTables

_SCAN_GUARD = 10**7


def _draw_rows(cdf_rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw with one cdf row per element (== bisect_right)."""
    return (u[:, None] >= cdf_rows).sum(axis=1)


@dataclass
class _EnvBases:
    """Precomputed per-row stream bases for the environment-side labels."""

    alpha: np.ndarray
    pi: np.ndarray
    init: np.ndarray
    ktilde: np.ndarray

    @classmethod
    def from_seeds(cls, env_seeds: np.ndarray) -> "_EnvBases":
        return cls(stream_base_vec(env_seeds, LABEL_ALPHA),
                   stream_base_vec(env_seeds, LABEL_PI),
                   stream_base_vec(env_seeds, LABEL_INIT),
                   stream_base_vec(env_seeds, LABEL_KTILDE))


def _replay_states(bases: _EnvBases, rows: np.ndarray, sites: np.ndarray,
                   t: int, tables: RuntimeTables) -> np.ndarray:
    """States of the site chains at a common time t for the given rows.

    Backward-scans the refresh coins, draws the refreshed (or initial) state
    from the stationary vector, then replays residual-kernel steps forward.
    """
    n = rows.size
    state = np.full(n, -1, dtype=np.int64)
    refresh = np.zeros(n, dtype=np.int64)
    pending = np.arange(n)
    u = t
    while pending.size and u >= 1:
        sub = rows[pending]
        coins = uniform_at_vec(bases.alpha[sub], u, sites[pending]) < tables.kappa
        hit = pending[coins]
        if hit.size:
            refresh[hit] = u
            uu = uniform_at_vec(bases.pi[rows[hit]], u, sites[hit])
            state[hit] = (uu[:, None] >= tables.pi_cdf[None, :]).sum(axis=1)
        pending = pending[~coins]
        u -= 1
    if pending.size:
        uu = uniform_at_vec(bases.init[rows[pending]], 0, sites[pending])
        state[pending] = (uu[:, None] >= tables.pi_cdf[None, :]).sum(axis=1)
    wmin = int(refresh.min())
    for w in range(wmin + 1, t + 1):
        idx = np.flatnonzero(refresh < w)
        uu = uniform_at_vec(bases.ktilde[rows[idx]], w, sites[idx])
        state[idx] = _draw_rows(tables.ktilde_cdf[state[idx]], uu)
    return state


def _clearance_scan(bases: _EnvBases, rows: np.ndarray, sites: np.ndarray,
                    t: int, kappa: float) -> np.ndarray:
    """First refresh strictly after t for each row, batched."""
    n = rows.size
    clear = np.zeros(n, dtype=np.int64)
    pending = np.arange(n)
    s = 1
    while pending.size:
        coins = uniform_at_vec(bases.alpha[rows[pending]], t + s,
                               sites[pending]) < kappa
        clear[pending[coins]] = t + s
        pending = pending[~coins]
        s += 1
        if s > _SCAN_GUARD:
            raise RuntimeError(f"no refresh within {_SCAN_GUARD} steps of t={t}")
    return clear


def replay_states(env_seeds, sites, t: int, tables: RuntimeTables) -> np.ndarray:
    """Batched shared-environment state queries (thin wrapper over bases)."""
    env_seeds = np.asarray(env_seeds, dtype=np.uint64)
    sites = np.asarray(sites, dtype=np.int64)
    rows = np.arange(env_seeds.size)
    return _replay_states(_EnvBases.from_seeds(env_seeds), rows, sites, t, tables)


def clearance_scan(env_seeds, sites, t: int, kappa: float) -> np.ndarray:
    """Batched first-refresh-after-t scan (thin wrapper over bases)."""
    env_seeds = np.asarray(env_seeds, dtype=np.uint64)
    sites = np.asarray(sites, dtype=np.int64)
    rows = np.arange(env_seeds.size)
    return _clearance_scan(_EnvBases.from_seeds(env_seeds), rows, sites, t, kappa)


def _broadcast_rows(env_seeds, walk_seeds, walk_ids):
    env_seeds = np.atleast_1d(np.asarray(env_seeds, dtype=np.uint64))
    walk_seeds = np.atleast_1d(np.asarray(walk_seeds, dtype=np.uint64))
    walk_ids = np.atleast_1d(np.asarray(walk_ids, dtype=np.uint64))
    r = max(env_seeds.size, walk_seeds.size, walk_ids.size)
    return tuple(np.broadcast_to(a, (r,)).copy()
                 for a in (env_seeds, walk_seeds, walk_ids)) + (r,)


@dataclass
class EnsembleResult:
    n_steps: int
    final_positions: np.ndarray                 # (R, d) int64
    pv_count: np.ndarray                        # (R,) proper visits per row
    observed_state_counts: np.ndarray | None = None  # (K,) over all proper visits
    checkpoints: dict[int, np.ndarray] = field(default_factory=dict)
    block_replica: np.ndarray | None = None     # (B,) row index per block
    block_dtau: np.ndarray | None = None        # (B,)
    block_dx: np.ndarray | None = None          # (B, d)
    positions: np.ndarray | None = None         # (R, n+1, d)
    max_centered_norm: np.ndarray | None = None  # (R,) sup_k |X_k - k v|_2

    @property
    def n_rows(self) -> int:
        return self.final_positions.shape[0]

    def tau1(self) -> np.ndarray:
        """First regeneration time per row (requires record_blocks)."""
        if self.block_replica is None:
            raise ValueError("run with record_blocks=True to get tau1 samples")
        first = np.full(self.n_rows, -1, dtype=np.int64)
        # blocks are appended in time order, so the first occurrence per
        # replica is its first block
        rep, idx = np.unique(self.block_replica, return_index=True)
        first[rep] = self.block_dtau[idx]
        if np.any(first < 0):
            raise ValueError(f"{int((first < 0).sum())} rows never regenerated")
        return first


def _coin_chunk(eps_base, step_base, t0: int, length: int):
    times = np.arange(t0 + 1, t0 + 1 + length, dtype=np.uint64)
    eps = uniform_at_vec(eps_base[:, None], times[None, :])
    stp = uniform_at_vec(step_base[:, None], times[None, :])
    return eps, stp


def run_ensemble(spec: ModelSpec, env_seeds, walk_seeds, walk_ids,
                 n_steps: int, *, tables: RuntimeTables | None = None,
                 record_blocks: bool = False,
                 checkpoints: tuple[int, ...] = (),
                 record_positions: bool = False,
                 track_max_norm: bool = False,
                 v: np.ndarray | None = None) -> EnsembleResult:
    """Run R walks in lockstep for ``n_steps`` transitions."""
    tables = tables or RuntimeTables.from_spec(spec)
    env_seeds, walk_seeds, walk_ids, r = _broadcast_rows(env_seeds, walk_seeds,
                                                         walk_ids)
    env_bases = _EnvBases.from_seeds(env_seeds)
    eps_base = stream_base_vec(walk_seeds, LABEL_EPS, walk_ids)
    step_base = stream_base_vec(walk_seeds, LABEL_STEP, walk_ids)
    d = tables.d
    x = np.zeros((r, d), dtype=np.int64)
    pv_count = np.zeros(r, dtype=np.int64)
    max_clear = np.zeros(r, dtype=np.int64)
    last_tau = np.zeros(r, dtype=np.int64)
    x_last = x.copy()
    cp_times = frozenset(int(c) for c in checkpoints)
    out = EnsembleResult(n_steps, x, pv_count)
    out.observed_state_counts = np.zeros(tables.n_states, dtype=np.int64)
    if record_positions:
        out.positions = np.zeros((r, n_steps + 1, d), dtype=np.int64)
    if track_max_norm:
        if v is None:
            raise ValueError("track_max_norm requires the centering velocity v")
        v = np.asarray(v, dtype=float)
        out.max_centered_norm = np.zeros(r)
    blk_rep: list[np.ndarray] = []
    blk_dtau: list[np.ndarray] = []
    blk_dx: list[np.ndarray] = []

    chunk = max(64, min(4096, 2_000_000 // max(r, 1)))
    for t in range(n_steps):
        tc = t + 1
        off = t % chunk
        if off == 0:
            eps_mat, step_mat = _coin_chunk(eps_base, step_base, t,
                                            min(chunk, n_steps - t))
        eps_u = eps_mat[:, off]
        step_u = step_mat[:, off]
        used_q = eps_u < tables.epsilon
        mv = np.empty(r, dtype=np.int64)
        if used_q.any():
            mv[used_q] = np.searchsorted(tables.q_cdf, step_u[used_q], side="right")
        if not used_q.all():
            rows = np.flatnonzero(~used_q)
            states = _replay_states(env_bases, rows, x[rows], t, tables)
            mv[rows] = _draw_rows(tables.residual_cdf[states], step_u[rows])
            if record_blocks:
                clr = _clearance_scan(env_bases, rows, x[rows], t, tables.kappa)
                max_clear[rows] = np.maximum(max_clear[rows], clr)
            pv_count[rows] += 1
            out.observed_state_counts += np.bincount(states,
                                                     minlength=tables.n_states)
        x += tables.displacements[mv]
        if record_positions:
            out.positions[:, tc] = x
        if record_blocks:
            regen = np.flatnonzero(tc > max_clear)
            if regen.size:
                blk_rep.append(regen)
                blk_dtau.append(tc - last_tau[regen])
                blk_dx.append(x[regen] - x_last[regen])
                last_tau[regen] = tc
                x_last[regen] = x[regen]
                max_clear[regen] = tc
        if tc in cp_times:
            out.checkpoints[tc] = x.copy()
        if track_max_norm:
            diff = x - tc * v
            np.maximum(out.max_centered_norm,
                       np.sqrt((diff * diff).sum(axis=1)),
                       out=out.max_centered_norm)
    if record_blocks:
        if blk_rep:
            out.block_replica = np.concatenate(blk_rep)
            out.block_dtau = np.concatenate(blk_dtau)
            out.block_dx = np.concatenate(blk_dx)
        else:
            out.block_replica = np.zeros(0, dtype=np.int64)
            out.block_dtau = np.zeros(0, dtype=np.int64)
            out.block_dx = np.zeros((0, d), dtype=np.int64)
    out.final_positions = x
    return out


def sample_first_regeneration(spec: ModelSpec, env_seeds, walk_seeds, walk_ids,
                              horizon: int = 1 << 14,
                              tables: RuntimeTables | None = None) -> np.ndarray:
    """First regeneration time per row, deactivating rows as they finish.

    Total work is ~R * E[tau] rather than R * horizon.  Raises if any row
    fails to regenerate within the horizon.
    """
    tables = tables or RuntimeTables.from_spec(spec)
    env_seeds, walk_seeds, walk_ids, r = _broadcast_rows(env_seeds, walk_seeds,
                                                         walk_ids)
    env_bases = _EnvBases.from_seeds(env_seeds)
    eps_base = stream_base_vec(walk_seeds, LABEL_EPS, walk_ids)
    step_base = stream_base_vec(walk_seeds, LABEL_STEP, walk_ids)
    x = np.zeros((r, tables.d), dtype=np.int64)
    max_clear = np.zeros(r, dtype=np.int64)
    tau = np.zeros(r, dtype=np.int64)
    active = np.arange(r)
    for t in range(horizon):
        if not active.size:
            break
        tc = t + 1
        eps_u = uniform_at_vec(eps_base[active], tc)
        step_u = uniform_at_vec(step_base[active], tc)
        used_q = eps_u < tables.epsilon
        mv = np.empty(active.size, dtype=np.int64)
        if used_q.any():
            mv[used_q] = np.searchsorted(tables.q_cdf, step_u[used_q], side="right")
        if not used_q.all():
            sub = np.flatnonzero(~used_q)
            rows = active[sub]
            states = _replay_states(env_bases, rows, x[rows], t, tables)
            mv[sub] = _draw_rows(tables.residual_cdf[states], step_u[sub])
            clr = _clearance_scan(env_bases, rows, x[rows], t, tables.kappa)
            max_clear[rows] = np.maximum(max_clear[rows], clr)
        x[active] += tables.displacements[mv]
        regen = tc > max_clear[active]
        done = active[regen]
        tau[done] = tc
        active = active[~regen]
    if active.size:
        raise RuntimeError(
            f"{active.size} of {r} walks did not regenerate within {horizon} steps")
    return tau
