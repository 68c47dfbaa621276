"""The coupled walk: reference-coin splitting of the environment law.

Each transition draws one reference coin and one move uniform (both consumed
regardless of branch, keeping coin streams aligned across modes).  Coin = 1
moves by the fixed reference kernel q; coin = 0 is a *proper visit*: the
walker fetches the local environment state and moves by its residual law
``(state - epsilon * q) / (1 - epsilon)``, so the two-stage sampler
reproduces the environment law exactly.

Proper-visit indexing: the visit at time t is decided by the departure coin
at t+1 (the move out of X_t consults the environment at time t); time 0 is a
proper visit iff the first coin is 0.

Modes:

* ``annealed_lazy`` — one walk owns its environment; states materialize on
  demand through site records and deferred decisions (exact, fast).
* ``quenched_shared`` — states come from the replayable shared environment,
  so independent walks can live in one environment realization.
"""

from __future__ import annotations

import json
from bisect import bisect_right
from dataclasses import dataclass
import numpy as np

from .environment import (EnvironmentReplay, PowerCache, fast_forward)
from .model import (DomainError, LocalLaw, ModelSpec, TOL_EXACT,
                    move_displacements)
from .randomness import LABEL_EPS, LABEL_STEP, derive_seed, uniform
from .regeneration import RegenTracker

MODES = ("annealed_lazy", "quenched_shared")


class EllipticityError(ValueError):
    """A state fails the epsilon*q domination the model promised."""


def residual_law(omega_state, q, epsilon: float) -> LocalLaw:
    """Residual move law (state - epsilon*q)/(1 - epsilon).

    Mixing it back with weight epsilon on q recovers the state exactly.
    Raises when a component is negative beyond tolerance (the model's
    ellipticity margin is violated, i.e. the instance is inconsistent).
    """
    if not (0.0 <= epsilon < 1.0):
        raise DomainError(f"epsilon must lie in [0, 1), got {epsilon}")
    s = omega_state.probs if isinstance(omega_state, LocalLaw) else np.asarray(omega_state, float)
    qq = q.probs if isinstance(q, LocalLaw) else np.asarray(q, float)
    if epsilon == 0.0:
        return LocalLaw(s.copy())
    r = (s - epsilon * qq) / (1.0 - epsilon)
    if np.min(r) < -TOL_EXACT:
        raise EllipticityError(
            f"state violates ellipticity: residual component {np.min(r):.3e} < 0")
    return LocalLaw(np.clip(r, 0.0, None))


@dataclass(frozen=True)
class RuntimeTables:
    """Precomputed sampling tables for one model instance."""

    d: int
    n_states: int
    kappa: float
    epsilon: float
    displacements: np.ndarray   # (2d+1, d) int64
    q_cdf: np.ndarray           # (2d+1,)
    pi_cdf: np.ndarray          # (K,)
    ktilde_cdf: np.ndarray      # (K, K)
    state_cdf: np.ndarray       # (K, 2d+1)
    residual_cdf: np.ndarray    # (K, 2d+1)
    residual: np.ndarray        # (K, 2d+1)

    @classmethod
    def from_spec(cls, spec: ModelSpec) -> "RuntimeTables":
        res = np.stack([residual_law(s, spec.q, spec.epsilon).probs
                        for s in spec.states])

        def cdf_rows(mat):
            c = np.cumsum(mat, axis=1)
            c[:, -1] = 1.0
            return c

        return cls(
            d=spec.d, n_states=spec.n_states, kappa=spec.kappa,
            epsilon=spec.epsilon,
            displacements=move_displacements(spec.d),
            q_cdf=spec.q.cdf(),
            pi_cdf=np.concatenate([np.cumsum(spec.pi)[:-1], [1.0]]),
            ktilde_cdf=cdf_rows(spec.ktilde),
            state_cdf=cdf_rows(spec.state_matrix()),
            residual_cdf=cdf_rows(res),
            residual=res,
        )


@dataclass
class WalkState:
    position: np.ndarray  # (d,) int64 lattice site
    time: int
    walk_id: int


class LazyEnvironment:
    """Annealed-mode accessor: site records plus deferred decisions."""

    def __init__(self, site_records: dict, power_cache: PowerCache,
                 pi_cdf: np.ndarray, rng: np.random.Generator):
        self.site_records = site_records
        self.power_cache = power_cache
        self.pi_cdf = pi_cdf
        self.rng = rng

    def state_at(self, site: tuple, t: int) -> int:
        rec = self.site_records.get(site)
        if rec is None:
            # Unvisited since the last regeneration: stationary fresh draw.
            return int(bisect_right(self.pi_cdf, float(self.rng.random())))
        return fast_forward(rec, t, self.power_cache, self.pi_cdf, self.rng)


class ReplayEnvironmentAccessor:
    """Quenched-mode accessor over a shared replayable environment."""

    def __init__(self, env: EnvironmentReplay):
        self.env = env

    def state_at(self, site: tuple, t: int) -> int:
        return self.env.state(site, t)


def step(walk: WalkState, env_accessor, tables: RuntimeTables, seed: int
         ) -> tuple[WalkState, bool, int, int]:
    """Advance one transition.

    Returns (new state, was_proper_visit, move index, observed state index
    or -1).  Exactly one coin uniform and one move uniform are consumed.
    """
    tcoin = walk.time + 1
    eps_u = uniform(seed, LABEL_EPS, walk.walk_id, tcoin)
    step_u = uniform(seed, LABEL_STEP, walk.walk_id, tcoin)
    observed = -1
    if eps_u < tables.epsilon:
        proper = False
        move = bisect_right(tables.q_cdf, step_u)
    else:
        proper = True
        observed = env_accessor.state_at(tuple(int(c) for c in walk.position), walk.time)
        move = bisect_right(tables.residual_cdf[observed], step_u)
    new = WalkState(walk.position + tables.displacements[move], walk.time + 1,
                    walk.walk_id)
    return new, proper, move, observed


@dataclass
class TrajectoryLog:
    """Replayable per-step record; identical under identical (seed, walk_id)."""

    seed: int
    walk_id: int
    mode: str
    eps: np.ndarray    # eps[t] is the coin of transition t-1 -> t, t >= 1
    moves: np.ndarray
    positions: np.ndarray  # (n+1, d)

    def to_jsonl(self, thin: int = 1) -> str:
        lines = []
        for t in range(1, self.eps.size):
            if (t - 1) % thin:
                continue
            lines.append(json.dumps({
                "t": t, "eps": int(self.eps[t]), "move": int(self.moves[t]),
                "pos": [int(c) for c in self.positions[t]]}))
        return "\n".join(lines) + ("\n" if lines else "")


@dataclass
class RunResult:
    """Everything a completed run exposes to the estimators."""

    seed: int
    walk_id: int
    mode: str
    n_steps: int
    positions: np.ndarray      # (n+1, d) int64
    eps: np.ndarray            # (n+1,) uint8, index 0 unused
    moves: np.ndarray          # (n+1,) int16, index 0 unused
    proper_times: list[int]
    observed_states: list[int]  # state consulted at each proper visit
    taus: list[int]

    def trajectory_log(self) -> TrajectoryLog:
        return TrajectoryLog(self.seed, self.walk_id, self.mode,
                             self.eps, self.moves, self.positions)


def _make_accessor(spec: ModelSpec, seed: int, walk_id: int, mode: str,
                   env: EnvironmentReplay | None, tracker: RegenTracker,
                   tables: RuntimeTables):
    """Environment accessor plus the annealed-mode private rng (or None)."""
    if mode not in MODES:
        raise DomainError(f"mode must be one of {MODES}, got {mode!r}")
    if mode == "annealed_lazy":
        if env is not None:
            raise DomainError("annealed_lazy mode owns its environment")
        rng = np.random.Generator(np.random.Philox(
            key=derive_seed(seed, "annealed-env", walk_id)))
        return LazyEnvironment(tracker.site_records, PowerCache(spec.ktilde),
                               tables.pi_cdf, rng), rng
    replay = env if env is not None else EnvironmentReplay(spec, seed)
    return ReplayEnvironmentAccessor(replay), None


def first_regeneration_time(spec: ModelSpec, seed: int, walk_id: int,
                            mode: str = "annealed_lazy",
                            horizon: int = 1 << 14,
                            tables: RuntimeTables | None = None) -> int:
    """First regeneration time of a single walk (early-stopping scalar loop)."""
    tables = tables or RuntimeTables.from_spec(spec)
    tracker = RegenTracker()
    accessor, rng = _make_accessor(spec, seed, walk_id, mode, None, tracker,
                                   tables)
    walk = WalkState(np.zeros(spec.d, dtype=np.int64), 0, walk_id)
    for t in range(horizon):
        site = tuple(int(c) for c in walk.position)
        walk, proper, _, observed = step(walk, accessor, tables, seed)
        if proper:
            if rng is not None:
                tracker.note_proper_visit(site, t, observed, rng=rng,
                                          kappa=spec.kappa)
            else:
                tracker.note_proper_visit(site, t, observed,
                                          clearance=accessor.env.clearance(site, t))
        if tracker.check_regeneration(t + 1):
            return t + 1
    raise RuntimeError(f"no regeneration within {horizon} steps")


def run_walk(spec: ModelSpec, seed: int, walk_id: int, n_steps: int,
             mode: str = "annealed_lazy",
             env: EnvironmentReplay | None = None,
             tables: RuntimeTables | None = None) -> RunResult:
    """Advance ``n_steps`` transitions, tracking regenerations online.

    In quenched mode an :class:`EnvironmentReplay` may be passed in to share
    one environment realization across walks (otherwise one is created from
    ``seed``).
    """
    tables = tables or RuntimeTables.from_spec(spec)
    tracker = RegenTracker()
    accessor, rng = _make_accessor(spec, seed, walk_id, mode, env, tracker,
                                   tables)

    d = spec.d
    positions = np.zeros((n_steps + 1, d), dtype=np.int64)
    eps = np.zeros(n_steps + 1, dtype=np.uint8)
    moves = np.zeros(n_steps + 1, dtype=np.int16)
    proper_times: list[int] = []
    observed_states: list[int] = []
    taus: list[int] = []

    walk = WalkState(np.zeros(d, dtype=np.int64), 0, walk_id)
    for t in range(n_steps):
        site = tuple(int(c) for c in walk.position)
        walk, proper, move, observed = step(walk, accessor, tables, seed)
        if proper:
            proper_times.append(t)
            observed_states.append(observed)
            if mode == "annealed_lazy":
                tracker.note_proper_visit(site, t, observed, rng=rng,
                                          kappa=spec.kappa)
            else:
                tracker.note_proper_visit(site, t, observed,
                                          clearance=accessor.env.clearance(site, t))
        t1 = t + 1
        positions[t1] = walk.position
        eps[t1] = 0 if proper else 1
        moves[t1] = move
        if tracker.check_regeneration(t1):
            taus.append(t1)
            tracker.reset(t1)
    return RunResult(seed, walk_id, mode, n_steps, positions, eps, moves,
                     proper_times, observed_states, taus)
