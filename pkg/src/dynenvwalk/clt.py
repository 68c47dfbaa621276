"""Scaling-limit verification: annealed ensembles, path functionals, and the
quenched dyadic variance-decay scheme.

Paths are rescaled diffusively: B_t = (X_{floor(nt)} - n t v) / sqrt(n), made
continuous by polygonal interpolation between the grid points k/n.  Annealed
checks compare standardized marginals against the standard normal
(one-sample Kolmogorov-Smirnov, asymptotic p-value computed here and
cross-checked against scipy).  Quenched checks estimate, along scales
n = floor(b^m), the across-environment variance of the within-environment
mean of a bounded Lipschitz path functional, plus the equivalent
same-vs-independent environment covariance gap for walker pairs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import ndtr

from .engine import run_ensemble
from .estimators import velocity_hat, sigma_hat, DriftEstimate, CovarianceEstimate
from .model import ModelSpec
from .randomness import LABEL_EPS, derive_seed, derive_seeds, uniform_vec
from .regeneration import InsufficientDataError
from .walk import RuntimeTables


class DegenerateDirectionError(ValueError):
    """A projection direction with nonpositive predicted variance."""


class HorizonError(RuntimeError):
    """A coin-stream scan exceeded its search horizon."""

    def __init__(self, message: str, scanned: int):
        super().__init__(message)
        self.scanned = scanned


# ---------------------------------------------------------------------------
# Rescaled paths and functionals
# ---------------------------------------------------------------------------

@dataclass
class ScaledPath:
    """Polygonal interpolation of the centered, diffusively rescaled walk.

    ``values[k]`` is the path at time k/n; evaluation anywhere in
    [0, horizon] interpolates linearly and reproduces the grid exactly.
    """

    n: int
    values: np.ndarray  # (m+1, d)

    @property
    def horizon(self) -> float:
        return (self.values.shape[0] - 1) / self.n

    @classmethod
    def from_positions(cls, positions: np.ndarray, n: int, v: np.ndarray,
                       horizon: float = 1.0) -> "ScaledPath":
        positions = np.asarray(positions)
        if positions.ndim == 1:
            positions = positions[:, None]
        m = int(math.floor(horizon * n))
        if positions.shape[0] < m + 1:
            raise ValueError(
                f"need positions up to step {m}, got {positions.shape[0] - 1}")
        v = np.asarray(v, dtype=float)
        ks = np.arange(m + 1)
        values = (positions[: m + 1] - ks[:, None] * v) / math.sqrt(n)
        return cls(n, values)

    def eval(self, t: float) -> np.ndarray:
        if not (0.0 <= t <= self.horizon + 1e-12):
            raise ValueError(f"t={t} outside [0, {self.horizon}]")
        xk = t * self.n
        k = int(math.floor(xk))
        if k >= self.values.shape[0] - 1:
            return self.values[-1]
        frac = xk - k
        return (1.0 - frac) * self.values[k] + frac * self.values[k + 1]


FUNCTIONAL_KINDS = ("clipped_projection", "clipped_supnorm", "constant")


@dataclass(frozen=True)
class Functional:
    """Bounded Lipschitz path functional used in the quenched battery.

    * ``clipped_projection`` — clip(a . u(T), +-c); detects covariance errors.
    * ``clipped_supnorm``    — clip(sup_{t<=T} |u(t)|_2, c); detects
      path-scale errors.
    * ``constant``           — control; F == value identically.

    Both nontrivial kinds satisfy |F(u) - F(u')| <= max(|a|, 1) *
    sup_t |u(t) - u'(t)| and |F| <= c.
    """

    kind: str
    direction: tuple[float, ...] | None = None
    clip: float = 3.0
    horizon: float = 1.0
    value: float = 0.0

    def __post_init__(self):
        if self.kind not in FUNCTIONAL_KINDS:
            raise ValueError(f"unknown functional kind {self.kind!r}")
        if self.kind == "clipped_projection":
            if self.direction is None:
                raise ValueError("clipped_projection needs a direction")
            a = np.asarray(self.direction, dtype=float)
            if abs(np.linalg.norm(a) - 1.0) > 1e-9:
                raise ValueError("projection direction must be a unit vector")

    @property
    def a(self) -> np.ndarray:
        return np.asarray(self.direction, dtype=float)

    def evaluate(self, path: ScaledPath) -> float:
        if self.kind == "constant":
            return self.value
        if self.kind == "clipped_projection":
            return float(np.clip(self.a @ path.eval(self.horizon),
                                 -self.clip, self.clip))
        keep = np.arange(path.values.shape[0]) <= self.horizon * path.n + 1e-9
        sup = float(np.linalg.norm(path.values[keep], axis=1).max())
        return min(sup, self.clip)

    # Engine-side shortcuts: evaluate from run summaries instead of full paths.
    def value_from_endpoint(self, b_end: np.ndarray) -> np.ndarray:
        """F over rows given B(horizon) per row ((R, d) array)."""
        if self.kind == "constant":
            return np.full(b_end.shape[0], self.value)
        if self.kind != "clipped_projection":
            raise ValueError("endpoint shortcut only valid for projections")
        return np.clip(b_end @ self.a, -self.clip, self.clip)

    def value_from_max_norm(self, max_norm: np.ndarray) -> np.ndarray:
        if self.kind == "constant":
            return np.full(max_norm.shape[0], self.value)
        if self.kind != "clipped_supnorm":
            raise ValueError("max-norm shortcut only valid for sup-norm kind")
        return np.minimum(max_norm, self.clip)


def _functional_values(spec: ModelSpec, env_seeds, walk_seeds, walk_ids,
                       n: int, functional: Functional, v: np.ndarray,
                       tables: RuntimeTables | None = None) -> np.ndarray:
    """F(B^n) per row via the lockstep engine."""
    v = np.asarray(v, dtype=float)
    track = functional.kind == "clipped_supnorm"
    res = run_ensemble(spec, env_seeds, walk_seeds, walk_ids, n, tables=tables,
                       track_max_norm=track, v=v if track else None)
    if functional.kind == "clipped_supnorm":
        return functional.value_from_max_norm(res.max_centered_norm / math.sqrt(n))
    b_end = (res.final_positions - n * v) / math.sqrt(n)
    return functional.value_from_endpoint(b_end)


# ---------------------------------------------------------------------------
# One-sample Kolmogorov-Smirnov against the standard normal
# ---------------------------------------------------------------------------

def kolmogorov_sf(lam: float, min_terms: int = 20, tol: float = 1e-12) -> float:
    """Asymptotic Kolmogorov survival function Q(lam) = 2 sum (-1)^{k-1} e^{-2k^2 lam^2}."""
    if lam <= 0.0:
        return 1.0
    total = 0.0
    k = 1
    while True:
        term = 2.0 * (-1.0) ** (k - 1) * math.exp(-2.0 * k * k * lam * lam)
        total += term
        if k >= min_terms and abs(term) < tol:
            break
        if k > 10000:
            break
        k += 1
    return min(max(total, 0.0), 1.0)


def ks_statistic(samples) -> tuple[float, float]:
    """(D, p) of the one-sample KS test against the standard normal."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    if n < 50:
        raise InsufficientDataError(f"need >= 50 samples for the KS test, got {n}")
    cdf = ndtr(x)
    grid = np.arange(1, n + 1) / n
    d_plus = float(np.max(grid - cdf))
    d_minus = float(np.max(cdf - (grid - 1.0 / n)))
    d = max(d_plus, d_minus)
    return d, kolmogorov_sf(math.sqrt(n) * d)


# ---------------------------------------------------------------------------
# Annealed ensemble and functional checks
# ---------------------------------------------------------------------------

def calibrate(spec: ModelSpec, seed: int, n_steps: int = 8192,
              replicas: int = 512) -> tuple[DriftEstimate, CovarianceEstimate]:
    """Velocity and diffusion matrix from an independent block run.

    Centering/standardization constants for the scaling-limit checks must
    never reuse the data being checked; give this a separate seed.
    """
    seeds = derive_seeds(seed, "calibrate", replicas)
    res = run_ensemble(spec, seeds, seeds, np.zeros(replicas, dtype=np.uint64),
                       n_steps, record_blocks=True)
    drift = velocity_hat((res.block_dtau, res.block_dx))
    cov = sigma_hat((res.block_dtau, res.block_dx), drift.v_hat)
    return drift, cov


def annealed_ensemble(spec: ModelSpec, seed: int, n: int, replicas: int,
                      directions: Sequence[np.ndarray], v: np.ndarray,
                      sigma: np.ndarray) -> dict[str, np.ndarray]:
    """Standardized endpoint samples a.(X_n - n v)/sqrt(n a'Sigma a) per direction."""
    v = np.asarray(v, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    seeds = derive_seeds(seed, "annealed", replicas)
    res = run_ensemble(spec, seeds, seeds, np.zeros(replicas, dtype=np.uint64), n)
    out: dict[str, np.ndarray] = {}
    for entry in directions:
        if isinstance(entry, tuple) and len(entry) == 2 and isinstance(entry[0], str):
            label, a = entry
        else:
            a = entry
            label = ",".join(f"{c:g}" for c in np.asarray(a, dtype=float))
        a = np.asarray(a, dtype=float)
        denom = float(a @ sigma @ a)
        if denom <= 0.0:
            raise DegenerateDirectionError(
                f"direction {a.tolist()} has predicted variance {denom}")
        out[label] = (res.final_positions @ a - n * (v @ a)) / math.sqrt(n * denom)
    return out


@dataclass
class VarianceLinearityCheck:
    t: float
    second_moment: float
    predicted: float   # t * (fitted per-unit-time rate)
    z: float

    @property
    def passed(self) -> bool:
        return self.z <= 3.0

    def to_dict(self) -> dict:
        return {"t": self.t, "second_moment": self.second_moment,
                "predicted": self.predicted, "z": self.z, "passed": self.passed}


@dataclass
class FunctionalChecksReport:
    linearity: list[VarianceLinearityCheck]
    increment_correlation: float
    correlation_band: float
    replicas: int

    @property
    def passed(self) -> bool:
        return (all(c.passed for c in self.linearity)
                and abs(self.increment_correlation) <= self.correlation_band)

    def to_dict(self) -> dict:
        return {"linearity": [c.to_dict() for c in self.linearity],
                "increment_correlation": self.increment_correlation,
                "correlation_band": self.correlation_band,
                "replicas": self.replicas, "passed": self.passed}


def variance_linearity_report(values_by_time: dict[float, np.ndarray],
                              replicas: int) -> FunctionalChecksReport:
    """Brownian-likeness checks on projected path marginals.

    The second moment of B_t about zero must grow linearly in t (each time
    compared against the rate fitted from all times, within 3 standard
    errors); using raw second moments rather than centered variances makes
    un-removed drift show up quadratically.  The increment over [t1, t2]
    must be uncorrelated with B_{t1} (within 3/sqrt(R)).
    """
    times = sorted(values_by_time)
    moments = {t: float(np.mean(values_by_time[t] ** 2)) for t in times}
    # Per-unit-time rate, duration weighted.
    rate = sum(moments[t] for t in times) / sum(times)
    checks = []
    for t in times:
        sq = values_by_time[t] ** 2
        se = float(sq.std(ddof=1)) / math.sqrt(replicas)
        pred = rate * t
        if se > 0:
            z = abs(moments[t] - pred) / se
        else:
            z = 0.0 if abs(moments[t] - pred) < 1e-12 else math.inf
        checks.append(VarianceLinearityCheck(t, moments[t], pred, z))
    if len(times) > 1:
        t1, t2 = times[0], times[1]
    else:
        t1 = t2 = times[0]
    inc = values_by_time[t2] - values_by_time[t1]
    base = values_by_time[t1]
    if np.std(inc) > 0 and np.std(base) > 0:
        corr = float(np.corrcoef(inc, base)[0, 1])
    else:
        corr = 0.0
    return FunctionalChecksReport(checks, corr, 3.0 / math.sqrt(replicas), replicas)


def functional_checks(spec: ModelSpec, seed: int, n: int, replicas: int,
                      times: Sequence[float], direction: np.ndarray,
                      v: np.ndarray) -> FunctionalChecksReport:
    """Run the Brownian-likeness checks on a fresh ensemble."""
    a = np.asarray(direction, dtype=float)
    v = np.asarray(v, dtype=float)
    times = sorted(float(t) for t in times)
    cps = tuple(int(math.floor(n * t)) for t in times)
    seeds = derive_seeds(seed, "functional", replicas)
    res = run_ensemble(spec, seeds, seeds, np.zeros(replicas, dtype=np.uint64),
                       n, checkpoints=cps)
    values = {}
    for t, k in zip(times, cps):
        x = res.checkpoints[k] if k in res.checkpoints else res.final_positions
        values[t] = ((x - n * t * v) / math.sqrt(n)) @ a
    return variance_linearity_report(values, replicas)


# ---------------------------------------------------------------------------
# Quenched scheme: variance decay along dyadic scales, walker pairs
# ---------------------------------------------------------------------------

@dataclass
class VarianceCurveRow:
    m: int
    n: int
    var_raw: float
    var_corrected: float
    se: float

    def to_dict(self) -> dict:
        return {"m": self.m, "n": self.n, "var_raw": self.var_raw,
                "var_corrected": self.var_corrected, "se": self.se}


def quenched_variance_curve(spec: ModelSpec, seed: int, b: float,
                            m_range: Sequence[int], env_replicas: int,
                            walk_replicas: int, functional: Functional,
                            v: np.ndarray) -> list[VarianceCurveRow]:
    """Across-environment variance of the within-environment functional mean.

    For each scale n = floor(b^m): estimate E_omega[F] per environment by
    averaging walks sharing that environment, report the across-environment
    variance with the within-environment Monte Carlo noise floor
    (mean within-variance / walk_replicas) subtracted, plus a jackknife
    (leave-one-environment-out) standard error.
    """
    if env_replicas < 2 or walk_replicas < 2:
        raise InsufficientDataError("need at least 2 environments and 2 walks each")
    tables = RuntimeTables.from_spec(spec)
    rows = []
    e, w = env_replicas, walk_replicas
    for m in m_range:
        n = int(math.floor(b ** m))
        env_seeds = np.repeat(derive_seeds(seed, f"qvc-env-{m}", e), w)
        walk_seeds = derive_seeds(seed, f"qvc-walk-{m}", e * w)
        ids = np.zeros(e * w, dtype=np.uint64)
        f = _functional_values(spec, env_seeds, walk_seeds, ids, n, functional,
                               v, tables=tables).reshape(e, w)
        mu = f.mean(axis=1)
        s2 = f.var(axis=1, ddof=1)
        var_raw = float(np.var(mu, ddof=1))
        corrected = var_raw - float(s2.mean()) / w
        if e >= 3:
            # Jackknife over environments.
            thetas = np.empty(e)
            for i in range(e):
                keep = np.arange(e) != i
                thetas[i] = np.var(mu[keep], ddof=1) - s2[keep].mean() / w
            se = math.sqrt((e - 1) / e * float(((thetas - thetas.mean()) ** 2).sum()))
        else:
            # too few environments to jackknife: normal-theory variance of a
            # sample variance
            se = (var_raw + float(s2.mean()) / w) * math.sqrt(2.0 / (e - 1))
        rows.append(VarianceCurveRow(m, n, var_raw, corrected, se))
    return rows


@dataclass
class DeltaEstimate:
    m: int
    n: int
    delta: float
    se: float
    pairs: int

    def to_dict(self) -> dict:
        return {"m": self.m, "n": self.n, "delta": self.delta, "se": self.se,
                "pairs": self.pairs}


def delta_m(spec: ModelSpec, seed: int, b: float, m: int, pair_replicas: int,
            functional: Functional, v: np.ndarray,
            control: bool = False) -> DeltaEstimate:
    """Same-vs-independent environment covariance gap for walker pairs.

    Delta_m = E[F(B^{n,(1)}) F(B^{n,(2)})] with both walks in one
    environment, minus the same with independent environments.  Walk coin
    streams are shared between the two terms (paired seeds), so the
    difference is estimated pair by pair with the walk-level noise
    cancelled.  With ``control=True`` the first term also uses independent
    environments and the estimate must be 0 in expectation.
    """
    if pair_replicas < 2:
        raise InsufficientDataError("need at least 2 pairs")
    n = int(math.floor(b ** m))
    p = pair_replicas
    tables = RuntimeTables.from_spec(spec)
    env_a = derive_seeds(seed, f"dm-envA-{m}", p)
    env_b = derive_seeds(seed, f"dm-envB-{m}", p)
    w1 = derive_seeds(seed, f"dm-w1-{m}", p)
    w2 = derive_seeds(seed, f"dm-w2-{m}", p)
    first_env = derive_seeds(seed, f"dm-envC-{m}", p) if control else env_a

    env_seeds = np.concatenate([env_a, first_env, env_b])
    walk_seeds = np.concatenate([w1, w2, w2])
    ids = np.concatenate([np.full(p, 1), np.full(p, 2), np.full(p, 2)]).astype(np.uint64)
    f = _functional_values(spec, env_seeds, walk_seeds, ids, n, functional, v,
                           tables=tables)
    f1, f2_same, f2_ind = f[:p], f[p:2 * p], f[2 * p:]
    gaps = f1 * (f2_same - f2_ind)
    return DeltaEstimate(m, n, float(gaps.mean()),
                         float(gaps.std(ddof=1) / math.sqrt(p)), p)


# ---------------------------------------------------------------------------
# Joint coin runs and the non-intersection diagnostic
# ---------------------------------------------------------------------------

def joint_run_time_from_streams(eps1: np.ndarray, eps2: np.ndarray,
                                run_length: int) -> int:
    """Smallest s >= L with both streams all-1 on (s-L, s].

    Streams are indexed from time 1 (element 0 is time 1).
    """
    if run_length < 1:
        raise ValueError(f"run length must be >= 1, got {run_length}")
    joint = (np.asarray(eps1, dtype=bool) & np.asarray(eps2, dtype=bool))
    pos = np.arange(1, joint.size + 1)
    last_zero = np.maximum.accumulate(np.where(~joint, pos, 0))
    hits = np.flatnonzero(pos - last_zero >= run_length)
    if hits.size == 0:
        raise HorizonError(
            f"no joint run of length {run_length} within {joint.size} steps",
            scanned=joint.size)
    return int(pos[hits[0]])


def joint_run_time(spec: ModelSpec, walk_seeds: tuple[int, int],
                   walk_ids: tuple[int, int], run_length: int,
                   horizon: int = 1 << 16) -> int:
    """Joint run time of two walks' reference-coin streams."""
    times = np.arange(1, horizon + 1, dtype=np.uint64)
    streams = []
    for ws, wid in zip(walk_seeds, walk_ids):
        u = uniform_vec(np.uint64(ws), LABEL_EPS, np.uint64(wid), times)
        streams.append(u < spec.epsilon)
    return joint_run_time_from_streams(streams[0], streams[1], run_length)


@dataclass
class IntersectionReport:
    p_disjoint: float
    se: float
    pairs: int
    n: int
    run_length: int

    def to_dict(self) -> dict:
        return {"p_disjoint": self.p_disjoint, "se": self.se,
                "pairs": self.pairs, "n": self.n, "run_length": self.run_length}


def intersection_diagnostic(spec: ModelSpec, seed: int, pairs: int, n: int,
                            run_length: int) -> IntersectionReport:
    """Fraction of same-environment pairs whose post-joint-run site sets are
    disjoint (horizon n), with binomial standard error."""
    if pairs < 100:
        raise InsufficientDataError(f"need >= 100 pairs, got {pairs}")
    envs = derive_seeds(seed, "ix-env", pairs)
    w1 = derive_seeds(seed, "ix-w1", pairs)
    w2 = derive_seeds(seed, "ix-w2", pairs)
    betas = [joint_run_time(spec, (int(w1[i]), int(w2[i])), (1, 2), run_length,
                            horizon=n)
             for i in range(pairs)]
    env_seeds = np.concatenate([envs, envs])
    walk_seeds = np.concatenate([w1, w2])
    ids = np.concatenate([np.full(pairs, 1), np.full(pairs, 2)]).astype(np.uint64)
    res = run_ensemble(spec, env_seeds, walk_seeds, ids, n, record_positions=True)
    disjoint = 0
    for i in range(pairs):
        beta = betas[i]
        set1 = {tuple(row) for row in res.positions[i, beta:]}
        set2 = {tuple(row) for row in res.positions[pairs + i, beta:]}
        disjoint += set1.isdisjoint(set2)
    p_hat = disjoint / pairs
    se = math.sqrt(max(p_hat * (1 - p_hat), 0.25 / pairs) / pairs)
    return IntersectionReport(p_hat, se, pairs, n, run_length)
