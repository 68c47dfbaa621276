"""Renewal-based point estimators and their diagnostics.

The walk's velocity and diffusion matrix are ratio estimators over renewal
blocks: v = sum(dx) / sum(dtau) (the plug-in for the block-mean ratio) and
Sigma = Cov(dx - dtau v) / mean(dtau).  Standard errors come from the delta
method on the block means:

    Var(v_i) ~ Var(dx_i - v_i dtau) / (n * mean(dtau)^2),

i.e. the residual variance of the centered blocks scaled by the squared mean
duration.  Positive semidefiniteness of Sigma is checked (Cholesky) and
reported, never repaired.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats as sps

from .regeneration import InsufficientDataError, blocks_to_arrays


def _coerce_blocks(blocks) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(blocks, tuple) and len(blocks) == 2:
        dtau = np.asarray(blocks[0], dtype=np.int64)
        dx = np.asarray(blocks[1], dtype=np.int64)
        if dx.ndim == 1:
            dx = dx[:, None]
        return dtau, dx
    return blocks_to_arrays(blocks)


@dataclass
class DriftEstimate:
    v_hat: np.ndarray
    se: np.ndarray
    n_blocks: int

    def to_dict(self) -> dict:
        return {"v_hat": self.v_hat.tolist(), "se": self.se.tolist(),
                "n_blocks": self.n_blocks}


@dataclass
class CovarianceEstimate:
    sigma_hat: np.ndarray
    n_blocks: int
    cholesky_ok: bool

    def to_dict(self) -> dict:
        return {"sigma_hat": self.sigma_hat.tolist(), "n_blocks": self.n_blocks,
                "cholesky_ok": self.cholesky_ok}


def velocity_hat(blocks) -> DriftEstimate:
    """Ratio-of-sums velocity estimate with delta-method standard errors."""
    dtau, dx = _coerce_blocks(blocks)
    n = dtau.size
    if n < 2:
        raise InsufficientDataError(f"need >= 2 blocks, got {n}")
    v = dx.sum(axis=0) / dtau.sum()
    resid = dx - dtau[:, None] * v
    se = resid.std(axis=0, ddof=1) / (np.sqrt(n) * dtau.mean())
    return DriftEstimate(v, se, n)


def sigma_hat(blocks, v: np.ndarray) -> CovarianceEstimate:
    """Diffusion matrix estimate Cov(dx - dtau*v) / mean(dtau)."""
    dtau, dx = _coerce_blocks(blocks)
    n = dtau.size
    if n < 2:
        raise InsufficientDataError(f"need >= 2 blocks, got {n}")
    v = np.asarray(v, dtype=float)
    resid = dx - dtau[:, None] * v
    cov = np.atleast_2d(np.cov(resid.T, ddof=1))
    sigma = cov / dtau.mean()
    sigma = 0.5 * (sigma + sigma.T)
    try:
        np.linalg.cholesky(sigma)
        chol_ok = True
    except np.linalg.LinAlgError:
        chol_ok = False
    return CovarianceEstimate(sigma, n, chol_ok)


def pooled_velocity(estimates: Sequence[tuple[float, np.ndarray]]) -> np.ndarray:
    """Duration-weighted pool of per-batch velocity estimates.

    Equals the ratio-of-sums estimate on the concatenated blocks:
    v_pool = sum_b T_b v_b / sum_b T_b.
    """
    total = sum(t for t, _ in estimates)
    return sum(t * np.asarray(v) for t, v in estimates) / total


def _autocorr(x: np.ndarray, lag: int) -> float:
    a = x[:-lag] - x.mean()
    b = x[lag:] - x.mean()
    denom = np.sqrt((a * a).sum() * (b * b).sum())
    if denom == 0.0:
        return 0.0
    return float((a * b).sum() / denom)


@dataclass
class SeriesDiagnostic:
    name: str
    autocorr: list[float]
    band: float
    ks_halves_p: float

    @property
    def passed(self) -> bool:
        return all(abs(a) <= self.band for a in self.autocorr) and self.ks_halves_p > 0.01

    def to_dict(self) -> dict:
        return {"name": self.name, "autocorr": self.autocorr, "band": self.band,
                "ks_halves_p": self.ks_halves_p, "passed": self.passed}


@dataclass
class IidDiagnosticsReport:
    series: list[SeriesDiagnostic]
    n_blocks: int

    @property
    def passed(self) -> bool:
        return all(s.passed for s in self.series)

    def to_dict(self) -> dict:
        return {"n_blocks": self.n_blocks, "passed": self.passed,
                "series": [s.to_dict() for s in self.series]}


def block_iid_diagnostics(blocks, max_lag: int = 5) -> IidDiagnosticsReport:
    """Lag-k autocorrelations (3/sqrt(N) bands) and half-sample KS tests.

    The renewal construction makes blocks i.i.d.; these diagnostics catch
    implementation bugs that couple consecutive blocks or drift over time.
    """
    dtau, dx = _coerce_blocks(blocks)
    n = dtau.size
    if n < 1000:
        raise InsufficientDataError(f"need >= 1000 blocks, got {n}")
    band = 3.0 / np.sqrt(n)
    half = n // 2
    out = []
    series = [("dtau", dtau.astype(float))]
    series += [(f"dx_{i + 1}", dx[:, i].astype(float)) for i in range(dx.shape[1])]
    for name, vals in series:
        acs = [_autocorr(vals, k) for k in range(1, max_lag + 1)]
        ks_p = float(sps.ks_2samp(vals[:half], vals[half:]).pvalue)
        out.append(SeriesDiagnostic(name, acs, band, ks_p))
    return IidDiagnosticsReport(out, n)


@dataclass
class SllnReport:
    mean_ratio: np.ndarray      # mean over replicas of X_n / n
    se_ratio: np.ndarray
    v_hat: np.ndarray           # pooled renewal estimate
    se_v: np.ndarray
    z: np.ndarray               # discrepancy in combined standard errors
    n: int
    replicas: int

    @property
    def max_z(self) -> float:
        return float(np.max(self.z))

    def to_dict(self) -> dict:
        return {"mean_ratio": self.mean_ratio.tolist(), "se_ratio": self.se_ratio.tolist(),
                "v_hat": self.v_hat.tolist(), "se_v": self.se_v.tolist(),
                "z": self.z.tolist(), "n": self.n, "replicas": self.replicas}


def slln_check(spec, seed: int, n: int, replicas: int) -> SllnReport:
    """Compare mean(X_n / n) over replicas against the pooled renewal velocity."""
    from .engine import run_ensemble
    from .randomness import derive_seeds

    seeds = derive_seeds(seed, "slln", replicas)
    res = run_ensemble(spec, seeds, seeds, np.zeros(replicas, dtype=np.uint64),
                       n, record_blocks=True)
    ratios = res.final_positions / n
    mean_ratio = ratios.mean(axis=0)
    se_ratio = ratios.std(axis=0, ddof=1) / np.sqrt(replicas)
    drift = velocity_hat((res.block_dtau, res.block_dx))
    z = np.abs(mean_ratio - drift.v_hat) / np.sqrt(se_ratio**2 + drift.se**2)
    return SllnReport(mean_ratio, se_ratio, drift.v_hat, drift.se, z, n, replicas)
