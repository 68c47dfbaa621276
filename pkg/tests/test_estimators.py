import numpy as np
import pytest

from dynenvwalk import fixtures
from dynenvwalk.engine import run_ensemble
from dynenvwalk.estimators import (block_iid_diagnostics, pooled_velocity,
                                   sigma_hat, slln_check, velocity_hat)
from dynenvwalk.model import mean_local_law
from dynenvwalk.randomness import derive_seeds
from dynenvwalk.regeneration import InsufficientDataError, RenewalBlock


def _blocks(pairs):
    return [RenewalBlock(dt, np.array(dx if isinstance(dx, (list, tuple)) else [dx]))
            for dt, dx in pairs]


# -- velocity ----------------------------------------------------------------

def test_velocity_ratio_of_sums_hand_case():
    est = velocity_hat(_blocks([(2, 1), (4, 3)]))
    assert np.allclose(est.v_hat, [4 / 6])
    assert est.n_blocks == 2


def test_velocity_zero_displacements():
    est = velocity_hat(_blocks([(2, 0), (3, 0), (5, 0)]))
    assert np.allclose(est.v_hat, [0.0])


def test_velocity_needs_two_blocks():
    with pytest.raises(InsufficientDataError):
        velocity_hat(_blocks([(2, 1)]))


def test_velocity_pooling_is_duration_weighted_average():
    rng = np.random.default_rng(0)
    dtau1 = rng.integers(1, 9, 500)
    dx1 = rng.integers(-1, 2, (500, 1)) * dtau1[:, None] // 1
    dtau2 = rng.integers(1, 9, 300)
    dx2 = rng.integers(-1, 2, (300, 1))
    v1 = velocity_hat((dtau1, dx1))
    v2 = velocity_hat((dtau2, dx2))
    pooled = velocity_hat((np.concatenate([dtau1, dtau2]),
                           np.vstack([dx1, dx2])))
    weighted = pooled_velocity([(dtau1.sum(), v1.v_hat), (dtau2.sum(), v2.v_hat)])
    assert np.allclose(pooled.v_hat, weighted, atol=1e-15)


def test_velocity_se_shrinks_with_sample_size():
    rng = np.random.default_rng(1)
    dtau = rng.integers(1, 6, 4000)
    dx = rng.integers(-1, 2, (4000, 1))
    se_small = velocity_hat((dtau[:1000], dx[:1000])).se[0]
    se_large = velocity_hat((dtau, dx)).se[0]
    assert se_large < se_small
    assert se_large == pytest.approx(se_small / 2, rel=0.15)


# -- covariance ----------------------------------------------------------------

def test_sigma_zero_for_deterministic_residuals():
    v = np.array([0.5])
    blocks = _blocks([(2, 1), (4, 2), (6, 3)])
    est = sigma_hat(blocks, v)
    assert np.allclose(est.sigma_hat, 0.0, atol=1e-15)
    assert not est.cholesky_ok  # the zero matrix is not strictly PD


def test_sigma_symmetric_and_psd_on_random_blocks():
    rng = np.random.default_rng(2)
    for _ in range(20):
        n = 500
        dtau = rng.integers(1, 10, n)
        dx = rng.integers(-3, 4, (n, 3))
        dx = np.minimum(np.abs(dx), dtau[:, None]) * np.sign(dx)
        est = sigma_hat((dtau, dx), rng.normal(size=3) * 0.1)
        assert np.max(np.abs(est.sigma_hat - est.sigma_hat.T)) <= 1e-12
        eig = np.linalg.eigvalsh(est.sigma_hat)
        assert eig.min() >= -1e-10


def test_sigma_kappa_one_matches_per_step_variance():
    # kappa=1: i.i.d. increments with law (0.4, 0.3, 0.3) -> variance 0.6
    spec = fixtures.fixture_f1_kappa1()
    seeds = derive_seeds(11, "sig", 128)
    res = run_ensemble(spec, seeds, seeds, np.zeros(128, np.uint64), 400,
                       record_blocks=True)
    drift = velocity_hat((res.block_dtau, res.block_dx))
    est = sigma_hat((res.block_dtau, res.block_dx), drift.v_hat)
    assert abs(est.sigma_hat[0, 0] - 0.6) < 0.6 * 0.10
    assert est.cholesky_ok


def test_sigma_f1_is_strictly_positive_definite(f1):
    seeds = derive_seeds(12, "sigf1", 64)
    res = run_ensemble(f1, seeds, seeds, np.zeros(64, np.uint64), 512,
                       record_blocks=True)
    drift = velocity_hat((res.block_dtau, res.block_dx))
    est = sigma_hat((res.block_dtau, res.block_dx), drift.v_hat)
    assert est.cholesky_ok and est.sigma_hat[0, 0] > 0.1


# -- i.i.d. diagnostics --------------------------------------------------------

def _iid_blocks(rng, n):
    dtau = rng.geometric(0.5, n)
    steps = rng.integers(-1, 2, (n, 1))
    dx = np.minimum(np.abs(steps), dtau[:, None]) * np.sign(steps)
    return dtau, dx


def test_iid_diagnostics_pass_on_iid_null():
    rng = np.random.default_rng(3)
    dtau, dx = _iid_blocks(rng, 20000)
    rep = block_iid_diagnostics((dtau, dx))
    assert rep.passed, rep.to_dict()


def test_iid_diagnostics_flag_lag_one_coupling():
    # adversarial control: duplicate every block to force lag-1 correlation
    rng = np.random.default_rng(4)
    dtau, dx = _iid_blocks(rng, 10000)
    dtau2 = np.repeat(dtau, 2)
    dx2 = np.repeat(dx, 2, axis=0)
    rep = block_iid_diagnostics((dtau2, dx2))
    dtau_diag = next(s for s in rep.series if s.name == "dtau")
    assert abs(dtau_diag.autocorr[0]) > dtau_diag.band
    assert not rep.passed


def test_iid_diagnostics_need_enough_blocks():
    rng = np.random.default_rng(5)
    dtau, dx = _iid_blocks(rng, 100)
    with pytest.raises(InsufficientDataError):
        block_iid_diagnostics((dtau, dx))


# -- permutation equivariance ---------------------------------------------------

def _swap_axes_d2(spec):
    """The model with lattice axes 1 and 2 exchanged (move order 0,1,2,3,4 ->
    0,3,4,1,2)."""
    perm = [0, 3, 4, 1, 2]
    out = fixtures.fixture_f1_d2()
    out.states = [type(s)(s.probs[perm]) for s in spec.states]
    out.q = type(spec.q)(spec.q.probs[perm])
    return out


def test_velocity_and_sigma_are_permutation_equivariant(f1_d2):
    swapped = _swap_axes_d2(f1_d2)
    seeds = derive_seeds(13, "perm", 400)
    res_a = run_ensemble(f1_d2, seeds, seeds, np.zeros(400, np.uint64), 512,
                         record_blocks=True)
    res_b = run_ensemble(swapped, seeds, seeds, np.zeros(400, np.uint64), 512,
                         record_blocks=True)
    va = velocity_hat((res_a.block_dtau, res_a.block_dx))
    vb = velocity_hat((res_b.block_dtau, res_b.block_dx))
    # swapped model's velocity is the swap of the original's, within 3 SE
    for i, j in ((0, 1), (1, 0)):
        se = np.hypot(va.se[i], vb.se[j])
        assert abs(va.v_hat[i] - vb.v_hat[j]) < 3 * se
    sa = sigma_hat((res_a.block_dtau, res_a.block_dx), va.v_hat).sigma_hat
    sb = sigma_hat((res_b.block_dtau, res_b.block_dx), vb.v_hat).sigma_hat
    p = np.array([[0, 1], [1, 0]])
    assert np.max(np.abs(sa - p @ sb @ p)) < 0.05


# -- law of large numbers -------------------------------------------------------

def test_slln_check_kappa_one_zero_drift():
    spec = fixtures.fixture_f1_kappa1()
    assert np.allclose(mean_local_law(spec)[1], 0.0)
    rep = slln_check(spec, 21, n=4000, replicas=60)
    assert rep.max_z <= 3.0
    assert abs(rep.mean_ratio[0]) < 0.02


def test_slln_check_symmetric_fixture(f2):
    rep = slln_check(f2, 22, n=4000, replicas=60)
    assert rep.max_z <= 3.0
    assert abs(rep.v_hat[0]) < 3 * rep.se_v[0] + 0.02
