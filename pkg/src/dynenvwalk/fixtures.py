"""Standard model instances used by the verification suite and docs.

F1 is the 1-d workhorse (asymmetric states, nonzero velocity), F2 its
reflection-symmetric variant (velocity exactly zero by isometry invariance),
F3 the high-dimensional instance inside the quenched regime.  The kappa = 1
variants have i.i.d.-in-time environments; their walks have i.i.d.
increments, giving closed-form controls.
"""

from __future__ import annotations

import numpy as np

from .model import LocalLaw, ModelSpec

_KT2 = [[0.6, 0.4], [0.4, 0.6]]
_PI2 = [0.5, 0.5]


def fixture_f1() -> ModelSpec:
    """d=1, kappa=0.9, epsilon=0.7; drifting states, tail exponent ~6.456."""
    return ModelSpec(
        d=1,
        states=[LocalLaw(np.array([0.45, 0.2, 0.35])),
                LocalLaw(np.array([0.35, 0.4, 0.25]))],
        ktilde=np.array(_KT2),
        pi=np.array(_PI2),
        kappa=0.9,
        epsilon=0.7,
        q=LocalLaw(np.array([0.5, 0.25, 0.25])),
    )


def fixture_f2() -> ModelSpec:
    """F1 with states swapped by reflection; the velocity is exactly zero."""
    spec = fixture_f1()
    spec.states = [LocalLaw(np.array([0.4, 0.35, 0.25])),
                   LocalLaw(np.array([0.4, 0.25, 0.35]))]
    return spec


def fixture_f1_kappa1() -> ModelSpec:
    """F1 with kappa=1: i.i.d. environment, increments i.i.d. with the
    stationary mean law (0.4, 0.3, 0.3); per-step variance 0.6, drift 0."""
    spec = fixture_f1()
    spec.kappa = 1.0
    return spec


def fixture_f1_d2() -> ModelSpec:
    """Two-dimensional analogue of F1 (drift in both axes)."""
    q = np.array([0.5, 0.125, 0.125, 0.125, 0.125])
    return ModelSpec(
        d=2,
        states=[LocalLaw(np.array([0.46, 0.16, 0.10, 0.15, 0.13])),
                LocalLaw(np.array([0.54, 0.09, 0.155, 0.10, 0.115]))],
        ktilde=np.array(_KT2),
        pi=np.array(_PI2),
        kappa=0.9,
        epsilon=0.7,
        q=LocalLaw(q),
    )


def fixture_f3() -> ModelSpec:
    """d=8, kappa=0.999, epsilon=0.99: quenched dimension condition holds.

    States perturb the +-e1 masses of q by the largest amount the
    ellipticity slack allows (up to a safety margin), so environment effects
    are as visible as the regime permits.
    """
    d = 8
    q = np.full(2 * d + 1, 1.0 / 32.0)
    q[0] = 0.5
    delta = 3e-4  # slack is (1-eps)/32 = 3.125e-4
    s_plus = q.copy()
    s_plus[1] += delta
    s_plus[2] -= delta
    s_minus = q.copy()
    s_minus[1] -= delta
    s_minus[2] += delta
    return ModelSpec(
        d=d,
        states=[LocalLaw(s_plus), LocalLaw(s_minus)],
        ktilde=np.array(_KT2),
        pi=np.array(_PI2),
        kappa=0.999,
        epsilon=0.99,
        q=LocalLaw(q),
    )


def fixture_d3_kappa1() -> ModelSpec:
    """d=3, kappa=1 control for the quenched variance-decay check.

    epsilon is small so most steps consult the environment, and the two
    states push/pull all three axes; the across-environment variance of the
    quenched mean is then well above the Monte Carlo noise floor at desk
    scale.
    """
    d = 3
    q = np.array([0.25] + [0.125] * (2 * d))
    delta = 0.11  # slack is (1-eps)*0.125 = 0.11875
    pattern = np.array([0.0, 1, -1, 1, -1, 1, -1])
    s_plus = q + delta * pattern
    s_minus = q - delta * pattern
    return ModelSpec(
        d=d,
        states=[LocalLaw(s_plus), LocalLaw(s_minus)],
        ktilde=np.array(_KT2),
        pi=np.array(_PI2),
        kappa=1.0,
        epsilon=0.05,
        q=LocalLaw(q),
    )


def single_state_spec(state, q, epsilon: float, kappa: float = 0.9,
                      d: int = 1) -> ModelSpec:
    """Degenerate one-state environment: the walk's one-step law is the state."""
    return ModelSpec(
        d=d,
        states=[LocalLaw(np.asarray(state, dtype=float))],
        ktilde=np.array([[1.0]]),
        pi=np.array([1.0]),
        kappa=kappa,
        epsilon=epsilon,
        q=LocalLaw(np.asarray(q, dtype=float)),
    )


FIXTURES = {
    "f1": fixture_f1,
    "f2": fixture_f2,
    "f1_kappa1": fixture_f1_kappa1,
    "f1_d2": fixture_f1_d2,
    "f3": fixture_f3,
    "d3_kappa1": fixture_d3_kappa1,
}
