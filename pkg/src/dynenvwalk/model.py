"""Problem instances and the analytic quantities that gate experiments.

A model is a finite-state dynamical environment on the d-dimensional integer
lattice: every site carries an independent stationary Markov chain over a
finite set of local transition laws, and the walker steps according to the
law at its current site.  The chain kernel is supplied in refresh/residual
form: with probability ``kappa`` the state is redrawn from the stationary
vector ``pi``, otherwise it moves by the residual kernel ``ktilde``.  The
walker-side coupling splits each step, with probability ``epsilon``, into a
draw from the fixed reference kernel ``q``.

Move ordering convention (everywhere in this package): index 0 is "stay",
index 2i-1 is +e_i and index 2i is -e_i, for i = 1..d.

Numeric tolerances: 1e-12 for exact algebraic identities, 1e-10 for
linear-solve residuals.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
import numpy as np

TOL_EXACT = 1e-12
TOL_SOLVE = 1e-10


class ModelValidationError(ValueError):
    """A structurally invalid model component (bad shapes, non-stochastic rows)."""


class DomainError(ValueError):
    """Arguments outside an operation's analytic domain."""


class InfeasibleConstantsError(ValueError):
    """The exponent system admits no strictly feasible point."""

    def __init__(self, message: str, last_violated: str | None = None):
        super().__init__(message)
        self.last_violated = last_violated


def move_displacements(d: int) -> np.ndarray:
    """(2d+1, d) table of move vectors in the package's move ordering."""
    disp = np.zeros((2 * d + 1, d), dtype=np.int64)
    for i in range(d):
        disp[2 * i + 1, i] = 1
        disp[2 * i + 2, i] = -1
    return disp


@dataclass(frozen=True)
class LocalLaw:
    """Probability vector over the 2d+1 nearest-neighbour moves (incl. stay)."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        object.__setattr__(self, "probs", p)
        if p.ndim != 1 or p.size % 2 != 1 or p.size < 3:
            raise ModelValidationError(
                f"local law needs 2d+1 entries for some d >= 1, got shape {p.shape}")
        if np.any(p < -TOL_EXACT):
            raise ModelValidationError(f"negative probability in local law: {p.min()}")
        if abs(p.sum() - 1.0) > TOL_EXACT:
            raise ModelValidationError(f"local law sums to {p.sum()!r}, not 1")

    @property
    def d(self) -> int:
        return (self.probs.size - 1) // 2

    def drift(self) -> np.ndarray:
        """First moment: sum_y y * p(y), a d-vector."""
        return self.probs @ move_displacements(self.d)

    def cdf(self) -> np.ndarray:
        c = np.cumsum(self.probs)
        c[-1] = 1.0  # guard against fp undershoot; the sampler needs cdf[-1] >= u
        return c


def _check_stochastic_rows(mat: np.ndarray, name: str) -> None:
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ModelValidationError(f"{name} must be a square matrix, got {mat.shape}")
    for i, row in enumerate(mat):
        if np.any(row < -TOL_EXACT):
            raise ModelValidationError(f"{name} row {i} has a negative entry")
        if abs(row.sum() - 1.0) > TOL_EXACT:
            raise ModelValidationError(
                f"{name} row {i} sums to {row.sum()!r}, not 1")


def stationary_distribution(kernel: np.ndarray) -> np.ndarray:
    """Stationary probability vector of a row-stochastic matrix (linear solve)."""
    kernel = np.asarray(kernel, dtype=float)
    k = kernel.shape[0]
    a = np.vstack([kernel.T - np.eye(k), np.ones((1, k))])
    b = np.zeros(k + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(a, b, rcond=None)
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    resid = np.max(np.abs(pi @ kernel - pi))
    if resid > TOL_SOLVE:
        raise ModelValidationError(
            f"no stationary vector found: residual {resid:.3e} exceeds {TOL_SOLVE}")
    return pi


def build_k(kappa: float, pi: np.ndarray, ktilde: np.ndarray) -> np.ndarray:
    """Full environment kernel K = kappa * (rank-one pi) + (1-kappa) * ktilde.

    The returned matrix is row-stochastic, dominates kappa*pi entrywise, and
    preserves pi; these are asserted, not assumed.
    """
    pi = np.asarray(pi, dtype=float)
    ktilde = np.asarray(ktilde, dtype=float)
    if np.any(pi < -TOL_EXACT) or abs(pi.sum() - 1.0) > TOL_EXACT:
        raise ModelValidationError(f"pi is not a probability vector: {pi}")
    _check_stochastic_rows(ktilde, "ktilde")
    k = kappa * np.tile(pi, (len(pi), 1)) + (1.0 - kappa) * ktilde
    _check_stochastic_rows(k, "K")
    if np.min(k - kappa * pi[None, :]) < -TOL_EXACT:
        raise ModelValidationError("built kernel violates its own refresh minorization")
    return k


@dataclass
class ModelSpec:
    """Full problem instance.

    ``states`` is the finite local-law state space, ``ktilde`` its residual
    kernel, ``pi`` the stationary vector (of both ``ktilde`` and the full
    kernel), ``kappa`` the refresh probability, ``epsilon`` the reference-coin
    probability and ``q`` the reference kernel.
    """

    d: int
    states: list[LocalLaw]
    ktilde: np.ndarray
    pi: np.ndarray
    kappa: float
    epsilon: float
    q: LocalLaw

    def __post_init__(self):
        self.ktilde = np.asarray(self.ktilde, dtype=float)
        self.pi = np.asarray(self.pi, dtype=float)
        if self.d < 1 or int(self.d) != self.d:
            raise ModelValidationError(f"dimension must be a positive integer, got {self.d}")
        width = 2 * self.d + 1
        for idx, s in enumerate(self.states):
            if s.probs.size != width:
                raise ModelValidationError(
                    f"state {idx} has {s.probs.size} entries, expected {width}")
        if self.q.probs.size != width:
            raise ModelValidationError("q has the wrong width for this dimension")
        if not (0.0 < self.kappa <= 1.0):
            raise ModelValidationError(f"kappa must lie in (0, 1], got {self.kappa}")
        if not (0.0 < self.epsilon < 1.0):
            raise ModelValidationError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        _check_stochastic_rows(self.ktilde, "ktilde")
        if self.ktilde.shape[0] != len(self.states):
            raise ModelValidationError("ktilde size does not match the state count")
        if abs(self.pi.sum() - 1.0) > TOL_EXACT or np.any(self.pi < -TOL_EXACT):
            raise ModelValidationError("pi is not a probability vector")

    @property
    def n_states(self) -> int:
        return len(self.states)

    def state_matrix(self) -> np.ndarray:
        """(K, 2d+1) array of the local laws."""
        return np.stack([s.probs for s in self.states])

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "dimension": self.d,
            "kappa": self.kappa,
            "epsilon": self.epsilon,
            "q": self.q.probs.tolist(),
            "states": [s.probs.tolist() for s in self.states],
            "ktilde": self.ktilde.tolist(),
            "pi": self.pi.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelSpec":
        missing = [k for k in ("dimension", "kappa", "epsilon", "q", "states", "ktilde")
                   if k not in doc]
        if missing:
            raise ModelValidationError(f"model document missing keys: {missing}")
        ktilde = np.asarray(doc["ktilde"], dtype=float)
        if "pi" in doc and doc["pi"] is not None:
            pi = np.asarray(doc["pi"], dtype=float)
        else:
            _check_stochastic_rows(ktilde, "ktilde")
            pi = stationary_distribution(ktilde)
        return cls(
            d=int(doc["dimension"]),
            states=[LocalLaw(np.asarray(s, dtype=float)) for s in doc["states"]],
            ktilde=ktilde,
            pi=pi,
            kappa=float(doc["kappa"]),
            epsilon=float(doc["epsilon"]),
            q=LocalLaw(np.asarray(doc["q"], dtype=float)),
        )

    @classmethod
    def from_json(cls, text: str) -> "ModelSpec":
        return cls.from_dict(json.loads(text))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


# ---------------------------------------------------------------------------
# Assumption validation
# ---------------------------------------------------------------------------

@dataclass
class AssumptionCheck:
    id: str
    name: str
    passed: bool
    margin: float | None = None
    detail: str = ""

    def to_dict(self) -> dict:
        return {"id": self.id, "name": self.name, "passed": self.passed,
                "margin": self.margin, "detail": self.detail}


@dataclass
class ValidationReport:
    checks: list[AssumptionCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "checks": [c.to_dict() for c in self.checks]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def q_nondegenerate(q: LocalLaw, d: int, grid: int = 0) -> bool | tuple[bool, float]:
    """Structural aperiodicity/non-degeneracy gate for the reference kernel.

    Returns True iff q(stay) > 0 and every coordinate direction carries mass
    (q(+e_i) + q(-e_i) > 0).  That forces the characteristic function
    |sum_y q(y) e^{i l.y}| < 1 for every nonzero l on the torus (-pi, pi]^d:
    equality would need all phases aligned with the strictly positive stay
    term, impossible once some direction is supported.

    With ``grid`` > 0, additionally scans |phi(l)| on a grid^d torus grid
    (excluding l = 0) and returns ``(ok, max_modulus)`` as a diagnostic.
    """
    p = q.probs
    structural = bool(p[0] > 0.0) and all(
        bool(p[2 * i + 1] + p[2 * i + 2] > 0.0) for i in range(d))
    if grid <= 0:
        return structural
    # frequencies -pi + 2*pi*k/grid: includes the torus boundary -pi, and
    # includes l = 0 exactly (masked below) when grid is even
    axis = -math.pi + 2.0 * math.pi * np.arange(grid) / grid
    mesh = np.meshgrid(*([axis] * d), indexing="ij")
    disp = move_displacements(d)
    phase = np.zeros(mesh[0].shape, dtype=complex)
    for m, prob in enumerate(p):
        dot = sum(mesh[i] * disp[m, i] for i in range(d))
        phase = phase + prob * np.exp(1j * dot)
    mod = np.abs(phase)
    origin = np.ones(mesh[0].shape, dtype=bool)
    for i in range(d):
        origin &= mesh[i] == 0.0
    mod[origin] = 0.0  # drop l = 0 where |phi| = 1 trivially
    return structural, float(mod.max())


def validate_assumptions(spec: ModelSpec) -> ValidationReport:
    """Pass/fail report for the three model assumptions plus q non-degeneracy.

    Never raises: callers gate on the report.
    """
    report = ValidationReport()

    # A1: the full kernel dominates kappa * pi entrywise.  It is built from
    # (kappa, pi, ktilde), so this is a construction identity; the margin is
    # reported from the assembled matrix.
    try:
        k = build_k(spec.kappa, spec.pi, spec.ktilde)
        a1_margin = float(np.min(k - spec.kappa * spec.pi[None, :]))
        stat_resid = float(np.max(np.abs(spec.pi @ k - spec.pi)))
        ktilde_resid = float(np.max(np.abs(spec.pi @ spec.ktilde - spec.pi)))
        a1_ok = a1_margin >= -TOL_EXACT and stat_resid <= TOL_SOLVE and ktilde_resid <= TOL_SOLVE
        detail = f"stationarity residuals: K {stat_resid:.2e}, ktilde {ktilde_resid:.2e}"
    except ModelValidationError as exc:
        a1_margin, a1_ok, detail = None, False, str(exc)
    report.checks.append(AssumptionCheck(
        "A1", "refresh_minorization", a1_ok, a1_margin, detail))

    # A2: every state dominates epsilon * q entrywise (uniform ellipticity).
    margins = np.stack([s.probs - spec.epsilon * spec.q.probs for s in spec.states])
    a2_margin = float(margins.min())
    report.checks.append(AssumptionCheck(
        "A2", "uniform_ellipticity", a2_margin >= -TOL_EXACT, a2_margin,
        f"worst state/move margin over {spec.n_states} states"))

    # A3: refresh rate vs. coupling strength trade-off.
    a3_margin = spec.kappa + spec.epsilon**2 - 1.0
    report.checks.append(AssumptionCheck(
        "A3", "mixing_tradeoff", a3_margin > 0.0, a3_margin,
        f"kappa + epsilon^2 - 1 = {a3_margin:.6g}"))

    q_ok = q_nondegenerate(spec.q, spec.d)
    report.checks.append(AssumptionCheck(
        "Q", "reference_kernel_nondegenerate", bool(q_ok), None,
        "stay mass and per-axis directional support"))
    return report


def mean_local_law(spec: ModelSpec) -> tuple[LocalLaw, np.ndarray]:
    """Stationary mean of the local laws and its drift vector.

    When kappa = 1 the walk has i.i.d. increments with exactly this law.
    """
    mean = spec.pi @ spec.state_matrix()
    law = LocalLaw(mean)
    return law, law.drift()


# ---------------------------------------------------------------------------
# Exponents and the quenched-regime constants system
# ---------------------------------------------------------------------------

def gamma_exponent(kappa: float, epsilon: float) -> float:
    """Tail exponent log(1-kappa)/log(epsilon) of the regeneration time.

    kappa = 1 signals an infinite exponent (the environment is i.i.d. in
    time) by returning math.inf; kappa = 0 or epsilon outside (0, 1) is a
    domain error.
    """
    if not (0.0 < epsilon < 1.0):
        raise DomainError(f"epsilon must lie in (0, 1), got {epsilon}")
    if kappa == 1.0:
        return math.inf
    if not (0.0 < kappa < 1.0):
        raise DomainError(f"kappa must lie in (0, 1], got {kappa}")
    return math.log(1.0 - kappa) / math.log(epsilon)


@dataclass
class QuenchedConditionDetail:
    gamma: float
    d: int
    satisfied: bool
    rhs: float | None
    denominator: float
    term_mid: float | None
    term_last: float | None
    iid_time_environment: bool = False

    def to_dict(self) -> dict:
        return {
            "gamma": self.gamma, "d": self.d, "satisfied": self.satisfied,
            "rhs": self.rhs, "denominator": self.denominator,
            "term_mid": self.term_mid, "term_last": self.term_last,
            "iid_time_environment": self.iid_time_environment,
        }


def quenched_condition(d: int, kappa: float, epsilon: float) -> tuple[bool, QuenchedConditionDetail]:
    """Dimension gate for the quenched regime.

    True iff gamma > 6 and
    d > 1 + (4 + 2*gamma*(d-1)/(gamma*(d-3) - 2*(d-1)) + 8*(d-1)/(gamma*(d-3)))
            / (1 - 6/gamma).
    Returns False (not an error) when gamma*(d-3) <= 2*(d-1), where the
    expression's denominator is nonpositive and the condition is
    unsatisfiable as written.
    """
    if d < 1 or int(d) != d:
        raise DomainError(f"dimension must be a positive integer, got {d}")
    gamma = gamma_exponent(kappa, epsilon)
    iid = math.isinf(gamma)
    if gamma <= 6.0:
        return False, QuenchedConditionDetail(gamma, d, False, None, math.nan, None, None)
    if iid:
        # Formula limit as gamma -> inf; undefined for d <= 3 (0 * inf).
        if d <= 3:
            return False, QuenchedConditionDetail(gamma, d, False, None, 0.0, None, None, True)
        rhs = 1.0 + 4.0 + 2.0 * (d - 1) / (d - 3)
        det = QuenchedConditionDetail(gamma, d, d > rhs, rhs, math.inf,
                                      2.0 * (d - 1) / (d - 3), 0.0, True)
        return det.satisfied, det
    denom = gamma * (d - 3) - 2.0 * (d - 1)
    if denom <= 0.0:
        return False, QuenchedConditionDetail(gamma, d, False, None, denom, None, None)
    term_mid = 2.0 * gamma * (d - 1) / denom
    term_last = 8.0 * (d - 1) / (gamma * (d - 3))
    rhs = 1.0 + (4.0 + term_mid + term_last) / (1.0 - 6.0 / gamma)
    det = QuenchedConditionDetail(gamma, d, d > rhs, rhs, denom, term_mid, term_last)
    return det.satisfied, det


@dataclass(frozen=True)
class QuenchedConstants:
    """Strictly feasible exponent tuple for the quenched variance-decay scheme."""

    theta: float
    theta_prime: float
    theta_double_prime: float
    mu: float
    alpha: float
    gamma: float

    def to_dict(self) -> dict:
        return {"theta": self.theta, "theta_prime": self.theta_prime,
                "theta_double_prime": self.theta_double_prime,
                "mu": self.mu, "alpha": self.alpha, "gamma": self.gamma}


#: The eight strict constraints, as (name, predicate) pairs.  Kept separate
#: from the search so tests can re-verify candidates independently.
CONSTRAINT_NAMES = (
    "0 < theta < 1",
    "2/gamma < theta_prime < theta/2",
    "theta > 2*(theta_prime + 1/(d-1))",
    "theta_double_prime < theta_prime",
    "(theta_prime - theta_double_prime)*gamma > 1",
    "0 < mu < 1/2",
    "1/2 > alpha > (1/theta_prime + 1)/gamma",
    "theta_double_prime*(d - 5 - 2*alpha*d + 2*alpha) > 1",
)


def violated_constraints(c: QuenchedConstants, d: int) -> list[str]:
    """Names of all strict inequalities the tuple fails (empty = feasible)."""
    g = c.gamma
    out = []
    if not (0.0 < c.theta < 1.0):
        out.append(CONSTRAINT_NAMES[0])
    if not (2.0 / g < c.theta_prime < c.theta / 2.0):
        out.append(CONSTRAINT_NAMES[1])
    if not (c.theta > 2.0 * (c.theta_prime + 1.0 / (d - 1))):
        out.append(CONSTRAINT_NAMES[2])
    if not (c.theta_double_prime < c.theta_prime):
        out.append(CONSTRAINT_NAMES[3])
    if not ((c.theta_prime - c.theta_double_prime) * g > 1.0):
        out.append(CONSTRAINT_NAMES[4])
    if not (0.0 < c.mu < 0.5):
        out.append(CONSTRAINT_NAMES[5])
    if not (0.5 > c.alpha > (1.0 / c.theta_prime + 1.0) / g):
        out.append(CONSTRAINT_NAMES[6])
    if not (c.theta_double_prime * (d - 5 - 2.0 * c.alpha * d + 2.0 * c.alpha) > 1.0):
        out.append(CONSTRAINT_NAMES[7])
    return out


def find_constants(d: int, gamma: float, mu: float = 0.25) -> QuenchedConstants:
    """Search a strictly feasible exponent tuple for dimension d and tail gamma.

    The boundary point theta' = (d-3)/(2(d-1)), alpha = (1 + 1/theta')/gamma,
    theta'' = theta' - 1/gamma sits where several constraints are tight;
    perturbing inward by a shrinking delta grid recovers strict feasibility
    whenever the system admits any.  mu is free in (0, 1/2) and fixed to 1/4
    for determinism.
    """
    if d < 2 or int(d) != d:
        raise DomainError(f"dimension must be an integer >= 2, got {d}")
    if not (gamma > 0.0):
        raise DomainError(f"gamma must be positive, got {gamma}")
    if gamma <= 6.0:
        raise InfeasibleConstantsError(
            f"gamma = {gamma} <= 6: the exponent system collapses immediately",
            last_violated=CONSTRAINT_NAMES[1])

    theta_prime_corner = (d - 3) / (2.0 * (d - 1)) if d > 3 else 0.0
    last_violated: str | None = None
    for k in range(1, 49):
        delta = 2.0 ** (-k)
        theta_prime = theta_prime_corner * (1.0 - delta)
        if theta_prime <= 2.0 / gamma:
            last_violated = CONSTRAINT_NAMES[1]
            continue
        theta_lower = 2.0 * (theta_prime + 1.0 / (d - 1))
        if theta_lower >= 1.0:
            last_violated = CONSTRAINT_NAMES[0]
            continue
        theta = 0.5 * (theta_lower + 1.0)
        alpha_lower = (1.0 / theta_prime + 1.0) / gamma
        if alpha_lower >= 0.5:
            last_violated = CONSTRAINT_NAMES[6]
            continue
        alpha = alpha_lower + delta * (0.5 - alpha_lower)
        tail_factor = d - 5 - 2.0 * alpha * d + 2.0 * alpha
        if tail_factor <= 0.0:
            last_violated = CONSTRAINT_NAMES[7]
            continue
        tdp_lower = 1.0 / tail_factor
        tdp_upper = theta_prime - 1.0 / gamma
        if tdp_lower >= tdp_upper:
            last_violated = CONSTRAINT_NAMES[7]
            continue
        theta_double_prime = 0.5 * (tdp_lower + tdp_upper)
        cand = QuenchedConstants(theta, theta_prime, theta_double_prime,
                                 mu, alpha, gamma)
        bad = violated_constraints(cand, d)
        if not bad:
            return cand
        last_violated = bad[-1]
    raise InfeasibleConstantsError(
        f"no strictly feasible exponents for d={d}, gamma={gamma}",
        last_violated=last_violated)
