import numpy as np
import pytest
from scipy import stats as sps

from dynenvwalk import fixtures


@pytest.fixture
def f1():
    return fixtures.fixture_f1()


@pytest.fixture
def f2():
    return fixtures.fixture_f2()


@pytest.fixture
def f3():
    return fixtures.fixture_f3()


@pytest.fixture
def f1_kappa1():
    return fixtures.fixture_f1_kappa1()


@pytest.fixture
def f1_d2():
    return fixtures.fixture_f1_d2()


@pytest.fixture
def d3_kappa1():
    return fixtures.fixture_d3_kappa1()


def chi2_gof_p(counts, probs, min_expected: float = 5.0) -> float:
    """Goodness-of-fit p-value with small-expectation bins pooled."""
    counts = np.asarray(counts, dtype=float)
    probs = np.asarray(probs, dtype=float)
    n = counts.sum()
    order = np.argsort(probs)[::-1]
    pooled_c, pooled_p = [], []
    acc_c = acc_p = 0.0
    for i in order:
        if probs[i] * n >= min_expected:
            pooled_c.append(counts[i])
            pooled_p.append(probs[i])
        else:
            acc_c += counts[i]
            acc_p += probs[i]
    if acc_p > 0:
        pooled_c.append(acc_c)
        pooled_p.append(acc_p)
    pooled_c = np.asarray(pooled_c)
    pooled_p = np.asarray(pooled_p)
    pooled_p = pooled_p / pooled_p.sum()
    if pooled_c.size < 2:
        return 1.0
    stat, p = sps.chisquare(pooled_c, pooled_p * n)
    return float(p)


def chi2_two_sample_p(counts_a, counts_b, min_expected: float = 5.0) -> float:
    """Two-sample chi-square homogeneity test with pooling of sparse bins."""
    a = np.asarray(counts_a, dtype=float)
    b = np.asarray(counts_b, dtype=float)
    tot = a + b
    keep = []
    acc = np.zeros(2)
    rows = []
    for i in range(a.size):
        if tot[i] >= 2 * min_expected:
            rows.append([a[i], b[i]])
        else:
            acc += [a[i], b[i]]
    if acc.sum() > 0:
        rows.append(list(acc))
    table = np.asarray(rows)
    table = table[table.sum(axis=1) > 0]
    if table.shape[0] < 2:
        return 1.0
    _, p, _, _ = sps.chi2_contingency(table)
    return float(p)


def move_counts(positions_before, positions_after, n_moves: int, displacements) -> np.ndarray:
    """Histogram of move indices recovered from consecutive positions."""
    diff = positions_after - positions_before
    counts = np.zeros(n_moves, dtype=np.int64)
    for m in range(n_moves):
        counts[m] = np.all(diff == displacements[m], axis=-1).sum()
    assert counts.sum() == diff.shape[0], "a displacement fell outside the move set"
    return counts
