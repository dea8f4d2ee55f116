import math

import numpy as np
from scipy.special import ndtr  # vectorized standard normal CDF


def ks_critical(n: int, alpha: float = 0.01) -> float:
    """One-sample KS acceptance threshold; 1.63/sqrt(n) is the 1% point."""
    assert alpha == 0.01
    return 1.63 / math.sqrt(n)


def ks_two_sample_critical(n: int, m: int, alpha: float = 0.01) -> float:
    return 1.63 * math.sqrt((n + m) / (n * m))


def mean_se(values) -> tuple[float, float]:
    a = np.asarray(values, dtype=float)
    return float(a.mean()), float(a.std(ddof=1) / math.sqrt(len(a)))


def zscore(values, target: float) -> float:
    mean, se = mean_se(values)
    return (mean - target) / se


def hitting_cdf(u, x):
    """P(first hit of 0 from x is <= u) = 2 Phi(-|x|/sqrt(u))."""
    u = np.asarray(u, dtype=float)
    return 2.0 * ndtr(-abs(x) / np.sqrt(u))


def folded_normal_cdf(v, t):
    v = np.asarray(v, dtype=float)
    return 2.0 * ndtr(v / math.sqrt(t)) - 1.0
