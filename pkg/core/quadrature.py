"""
Quadrature helpers: cached Gauss-Legendre rules, endpoint-singular
substitution, nested simplex rules and dyadic-panel divergence detection.
"""
import math
import warnings
from functools import lru_cache
from typing import Callable, Optional, Tuple

import numpy as np
from scipy import integrate

from config import settings
from core.errors import QuadratureError


@lru_cache(maxsize=32)
def gauss_legendre(n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Nodes and weights on [-1, 1]; arrays are read-only"""
    if n < 1:
        raise ValueError(f"Quadrature needs at least one node, got {n}")
    nodes, weights = np.polynomial.legendre.leggauss(n)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def interval_rule(lo: float, hi: float, n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights mapped to [lo, hi]"""
    nodes, weights = gauss_legendre(n)
    half = 0.5 * (hi - lo)
    return lo + half * (nodes + 1.0), half * weights


def fixed_quad(func: Callable[[np.ndarray], np.ndarray], lo: float, hi: float, n: int) -> float:
    """Integrate a vectorized function over [lo, hi]"""
    if hi <= lo:
        return 0.0
    x, w = interval_rule(lo, hi, n)
    return float(np.dot(w, func(x)))


def endpoint_rule(
    lo: float,
    hi: float,
    edge: float,
    theta: float,
    n: int
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Rule for integrands carrying a factor (edge - z)^(theta - 1) on [lo, hi].

    For theta < 1 the substitution s = (edge - z)^theta turns the weight into a
    smooth function of s; for theta >= 1 a plain rule is returned.

    Args:
        lo: Lower limit
        hi: Upper limit, hi <= edge
        edge: Location of the algebraic endpoint behaviour
        theta: Exponent parameter
        n: Node count

    Returns:
        Nodes in z and weights (Jacobian included)
    """
    if theta >= 1.0:
        return interval_rule(lo, hi, n)
    s_lo = max(edge - hi, 0.0) ** theta
    s_hi = (edge - lo) ** theta
    s, ws = interval_rule(s_lo, s_hi, n)
    inv = 1.0 / theta
    z = edge - s ** inv
    return z, ws * inv * s ** (inv - 1.0)


def endpoint_quad(
    func: Callable[[np.ndarray], np.ndarray],
    lo: float,
    hi: float,
    edge: float,
    theta: float,
    n: int
) -> float:
    """Integrate func over [lo, hi] using endpoint_rule"""
    if hi <= lo:
        return 0.0
    z, w = endpoint_rule(lo, hi, edge, theta, n)
    return float(np.dot(w, func(z)))


def simplex_rule(k: int, theta: float, n: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Tensor rule on the open simplex {x_i > 0, sum x_i < 1} in dimension k.

    Each coordinate is integrated over (0, 1 - sum of the previous ones) with
    the endpoint substitution, so integrands of the form
    g(x) * (1 - |x|)^(theta - 1) with smooth g are handled for theta < 1.

    Returns:
        points of shape (n**k, k) and weights of shape (n**k,)
    """
    if k < 1:
        raise ValueError(f"Simplex dimension must be >= 1, got {k}")
    t, wt = gauss_legendre(n)
    points = np.zeros((1, 0))
    weights = np.ones(1)
    for _ in range(k):
        remaining = 1.0 - points.sum(axis=1)
        if theta < 1.0:
            top = remaining ** theta
            s = 0.5 * np.outer(top, t + 1.0)
            ws = 0.5 * np.outer(top, wt)
            inv = 1.0 / theta
            z = remaining[:, None] - s ** inv
            wz = ws * inv * s ** (inv - 1.0)
        else:
            z = 0.5 * np.outer(remaining, t + 1.0)
            wz = 0.5 * np.outer(remaining, wt)
        m = points.shape[0]
        points = np.concatenate(
            [np.repeat(points, n, axis=0), z.reshape(m * n, 1)], axis=1
        )
        weights = (weights[:, None] * wz).reshape(m * n)
    return points, weights


# ==================== Divergence detection ====================

def _panel_integral(func: Callable[[float], float], lo: float, hi: float) -> Optional[float]:
    mid = 0.5 * (lo + hi)
    at_mid = func(mid)
    if math.isinf(at_mid):
        return math.inf
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        value, _ = integrate.quad(func, lo, hi, epsabs=0.0, epsrel=1e-12, limit=200)
    if not math.isfinite(value):
        return math.inf if value == math.inf else None
    return value


def dyadic_integral(
    func: Callable[[float], float],
    upper: float = 0.5,
    panels: Optional[int] = None,
    window: Optional[int] = None
) -> float:
    """
    Integral of a nonnegative function over (0, upper] whose only possible
    divergence is at 0.

    Panels (upper*2^-(k+1), upper*2^-k] are integrated with adaptive
    quadrature; the trailing panel ratios decide summability.

    Returns:
        The finite value, or math.inf on divergence

    Raises:
        QuadratureError: if a panel fails or the panel ratios reach no verdict
    """
    panels = panels or settings.quadrature.dyadic_panels
    window = window or settings.quadrature.ratio_window

    sums = []
    for k in range(panels):
        hi = upper * 2.0 ** (-k)
        lo = 0.5 * hi
        value = _panel_integral(func, lo, hi)
        if value is None:
            raise QuadratureError(f"Quadrature failed on panel ({lo}, {hi}]")
        if math.isinf(value):
            return math.inf
        sums.append(value)

    total = math.fsum(sums)
    tail = sums[-(window + 1):]
    if all(v == 0.0 for v in tail):
        return total
    if any(v <= 0.0 for v in tail):
        raise QuadratureError(f"Trailing dyadic panels change sign: {tail}")

    ratios = [b / a for a, b in zip(tail[:-1], tail[1:])]
    if min(ratios) >= 1.0 - 1e-9:
        return math.inf
    spread = max(ratios) - min(ratios)
    r = ratios[-1]
    if r < 1.0 and spread <= 1e-6 * max(1.0, r):
        return total + sums[-1] * r / (1.0 - r)

    raise QuadratureError(f"Dyadic panel ratios inconclusive: {ratios}")
