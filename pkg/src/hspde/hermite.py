"""Hermite function basis, Gauss-Hermite quadrature, and weighted coefficient norms.

Functions on the real line are represented by their coefficient vectors in the
orthonormal Hermite function basis {h_k}.  A coefficient vector of length N is
understood as embedded in the infinite sequence space by zero padding, so all
operations treat out-of-range indices as zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import roots_hermite

HERMITE_INDEX_CAP = 1_000_000
QUADRATURE_COUNT_CAP = 1024

_PI_QUARTER = np.pi ** -0.25

__all__ = [
    "HERMITE_INDEX_CAP",
    "QUADRATURE_COUNT_CAP",
    "QuadratureRule",
    "SobolevWeights",
    "as_coeffs",
    "basis_vector",
    "coeffs_from_json",
    "coeffs_to_json",
    "gauss_hermite_rule",
    "hermite_eval",
    "hermite_matrix",
    "inner_p",
    "norm_p",
    "project",
    "shift_down",
    "sobolev_weights",
    "weight_array",
]


def as_coeffs(values) -> np.ndarray:
    """Validate and return a 1-d float64 coefficient vector."""
    u = np.asarray(values, dtype=np.float64)
    if u.ndim != 1 or u.size == 0:
        raise ValueError("coefficient vector must be 1-d and non-empty")
    if not np.all(np.isfinite(u)):
        raise ValueError("coefficient vector contains non-finite entries")
    return u


def basis_vector(n: int, N: int) -> np.ndarray:
    """Unit coefficient vector e_n of length N."""
    if not 0 <= n < N:
        raise ValueError(f"basis index {n} outside truncation of length {N}")
    e = np.zeros(N)
    e[n] = 1.0
    return e


def coeffs_to_json(u) -> list:
    """Coefficient vector as a plain list of floats (index order 0..N-1)."""
    return [float(x) for x in np.asarray(u, dtype=np.float64)]


def coeffs_from_json(values) -> np.ndarray:
    return as_coeffs(values)


def hermite_eval(k: int, t: float) -> float:
    """Evaluate the orthonormal Hermite function h_k at t.

    Uses the normalized three-term recurrence

        h_{m+1}(t) = t*sqrt(2/(m+1))*h_m(t) - sqrt(m/(m+1))*h_{m-1}(t)

    seeded with h_0(t) = pi**(-1/4)*exp(-t**2/2), which stays in range for
    all indices (no factorials are formed).  Indices above
    ``HERMITE_INDEX_CAP`` are rejected to bound runtime.

    Once exp(-t**2/2) underflows (|t| > ~38.6) the returned values are exact
    zeros; this is only adequate while k stays well below t**2/2, which holds
    for every quadrature rule this package builds.
    """
    if k < 0:
        raise ValueError("Hermite index must be nonnegative")
    if k > HERMITE_INDEX_CAP:
        raise ValueError(f"Hermite index {k} exceeds cap {HERMITE_INDEX_CAP}")
    if not np.isfinite(t):
        raise ValueError("evaluation point must be finite")
    h_prev = 0.0
    h = _PI_QUARTER * np.exp(-0.5 * t * t)
    for m in range(k):
        h, h_prev = t * np.sqrt(2.0 / (m + 1)) * h - np.sqrt(m / (m + 1.0)) * h_prev, h
    return float(h)


def hermite_matrix(N: int, x) -> np.ndarray:
    """Values h_k(x_j) for k < N as an (N, len(x)) array, via the recurrence."""
    if N < 1:
        raise ValueError("need at least one basis function")
    if N - 1 > HERMITE_INDEX_CAP:
        raise ValueError(f"Hermite index {N - 1} exceeds cap {HERMITE_INDEX_CAP}")
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    H = np.zeros((N, x.size))
    H[0] = _PI_QUARTER * np.exp(-0.5 * x * x)
    if N > 1:
        H[1] = np.sqrt(2.0) * x * H[0]
    for m in range(1, N - 1):
        H[m + 1] = x * np.sqrt(2.0 / (m + 1)) * H[m] - np.sqrt(m / (m + 1.0)) * H[m - 1]
    return H


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Hermite rule for the weight exp(-x**2).

    ``weights`` are the classical weights; ``scaled_weights`` hold
    weights*exp(nodes**2), evaluated through the Christoffel identity
    1/sum_{k<count} h_k(x_j)**2 so they stay finite for large rules where the
    classical weights underflow.
    """

    nodes: np.ndarray
    weights: np.ndarray
    scaled_weights: np.ndarray
    count: int


def _christoffel_scaled_weights(count: int, nodes: np.ndarray) -> np.ndarray:
    """weights*exp(nodes**2) as 1/sum_{k<count} h_k(x_j)**2.

    The recurrence runs on mantissa/exponent pairs h_k = v*2**e so the climb
    from the exponentially small h_0 at extreme nodes up to the O(1) values
    near k ~ x**2/2 never underflows; the running sum is kept in the current
    scale and rescaled along with the iterates.
    """
    x = np.asarray(nodes, dtype=np.float64)
    log_h0 = -0.25 * np.log(np.pi) - 0.5 * x * x
    e = np.floor(log_h0 / np.log(2.0))
    v = np.exp(log_h0 - e * np.log(2.0))
    v_prev = np.zeros_like(x)
    s = v * v
    for m in range(count - 1):
        v_next = x * np.sqrt(2.0 / (m + 1)) * v - np.sqrt(m / (m + 1.0)) * v_prev
        v_prev, v = v, v_next
        s = s + v * v
        big = np.abs(v) > 1e120
        if np.any(big):
            v[big] *= 2.0**-400
            v_prev[big] *= 2.0**-400
            s[big] *= 2.0**-800
            e[big] += 400.0
    return np.exp(-2.0 * e * np.log(2.0) - np.log(s))


def gauss_hermite_rule(count: int) -> QuadratureRule:
    """Nodes and weights of the ``count``-point Gauss-Hermite rule.

    Exact for polynomial*exp(-x**2) integrands up to degree 2*count - 1.
    The classical weights underflow at extreme nodes of very large rules;
    ``scaled_weights`` remain finite for every admissible count.
    """
    if count < 1:
        raise ValueError("quadrature count must be positive")
    if count > QUADRATURE_COUNT_CAP:
        raise ValueError(f"quadrature count {count} exceeds cap {QUADRATURE_COUNT_CAP}")
    nodes, weights = roots_hermite(count)
    scaled = _christoffel_scaled_weights(count, nodes)
    return QuadratureRule(nodes=nodes, weights=weights, scaled_weights=scaled, count=count)


def project(f, N: int, rule: QuadratureRule) -> np.ndarray:
    """Coefficients <f, h_k> for k < N by Gauss-Hermite quadrature.

    The integrand f*h_k is rewritten as [f*h_k*exp(x**2)]*exp(-x**2) before
    applying the rule, so f must decay fast enough that f(x)*exp(x**2/2) is
    bounded over the node range (caller responsibility).

    Raises ValueError naming the node if f evaluates non-finite anywhere.
    """
    if N < 1:
        raise ValueError("need at least one coefficient")
    with np.errstate(all="ignore"):
        fx = np.asarray(f(rule.nodes), dtype=np.float64)
    if fx.shape != rule.nodes.shape:
        fx = np.broadcast_to(fx, rule.nodes.shape).astype(np.float64)
    bad = ~np.isfinite(fx)
    if np.any(bad):
        j = int(np.argmax(bad))
        raise ValueError(f"integrand is non-finite at node x={rule.nodes[j]!r} (index {j})")
    g = rule.scaled_weights * fx
    if not np.all(np.isfinite(g)):
        j = int(np.argmax(~np.isfinite(g)))
        raise ValueError(f"weighted integrand overflows at node x={rule.nodes[j]!r} (index {j})")
    return hermite_matrix(N, rule.nodes) @ g


def weight_array(p: float, M: int) -> np.ndarray:
    """Weights (2k+1)**(2p) for k < M.

    Negative p goes through exp(2p*log(2k+1)) to avoid precision loss in
    pow with large bases and negative exponents.
    """
    if M < 1:
        raise ValueError("need at least one weight")
    k = np.arange(M, dtype=np.float64)
    if p >= 0:
        return np.power(2.0 * k + 1.0, 2.0 * p)
    return np.exp(2.0 * p * np.log(2.0 * k + 1.0))


@dataclass(frozen=True)
class SobolevWeights:
    """Regularity index p together with the weights (2k+1)**(2p), k < M."""

    p: float
    weights: np.ndarray

    def __len__(self) -> int:
        return self.weights.size


def sobolev_weights(p: float, M: int) -> SobolevWeights:
    if not np.isfinite(p):
        raise ValueError("regularity index must be finite")
    return SobolevWeights(p=float(p), weights=weight_array(p, M))


def _weighted_sum(w: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    # Extended-precision accumulation: deterministic (no BLAS) and accurate
    # enough for the near-cancelling quadratic forms built on top of this.
    m = min(a.size, b.size)
    ld = np.longdouble
    return float(np.sum(w[:m].astype(ld) * a[:m].astype(ld) * b[:m].astype(ld)))


def inner_p(u, v, w: SobolevWeights) -> float:
    """Weighted inner product sum_k (2k+1)**(2p) u_k v_k.

    The shorter vector is zero padded, so mixed truncation levels are fine as
    long as the weights cover the longer one.
    """
    u = as_coeffs(u)
    v = as_coeffs(v)
    if len(w) < max(u.size, v.size):
        raise ValueError(
            f"weights cover {len(w)} coefficients, need {max(u.size, v.size)}"
        )
    return _weighted_sum(w.weights, u, v)


def norm_p(u, w: SobolevWeights) -> float:
    """Weighted norm sqrt(inner_p(u, u, w))."""
    u = as_coeffs(u)
    if len(w) < u.size:
        raise ValueError(f"weights cover {len(w)} coefficients, need {u.size}")
    return float(np.sqrt(_weighted_sum(w.weights, u, u)))


def shift_down(u, m: int) -> np.ndarray:
    """Index-lowering shift: output[k] = u[k+m], annihilating the first m modes.

    Realizes the operator sending h_n to h_{n-m} (zero for n < m) on
    coefficient vectors; m = 0 is the identity.
    """
    if m < 0:
        raise ValueError("shift amount must be nonnegative")
    u = as_coeffs(u)
    out = np.zeros_like(u)
    if m < u.size:
        out[: u.size - m] = u[m:]
    return out
