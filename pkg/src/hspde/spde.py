"""Monte-Carlo simulator for the stochastic drift-diffusion at Galerkin truncation.

Time stepping is drift-implicit and noise-explicit: the stiff drift goes
through the prefactored implicit system while the two-dimensional noise is
applied at the left endpoint (Ito convention), so the ensemble mean follows
the deterministic implicit Euler iterate exactly at scheme level.

Randomness is counter based.  The master seed keys a Philox stream, the step
index selects a counter block, and a path's increment pair occupies a fixed
position inside that block, making every increment a pure function of
(seed, path index, step) regardless of ensemble size, execution order, or
degree of parallelism.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.random import Philox
from scipy.special import ndtri

from .hermite import as_coeffs, sobolev_weights, weight_array
from .operators import A_matrices, DriftSolver, OperatorParams, flush_tiny
from .pde import NumericalError, build_drift_solver

__all__ = [
    "NoiseDriver",
    "PathEnsemble",
    "SpdeEnergyReport",
    "aggregate_se",
    "energy_report",
    "gaussian_increments",
    "increment_block",
    "mc_mean",
    "simulate",
    "spde_step",
]

NOISE_DIM = 2


@dataclass(frozen=True)
class NoiseDriver:
    """Addresses one path's increment stream: (seed, path_index) at step dt."""

    seed: int
    path_index: int
    dt: float
    dim: int = NOISE_DIM

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 bits")
        if self.path_index < 0:
            raise ValueError("path index must be nonnegative")
        if not (np.isfinite(self.dt) and self.dt > 0.0):
            raise ValueError("dt must be positive and finite")
        if self.dim != NOISE_DIM:
            raise ValueError(f"noise dimension is fixed at {NOISE_DIM}")


def _raw_uniforms(seed: int, step: int, count: int) -> np.ndarray:
    # One Philox counter block per (seed, step); positions inside the block
    # belong to (path, component) pairs.  Top 53 bits -> open (0, 1).
    bg = Philox(key=np.uint64(seed), counter=[0, 0, 0, np.uint64(step)])
    raw = bg.random_raw(count)
    return (raw >> np.uint64(11)).astype(np.float64) * 2.0**-53 + 2.0**-54


def increment_block(seed: int, dt: float, step: int, n_paths: int) -> np.ndarray:
    """Brownian increment pairs for paths 0..n_paths-1 at one step, shape (n_paths, 2)."""
    if step < 0:
        raise ValueError("step index must be nonnegative")
    u = _raw_uniforms(seed, step, 2 * n_paths)
    return ndtri(u).reshape(n_paths, 2) * np.sqrt(dt)


def gaussian_increments(driver: NoiseDriver, step: int) -> tuple[float, float]:
    """The increment pair (dB1, dB2) for this driver's path at the given step."""
    block = increment_block(driver.seed, driver.dt, step, driver.path_index + 1)
    pair = block[driver.path_index]
    return float(pair[0]), float(pair[1])


def spde_step(
    x,
    params: OperatorParams,
    dt: float,
    increments,
    drift_solver: DriftSolver,
) -> np.ndarray:
    """One drift-implicit Euler-Maruyama step.

    Solves (I - dt*L) x_next = x + dB1*A1 x + dB2*A2 x with the noise
    evaluated at the step start.  With all coefficients zero the system is
    the identity and the step returns its input.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    a1, a2 = A_matrices(params, n, exact=False)
    db1, db2 = increments
    rhs = x + db1 * a1.apply(x) + db2 * a2.apply(x)
    return flush_tiny(drift_solver.solve(rhs))


@dataclass
class PathEnsemble:
    """Saved states of a path ensemble: states[m, k] is path m at save_times[k]."""

    states: np.ndarray  # (n_paths, len(save_times), N)
    save_times: np.ndarray
    params: OperatorParams
    p: float
    N: int
    dt: float
    n_paths: int
    seed: int
    failed: tuple = ()

    def successful(self) -> np.ndarray:
        mask = np.ones(self.n_paths, dtype=bool)
        mask[list(self.failed)] = False
        return mask


def _steps_between(t0: float, t1: float, dt: float) -> int:
    m = (t1 - t0) / dt
    k = int(round(m))
    if k < 1 or abs(m - k) > 1e-12 * max(1.0, abs(m)):
        raise ValueError(
            f"dt={dt} does not divide the gap {t1 - t0} between save times"
        )
    return k


def simulate(
    psi,
    params: OperatorParams,
    p: float,
    N: int,
    dt: float,
    T: float,
    n_paths: int,
    seed: int,
    save_times=None,
    psi_sampler=None,
) -> PathEnsemble:
    """Run n_paths independent drift-implicit paths and save selected states.

    All paths advance together through vectorized banded arithmetic; the
    outcome is nevertheless path-separable because every increment is keyed
    by (seed, path index, step).  A path that turns non-finite is recorded in
    ``failed`` and carries NaN states from its failure time on.

    psi_sampler, if given, maps a path index to that path's initial
    coefficients (for random initial conditions); default is the shared psi.
    """
    psi = as_coeffs(psi)
    if psi.size > N:
        raise ValueError("initial condition longer than the truncation")
    if n_paths < 1:
        raise ValueError("need at least one path")
    NoiseDriver(seed=seed, path_index=0, dt=dt)  # validates seed and dt
    if save_times is None:
        save_times = np.array([0.0, float(T)])
    save_times = np.asarray(save_times, dtype=np.float64)
    if save_times[0] != 0.0 or (save_times.size > 1 and not np.all(np.diff(save_times) > 0)):
        raise ValueError("save times must start at 0 and increase")
    if save_times[-1] > T + 1e-12 * max(1.0, T):
        raise ValueError("save times extend past the horizon")
    save_steps = np.zeros(save_times.size, dtype=np.int64)
    for k in range(1, save_times.size):
        save_steps[k] = save_steps[k - 1] + _steps_between(
            float(save_times[k - 1]), float(save_times[k]), dt
        )
    n_steps = int(save_steps[-1])

    X = np.zeros((n_paths, N))
    if psi_sampler is None:
        X[:, : psi.size] = psi
    else:
        for m in range(n_paths):
            init = as_coeffs(psi_sampler(m))
            if init.size > N:
                raise ValueError(f"sampled initial condition for path {m} too long")
            X[m, : init.size] = init

    a1, a2 = A_matrices(params, N, exact=False)
    solver = build_drift_solver(params, N, dt)
    alive = np.ones(n_paths, dtype=bool)
    failed: list = []

    out = np.full((n_paths, save_times.size, N), np.nan)
    out[:, 0, :] = X
    save_at = {int(s): k for k, s in enumerate(save_steps) if k > 0}

    for step in range(n_steps):
        dB = increment_block(seed, dt, step, n_paths)
        rhs = X + dB[:, 0:1] * a1.apply(X) + dB[:, 1:2] * a2.apply(X)
        X = flush_tiny(solver.solve(rhs))
        ok = np.all(np.isfinite(X), axis=1)
        newly_bad = alive & ~ok
        if np.any(newly_bad):
            for m in np.nonzero(newly_bad)[0]:
                failed.append(int(m))
            alive &= ok
            X[~alive] = np.nan
        k = save_at.get(step + 1)
        if k is not None:
            out[:, k, :] = X

    return PathEnsemble(
        states=out, save_times=save_times, params=params, p=float(p), N=N,
        dt=float(dt), n_paths=n_paths, seed=int(seed), failed=tuple(sorted(failed)),
    )


def mc_mean(ens: PathEnsemble, time_index: int) -> tuple[np.ndarray, np.ndarray]:
    """Coefficientwise sample mean and standard error at one save time.

    Failed paths are excluded; at least two successful paths are required.
    """
    mask = ens.successful()
    m = int(np.count_nonzero(mask))
    if m < 2:
        raise NumericalError(f"only {m} successful paths; need at least 2")
    block = ens.states[mask, time_index, :]
    mean = block.mean(axis=0)
    se = block.std(axis=0, ddof=1) / np.sqrt(m)
    return mean, se


def aggregate_se(se, p: float) -> float:
    """Weighted aggregate standard error sqrt(sum_k (2k+1)^(2p) se_k^2)."""
    se = np.asarray(se, dtype=np.float64)
    return float(np.sqrt(np.sum(weight_array(p, se.size) * se * se)))


@dataclass
class SpdeEnergyReport:
    C: float
    p_check: float
    times: np.ndarray
    mean_sq_norm: np.ndarray
    se_rel: np.ndarray
    bounds: np.ndarray
    margins: np.ndarray  # (bound*(1 + 4 se_rel) - mean)/bound
    worst_margin: float
    ok: bool


def energy_report(ens: PathEnsemble, C: float, p_check: float) -> SpdeEnergyReport:
    """Check E||X_t||_q^2 <= exp(C t) ||X_0||_q^2 at 4-standard-error confidence.

    q = p_check; C should come from the constant estimator at the same index
    and the run's operator coefficients.  Violations are reported via the
    ``ok`` flag and margins, never raised.
    """
    mask = ens.successful()
    if not np.any(mask):
        raise NumericalError("all paths failed")
    w = weight_array(p_check, ens.N)
    sq = np.einsum("mkn,n->mk", ens.states[mask] ** 2, w)  # ||X||_q^2 per path/time
    mean_sq = sq.mean(axis=0)
    m = sq.shape[0]
    se = sq.std(axis=0, ddof=1) / np.sqrt(m) if m > 1 else np.zeros_like(mean_sq)
    se_rel = np.where(mean_sq > 0, se / np.where(mean_sq > 0, mean_sq, 1.0), 0.0)
    base = mean_sq[0]
    bounds = np.exp(C * ens.save_times) * base
    slack = bounds * (1.0 + 4.0 * se_rel)
    margins = np.where(bounds > 0, (slack - mean_sq) / np.where(bounds > 0, bounds, 1.0), 0.0)
    worst = float(np.min(margins))
    return SpdeEnergyReport(
        C=float(C), p_check=float(p_check), times=ens.save_times,
        mean_sq_norm=mean_sq, se_rel=se_rel, bounds=bounds, margins=margins,
        worst_margin=worst, ok=bool(worst >= 0.0),
    )
