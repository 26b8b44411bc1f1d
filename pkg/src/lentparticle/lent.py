"""Malliavin covariance by two independent routes.

Route one is deterministic: conjugate the per-jump accumulator by the
final flow derivative, Gamma = K_T (sum_j Kbar gamma[c] Kbar^T) K_T^T.
Route two is Monte Carlo: enrich every jump with an auxiliary zero-mean
mark, propagate the gradient linear SDE along the same trajectory, and
average outer products of the resulting samples.  Agreement of the two is
the library's central correctness check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .bottom import CapabilityError
from .prm import GAUSSIAN, RADEMACHER, MarkedPoissonPath, attach_rho_marks
from .rng import TAG_RHO, RngStream
from .sde import Scenario, Trajectory, _comp_jets


@dataclass
class MalliavinMatrix:
    """Covariance matrix of the state at time t, with its per-jump log."""

    t: float
    gamma: np.ndarray
    increments: list          # jump index -> conjugated contribution at time t

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.gamma)[0])


@dataclass
class GradientSample:
    value: np.ndarray         # one realisation of the gradient of X_T
    rho_block: np.ndarray     # the auxiliary marks that produced it


def malliavin_matrix(traj: Trajectory) -> MalliavinMatrix:
    """Exact finite-sum covariance from the trajectory's jump log."""
    if traj.gamma_incs is None:
        raise ValueError("trajectory carries no flow; solve with jet order >= 1")
    d = traj.scenario.dim
    K = traj.k_final
    incs = [K @ inc @ K.T for inc in traj.gamma_incs]
    gamma = np.zeros((d, d))
    for inc in incs:
        gamma = gamma + inc
    return MalliavinMatrix(t=traj.scenario.horizon, gamma=gamma, increments=incs)


def _propagate_gradients(scenario: Scenario, traj: Trajectory,
                         blocks: np.ndarray) -> np.ndarray:
    """Run the gradient linear SDE for a batch of rho-enrichments.

    blocks has shape (n_replicas, n_jumps, block_dim); returns (n_replicas, d).
    The recursion visits the same events as the state solve: at a jump the
    gradient is multiplied by (I + D_x c) and receives the jump's injection,
    between jumps it follows the linearised compensator drift.
    """
    d = scenario.dim
    n_rep = blocks.shape[0]
    sharp = np.zeros((d, n_rep))
    jump_at = {int(e): j for j, e in enumerate(traj.jump_events)}
    for k in range(1, len(traj.times)):
        dt = traj.times[k] - traj.times[k - 1]
        if scenario.compensated and dt > 0:
            cdx, _, _ = _comp_jets(scenario, traj.times[k - 1],
                                   traj.states[k - 1], None, False)
            sharp = sharp - cdx @ sharp * dt
        j = jump_at.get(k)
        if j is not None:
            rec = traj.jumps[j]
            sharp = rec.jac @ sharp + rec.flat @ blocks[:, j, :].T
    return sharp.T


def gradient_sample(scenario: Scenario, path: MarkedPoissonPath,
                    traj: Trajectory, stream: RngStream | None = None) -> GradientSample:
    """One gradient realisation from the path's attached rho-blocks."""
    if path.rho_blocks is None:
        raise ValueError("path carries no rho-blocks; call attach_rho_marks first")
    blocks = path.rho_blocks[0][None, :, :]
    value = _propagate_gradients(scenario, traj, blocks)[0]
    return GradientSample(value=value, rho_block=path.rho_blocks[0])


def gradient_samples(scenario: Scenario, traj: Trajectory, n_replicas: int,
                     stream: RngStream, basis: str = GAUSSIAN) -> np.ndarray:
    """Batch of independent gradient realisations, shape (n_replicas, d).

    Replica r draws its blocks from the replica-indexed sub-stream, so the
    batch is reproducible and schedule-independent.
    """
    n_jumps = len(traj.jumps)
    bd = max(rec.flat.shape[1] for rec in traj.jumps) if n_jumps else 1
    blocks = np.empty((n_replicas, n_jumps, bd))
    for r in range(n_replicas):
        gen = stream.child(replica=r + 1, tag=TAG_RHO).generator()
        if basis == GAUSSIAN:
            blocks[r] = gen.standard_normal((n_jumps, bd))
        elif basis == RADEMACHER:
            blocks[r] = gen.integers(0, 2, size=(n_jumps, bd)) * 2.0 - 1.0
        else:
            raise ValueError(f"unknown rho basis {basis!r}")
    return _propagate_gradients(scenario, traj, blocks)


def empirical_gamma(samples: np.ndarray) -> np.ndarray:
    """Second-moment matrix of gradient samples (the Monte Carlo route)."""
    samples = np.atleast_2d(samples)
    return samples.T @ samples / samples.shape[0]


def iterated_gradient_simple(h_flats, path: MarkedPoissonPath, k: int) -> float:
    """k-fold gradient of a simple integral of h over the jump measure.

    h_flats[j-1](u) must be the j-fold application of f -> sqrt(xi) f' to
    h; the k-th gradient realisation is the sum over jumps of
    h_flats[k-1](u_j) times the product of the jump's k auxiliary marks.
    """
    if not 1 <= k <= 3:
        raise ValueError("gradient order must be 1, 2 or 3")
    if len(h_flats) < k:
        raise CapabilityError(f"order-{k} gradient needs {k} mark jets, got {len(h_flats)}")
    if path.rho_blocks is None or path.rho_blocks.shape[0] < k:
        raise ValueError(f"path needs rho-blocks of order >= {k}")
    if path.n_jumps == 0:
        return 0.0
    terms = np.asarray([h_flats[k - 1](u) for u in path.marks])
    prod = np.prod(path.rho_blocks[:k, :, 0], axis=0)
    return float(np.dot(terms, prod))


def gamma_k_simple(h_flats, path: MarkedPoissonPath, k: int,
                   n_replicas: int, stream: RngStream, basis: str = GAUSSIAN) -> float:
    """Order-k energy of a simple integral, by averaging squared gradients."""
    vals = np.empty(n_replicas)
    for r in range(n_replicas):
        enriched = attach_rho_marks(path, k, stream.child(replica=r + 1), basis=basis)
        vals[r] = iterated_gradient_simple(h_flats, enriched, k)
    return float(np.mean(vals ** 2))


def gaussian_kappa(p: float) -> float:
    """p-th absolute moment of a standard normal, to the power 1/p."""
    if p <= 0:
        raise ValueError("p must be positive")
    log_m = (p / 2) * math.log(2.0) + gammaln((p + 1) / 2) - 0.5 * math.log(math.pi)
    return math.exp(log_m / p)


def pnorm_ratio(samples: np.ndarray, p: float, gamma: float | None = None) -> float:
    """Ratio of the empirical p-norm of gradient samples to Gamma^(1/2).

    With a Gaussian auxiliary basis the ratio estimates the Gaussian
    p-moment constant; with a Rademacher basis it falls in the
    hypercontractivity sandwich [1, (p-1)^(k/2)] for p > 2.
    """
    if p <= 1:
        raise ValueError("p must exceed 1")
    samples = np.asarray(samples, dtype=float).reshape(-1)
    if gamma is None:
        gamma = float(np.mean(samples ** 2))
    if gamma <= 0:
        raise ZeroDivisionError("zero energy: p-norm ratio undefined")
    pnorm = float(np.mean(np.abs(samples) ** p)) ** (1.0 / p)
    return pnorm / math.sqrt(gamma)
