"""Vectorised many-path estimator engine for scalar mark-sum scenarios.

For scenarios whose state is x0 plus a sum of a function of the marks
(no state feedback), whole ensembles reduce to per-path segment sums over
one concatenated mark array.  This is what makes 1e5-path weight and
density runs take seconds instead of minutes.

Randomness stays path-addressed: path i draws its jump count and marks
from the sub-streams of path index i, so an ensemble computed in chunks
by several workers is bit-identical to a single-worker run.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .measures import compensator_integral, sample_mark, total_mass
from .rng import TAG_MARK, TAG_TIME, RngStream
from .sde import Scenario


@dataclass
class SimpleEnsemble:
    """Per-path functionals of a scalar mark-sum scenario."""

    x: np.ndarray          # state at the horizon
    n_jumps: np.ndarray
    gamma: np.ndarray      # covariance N(xi h'^2)
    a: np.ndarray          # generator path, compensated sum of a[h]
    g2: np.ndarray         # bracket of X with gamma
    xa: np.ndarray         # bracket of X with a
    xg2: np.ndarray        # bracket of X with g2
    marks: np.ndarray      # concatenated marks of all paths
    offsets: np.ndarray    # path i owns marks[offsets[i]:offsets[i+1]]

    def __len__(self):
        return len(self.x)


def sample_mark_sets(scenario: Scenario, n_paths: int, stream: RngStream,
                     path_offset: int = 0):
    """Counts and concatenated marks for paths [offset, offset + n)."""
    spec = scenario.measure
    mass = total_mass(spec)
    lam = scenario.horizon * mass
    counts = np.empty(n_paths, dtype=np.int64)
    chunks = []
    for i in range(n_paths):
        pstream = stream.child(path=path_offset + i + 1)
        n = int(pstream.child(tag=TAG_TIME).generator().poisson(lam))
        counts[i] = n
        if n:
            chunks.append(sample_mark(spec, pstream.child(tag=TAG_MARK), size=n))
    marks = np.concatenate(chunks) if chunks else np.empty(0)
    return counts, marks


def _segment_sum(values: np.ndarray, counts: np.ndarray) -> np.ndarray:
    out = np.zeros(len(counts))
    nz = counts > 0
    if not np.any(nz):
        return out
    offsets = np.concatenate([[0], np.cumsum(counts)[:-1]])
    out[nz] = np.add.reduceat(values, offsets[nz])
    return out


def simple_ensemble(scenario: Scenario, n_paths: int, stream: RngStream,
                    path_offset: int = 0) -> SimpleEnsemble:
    """Simulate n_paths paths of a scalar mark-sum scenario, with jets."""
    sj = scenario.simple
    if scenario.dim != 1 or sj is None:
        raise ValueError("vectorised ensembles need a scalar scenario with mark jets")
    T = scenario.horizon
    counts, marks = sample_mark_sets(scenario, n_paths, stream, path_offset)

    h = sj.h(marks)
    x = scenario.x0[0] + _segment_sum(np.broadcast_to(h, marks.shape).astype(float), counts)
    if scenario.compensated:
        x = x - T * float(compensator_integral(scenario.measure, sj.h, 1.0))
    mean_gen = T * float(compensator_integral(scenario.measure, sj.ah, 1.0))

    def seg(fn):
        vals = np.broadcast_to(fn(marks), marks.shape).astype(float)
        return _segment_sum(vals, counts)

    ens = SimpleEnsemble(
        x=x,
        n_jumps=counts,
        gamma=seg(sj.g1),
        a=seg(sj.ah) - mean_gen,
        g2=seg(sj.g2),
        xa=seg(sj.bracket_x_ah),
        xg2=seg(sj.bracket_x_g2),
        marks=marks,
        offsets=np.concatenate([[0], np.cumsum(counts)]),
    )
    return ens


def merge_ensembles(parts) -> SimpleEnsemble:
    """Concatenate ensembles computed for consecutive path ranges."""
    parts = list(parts)
    cat = lambda name: np.concatenate([getattr(p, name) for p in parts])
    offsets = [parts[0].offsets]
    base = parts[0].offsets[-1]
    for p in parts[1:]:
        offsets.append(p.offsets[1:] + base)
        base = base + p.offsets[-1]
    return SimpleEnsemble(
        x=cat("x"), n_jumps=cat("n_jumps"), gamma=cat("gamma"), a=cat("a"),
        g2=cat("g2"), xa=cat("xa"), xg2=cat("xg2"), marks=cat("marks"),
        offsets=np.concatenate(offsets))
