"""Reproducible Brownian increments on dyadic grids, and the per-step
uniform draws that realise the drift-time randomization.

Grids live on dyadic levels (2**level uniform steps), so coarsening is an
exact pairwise block sum and a coarse integrator can share one Brownian
path with a much finer reference run.  Randomness comes from counter-based
Philox substreams derived from a single master seed: the (path, role) pair
selects a substream, which makes whole experiments reproducible bit for
bit regardless of worker scheduling.  Gaussian increments are produced by
numpy's ``Generator.standard_normal`` (ziggurat) scaled by sqrt(dt); for a
pinned numpy version this transform is bit-stable.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .model import InvalidParameterError, NoiseStructure

__all__ = [
    "StreamRole",
    "SeedPolicy",
    "BrownianGrid",
    "RandomizationStream",
    "LevelError",
    "UnsupportedNoiseStructureError",
    "derive_substream",
    "sample_brownian_grid",
    "coarsen",
    "terminal_value",
    "sample_randomization",
    "randomized_time",
    "iterated_integrals",
]


class LevelError(ValueError):
    """A dyadic level argument is out of range."""


class UnsupportedNoiseStructureError(ValueError):
    """Raised for noise structures that would need Levy-area simulation."""


class StreamRole(Enum):
    """Which substream a consumer draws from; Brownian and randomization
    draws never share a stream."""

    BROWNIAN = 0
    RANDOMIZATION = 1


@dataclass(frozen=True)
class SeedPolicy:
    """Derivation rule (master_seed, path_index, role) -> substream.

    Distinct (path_index, role) pairs yield independent, reproducible
    substreams; the same inputs always yield the identical stream.
    """

    master_seed: int

    def __post_init__(self):
        if not 0 <= int(self.master_seed) < 2 ** 64:
            raise InvalidParameterError("master_seed must be a 64-bit unsigned integer")


def derive_substream(policy: SeedPolicy, path_index: int, role: StreamRole) -> np.random.Generator:
    """Return the deterministic substream for (path_index, role)."""
    if path_index < 0:
        raise InvalidParameterError("path_index must be nonnegative")
    seq = np.random.SeedSequence(policy.master_seed, spawn_key=(path_index, role.value))
    return np.random.Generator(np.random.Philox(seq))


@dataclass(frozen=True)
class BrownianGrid:
    """Increments of one Brownian path on a dyadic grid.

    ``increments[j]`` is w(t_{j+1}) - w(t_j) on the uniform grid with
    2**level steps of size horizon / 2**level.
    """

    level: int
    horizon: float
    m: int
    increments: np.ndarray  # shape (2**level, m)

    def __post_init__(self):
        if self.level < 0:
            raise LevelError("level must be nonnegative")
        arr = np.array(self.increments, dtype=float)
        if arr.shape != (1 << self.level, self.m):
            raise InvalidParameterError(
                f"increments must have shape ({1 << self.level}, {self.m})"
            )
        arr.setflags(write=False)
        object.__setattr__(self, "increments", arr)

    @property
    def n(self) -> int:
        return 1 << self.level

    @property
    def dt(self) -> float:
        return self.horizon / (1 << self.level)


def sample_brownian_grid(level: int, m: int, horizon: float,
                         stream: np.random.Generator) -> BrownianGrid:
    """Sample a grid of 2**level Gaussian increments with variance horizon/2**level."""
    if level < 0:
        raise LevelError("level must be nonnegative")
    if m < 1:
        raise InvalidParameterError("m must be positive")
    if horizon <= 0:
        raise InvalidParameterError("horizon must be positive")
    n = 1 << level
    dt = horizon / n
    increments = stream.standard_normal((n, m)) * np.sqrt(dt)
    return BrownianGrid(level=level, horizon=horizon, m=m, increments=increments)


def _halve(increments: np.ndarray) -> np.ndarray:
    # one dyadic coarsening step along axis 0: pairwise sums in index order
    return increments[0::2] + increments[1::2]


def coarsen(grid: BrownianGrid, target_level: int) -> BrownianGrid:
    """Coarsen a grid to ``target_level`` by exact pairwise block summation.

    Implemented as repeated one-level halving, so coarsening telescopes bit
    exactly: coarsen(coarsen(g, a), b) == coarsen(g, b) for b <= a.
    """
    if not 0 <= target_level <= grid.level:
        raise LevelError(
            f"target_level must lie in [0, {grid.level}], got {target_level}"
        )
    if target_level == grid.level:
        return grid
    inc = grid.increments
    for _ in range(grid.level - target_level):
        inc = _halve(inc)
    return BrownianGrid(level=target_level, horizon=grid.horizon, m=grid.m,
                        increments=inc)


def terminal_value(grid: BrownianGrid) -> np.ndarray:
    """Terminal Brownian value w(horizon) via the pairwise dyadic sum order."""
    return np.array(coarsen(grid, 0).increments[0])


@dataclass(frozen=True)
class RandomizationStream:
    """Per-step Unif[0, 1) draws realising the randomized drift times."""

    uniforms: np.ndarray

    def __post_init__(self):
        arr = np.array(self.uniforms, dtype=float).reshape(-1)
        if arr.size and (arr.min() < 0.0 or arr.max() >= 1.0):
            raise InvalidParameterError("uniforms must lie in [0, 1)")
        arr.setflags(write=False)
        object.__setattr__(self, "uniforms", arr)

    def __len__(self) -> int:
        return self.uniforms.size


def sample_randomization(n: int, stream: np.random.Generator) -> RandomizationStream:
    """Draw n i.i.d. Unif[0, 1) values from the given substream."""
    if n < 1:
        raise InvalidParameterError("n must be positive")
    return RandomizationStream(uniforms=stream.random(n))


def randomized_time(t_left: float, dt: float, u: float) -> float:
    """Randomized evaluation time t_left + dt*u, in [t_left, t_left + dt)."""
    if dt <= 0:
        raise InvalidParameterError("dt must be positive")
    if not 0.0 <= u < 1.0:
        raise InvalidParameterError("u must lie in [0, 1)")
    return t_left + dt * u


def iterated_integrals(dW, dt: float, structure: NoiseStructure) -> np.ndarray:
    """Per-step iterated Ito integrals I[k, l] for one increment vector.

    For scalar and diagonal structures the diagonal is ((dW_k)^2 - dt)/2 and
    off-diagonal entries vanish.  For commutative structure the symmetrised
    value (dW_k*dW_l - delta_{kl}*dt)/2 is exact once contracted against a
    tensor symmetric in (k, l).  General structure is rejected: simulating
    Levy areas is out of scope, and misuse should be loud.

    ``dW`` may be a single vector (m,) or a batch (..., m); the result has
    shape (..., m, m).
    """
    if structure is NoiseStructure.GENERAL:
        raise UnsupportedNoiseStructureError(
            "general (non-commutative) noise requires Levy-area simulation, "
            "which is not supported"
        )
    dw = np.asarray(dW, dtype=float)
    m = dw.shape[-1]
    diag = (dw * dw - dt) / 2.0
    if structure in (NoiseStructure.SCALAR, NoiseStructure.DIAGONAL):
        out = np.zeros(dw.shape + (m,))
    else:  # commutative
        out = dw[..., :, None] * dw[..., None, :] / 2.0
    idx = np.arange(m)
    out[..., idx, idx] = diag
    return out
