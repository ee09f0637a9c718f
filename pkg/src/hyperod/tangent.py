"""Orbit propagation with the state-transition matrix and parameter column.

Along an orbit of f_k we carry, for signed step index n, the Jacobian of the
n-th iterate with respect to the initial condition (the state-transition
matrix) and its derivative with respect to the parameter k.  Both grow or
shrink exponentially for hyperbolic maps, so each is held as a scaled block
together with a power-of-two scale factor: the true matrix is
2**scale2_F * F.  Rescaling by powers of two is exact in binary floating
point, so the scaling machinery introduces no rounding of its own.

The recursions are
    forward:   F' = J(x) F,            dk' = j_k(x) + J(x) dk,
    backward:  F' = J(x')^{-1} F,      dk' = J(x')^{-1} (dk - j_k(x')),
with x' the preimage and J, j_k the state Jacobian and parameter derivative.
The backward parameter recursion follows from writing the (n+1)-st backward
iterate as the inverse step applied to the n-th and differentiating the
identity f_k(f_k^{-1}(y)) = y in k; it is cross-checked against finite
differences and against the closed form available for affine maps.

States are immutable values; forward and backward chains are independent
and may be advanced concurrently.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, IO, Iterator, Optional

import numpy as np

from .dynamics import ParametricMap, PhasePoint, wrap_nearest_delta

LN2 = math.log(2.0)

# Rescale when the max-abs entry leaves [2^-512, 2^512]; the bound is huge so
# rescaling is rare, and the factor is always a power of two.
_RESCALE_EXP = 512


def _normalize(block: np.ndarray, scale2: int) -> tuple[np.ndarray, int]:
    amax = float(np.max(np.abs(block)))
    if not math.isfinite(amax):
        raise ValueError("non-finite value in tangent propagation")
    if amax == 0.0:
        return block, scale2
    e = math.frexp(amax)[1]
    if e > _RESCALE_EXP or e < -_RESCALE_EXP:
        return np.ldexp(block, -e), scale2 + e
    return block, scale2


@dataclass(frozen=True)
class TangentState:
    """Orbit point with scaled state-transition matrix and parameter column.

    ``scale2_dk is None`` flags an exactly-zero parameter column (log-scale
    minus infinity); this is the n = 0 state and keeps scale alignment
    well-defined instead of pairing a zero vector with an arbitrary scale.
    """

    n: int
    x: PhasePoint
    F: np.ndarray
    scale2_F: int
    dk: np.ndarray
    scale2_dk: Optional[int]

    @property
    def logscale_F(self) -> float:
        return self.scale2_F * LN2

    @property
    def logscale_dk(self) -> float:
        return -math.inf if self.scale2_dk is None else self.scale2_dk * LN2

    def F_true(self) -> np.ndarray:
        """Unscaled state-transition matrix (may overflow for extreme n)."""
        return np.ldexp(self.F, self.scale2_F)

    def dk_true(self) -> np.ndarray:
        if self.scale2_dk is None:
            return np.zeros(self.x.dim)
        return np.ldexp(self.dk, self.scale2_dk)


def initial_state(map_: ParametricMap, x0: PhasePoint) -> TangentState:
    if x0.dim != map_.dim:
        raise ValueError("initial point dimension does not match the map")
    d = map_.dim
    return TangentState(0, x0, np.eye(d), 0, np.zeros(d), None)


def advance_forward(s: TangentState, map_: ParametricMap, k: float) -> TangentState:
    """Advance a forward state from step n >= 0 to n + 1."""
    if s.n < 0:
        raise ValueError("advance_forward requires a forward state (n >= 0)")
    J = map_.jac_x(k, s.x)
    jk = map_.jac_k(k, s.x)
    F, sF = _normalize(J @ s.F, s.scale2_F)
    if s.scale2_dk is None:
        dk, sdk = jk, 0
    else:
        c = s.scale2_dk
        m = max(c, 0)
        dk = np.ldexp(J @ s.dk, c - m) + np.ldexp(jk, -m)
        sdk = m
    if np.all(dk == 0.0):
        dk, sdk = np.zeros(map_.dim), None
    else:
        dk, sdk = _normalize(dk, sdk)
    x = map_.eval(k, s.x)
    return TangentState(s.n + 1, x, F, sF, dk, sdk)


def advance_backward(s: TangentState, map_: ParametricMap, k: float) -> TangentState:
    """Advance a backward state from step n <= 0 to n - 1."""
    if s.n > 0:
        raise ValueError("advance_backward requires a backward state (n <= 0)")
    x = map_.inverse_eval(k, s.x)
    Ji = map_.jac_x_inv(k, x)
    if not np.all(np.isfinite(Ji)):
        raise ValueError("singular state Jacobian encountered going backward")
    jk = map_.jac_k(k, x)
    F, sF = _normalize(Ji @ s.F, s.scale2_F)
    if s.scale2_dk is None:
        dk, sdk = -(Ji @ jk), 0
    else:
        c = s.scale2_dk
        m = max(c, 0)
        dk = np.ldexp(Ji @ s.dk, c - m) - np.ldexp(Ji @ jk, -m)
        sdk = m
    if np.all(dk == 0.0):
        dk, sdk = np.zeros(map_.dim), None
    else:
        dk, sdk = _normalize(dk, sdk)
    return TangentState(s.n - 1, x, F, sF, dk, sdk)


def iter_states(map_: ParametricMap, k: float, x0: PhasePoint, N: int) -> Iterator[TangentState]:
    """Yield tangent states in the order 0, +1, -1, +2, -2, ..., +-N."""
    if N < 0:
        raise ValueError("N must be >= 0")
    s0 = initial_state(map_, x0)
    yield s0
    fwd, bwd = s0, s0
    for _ in range(N):
        fwd = advance_forward(fwd, map_, k)
        yield fwd
        bwd = advance_backward(bwd, map_, k)
        yield bwd


def propagate(map_: ParametricMap, k: float, x0: PhasePoint, N: int,
              sink: Callable[[TangentState], None]) -> None:
    """Feed the 2N+1 tangent states to ``sink`` in shell order."""
    if N < 1:
        raise ValueError("N must be >= 1")
    for s in iter_states(map_, k, x0, N):
        sink(s)


def iter_shells(map_: ParametricMap, k: float, x0: PhasePoint, N: int
                ) -> Iterator[tuple[TangentState, TangentState]]:
    """Yield (s_{+n}, s_{-n}) pairs for n = 0..N; shell 0 repeats the n=0 state."""
    it = iter_states(map_, k, x0, N)
    s0 = next(it)
    yield s0, s0
    while True:
        try:
            plus = next(it)
        except StopIteration:
            return
        minus = next(it)
        yield plus, minus


def fd_jacobian(map_: ParametricMap, k: float, x: PhasePoint, n: int, h: float
                ) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference state-transition matrix and parameter column.

    Independent oracle for the tangent recursion.  Orbits of the perturbed
    initial data are iterated on the torus and differences are unwrapped to
    the nearest representative, which is exact while the separation stays
    below half a period; hence the |n| <= 12 and h <= 1e-4 limits.
    """
    if abs(n) > 12:
        raise ValueError("fd_jacobian supports |n| <= 12")
    if not (1e-8 <= h <= 1e-4):
        raise ValueError("fd_jacobian requires h in [1e-8, 1e-4]")
    d = map_.dim

    def orbit_end(k_: float, coords: np.ndarray) -> np.ndarray:
        p = PhasePoint(coords, map_.periods)
        step = map_.eval if n >= 0 else map_.inverse_eval
        for _ in range(abs(n)):
            p = step(k_, p)
        return p.coords

    F = np.empty((d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        plus = orbit_end(k, x.coords + e)
        minus = orbit_end(k, x.coords - e)
        F[:, j] = wrap_nearest_delta(plus - minus, map_.periods) / (2.0 * h)
    plus = orbit_end(k + h, x.coords)
    minus = orbit_end(k - h, x.coords)
    dk = wrap_nearest_delta(plus - minus, map_.periods) / (2.0 * h)
    return F, dk


def csv_sink(stream: IO[str], dim: int) -> Callable[[TangentState], None]:
    """Per-step CSV dump: n, x_1..x_d, logscale_F, log max|F|, logscale_dk."""
    writer = csv.writer(stream)
    writer.writerow(["n"] + [f"x_{i + 1}" for i in range(dim)]
                    + ["logscale_F", "log_F_max", "logscale_dk"])

    def sink(s: TangentState) -> None:
        amax = float(np.max(np.abs(s.F)))
        row = [s.n] + [repr(float(c)) for c in s.x.coords]
        row += [repr(s.logscale_F),
                repr(math.log(amax) if amax > 0 else -math.inf),
                repr(s.logscale_dk)]
        writer.writerow(row)

    return sink
