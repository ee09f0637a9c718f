"""Observation synthesis and Gauss-Newton differential corrections.

Observations are the true orbit over epochs |n| <= N plus i.i.d. Gaussian
noise per coordinate, wrapped to the torus.  The noise stream is SplitMix64
feeding Box-Muller, so every experiment is bit-reproducible from its seed
across platforms.

The solver iterates the normal-equation correction built from the residuals
and the design blocks (state-transition matrix, optionally extended by the
parameter column), dropping the curvature terms, which is valid while the
residuals at the solution stay small.  Case 'a' estimates the initial
condition with the parameter held fixed; case 'b' co-estimates the
parameter.  The returned confidence ellipsoid is recomputed at the
converged center with the double-double accumulator, while the iteration
itself runs in standard precision.

Residuals wrap each coordinate difference to the nearest representative,
which resolves the torus ambiguity while residuals stay far below half a
period (true in every experiment here).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dynamics import ParametricMap, PhasePoint, wrap_coords, wrap_nearest_delta
from .tangent import iter_shells, iter_states
from .uncertainty import (Mode, SymmetricAccumulator, accumulate_shell,
                          ConfidenceEllipsoid, covariance_eigen, ellipsoid,
                          RankDeficientMatrix)


class FitDiverged(RuntimeError):
    """The correction loop left the divergence ball or went non-finite."""


class SingularNormalMatrix(RuntimeError):
    """The normal matrix is rank deficient; the step is not defined."""


_MASK64 = (1 << 64) - 1


class SplitMix64:
    """Deterministic 64-bit stream; the reference SplitMix64 recurrence."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + 0x9E3779B97F4A7C15) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def next_double(self) -> float:
        """Uniform in (0, 1]; never zero, so logs are safe."""
        return ((self.next_u64() >> 11) + 1) * 2.0 ** -53


class GaussianStream:
    """Standard normals by Box-Muller over a SplitMix64 stream."""

    def __init__(self, seed: int):
        self._u = SplitMix64(seed)
        self._spare: Optional[float] = None

    def next(self) -> float:
        if self._spare is not None:
            z, self._spare = self._spare, None
            return z
        u1 = self._u.next_double()
        u2 = self._u.next_double()
        r = math.sqrt(-2.0 * math.log(u1))
        z0 = r * math.cos(2.0 * math.pi * u2)
        self._spare = r * math.sin(2.0 * math.pi * u2)
        return z0


@dataclass(frozen=True)
class ObservationSeries:
    """Observed points for epochs n = -N..N, wrapped to the fundamental domain."""

    N: int
    obs: tuple[np.ndarray, ...]          # index n + N
    noise_sigma: float
    seed: int
    periods: tuple
    truth: Optional[tuple[np.ndarray, float]] = None   # (x_true, k_true)

    def __post_init__(self):
        if len(self.obs) != 2 * self.N + 1:
            raise ValueError("an observation series holds exactly 2N+1 epochs")

    def at(self, n: int) -> np.ndarray:
        return self.obs[n + self.N]


def synthesize(map_: ParametricMap, k_true: float, x_true: PhasePoint, N: int,
               noise_sigma: float, seed: int) -> ObservationSeries:
    """Noisy observations of the orbit of x_true: f^n(x) + noise, wrapped.

    Noise is drawn per epoch in increasing n and per coordinate in order,
    so a fixed seed reproduces the series bit for bit.
    """
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    orbit: dict[int, np.ndarray] = {0: x_true.coords.copy()}
    p = x_true
    for n in range(1, N + 1):
        p = map_.eval(k_true, p)
        orbit[n] = p.coords.copy()
    p = x_true
    for n in range(1, N + 1):
        p = map_.inverse_eval(k_true, p)
        orbit[-n] = p.coords.copy()
    g = GaussianStream(seed)
    rows = []
    for n in range(-N, N + 1):
        eta = np.array([noise_sigma * g.next() for _ in range(map_.dim)])
        rows.append(wrap_coords(orbit[n] + eta, map_.periods))
    return ObservationSeries(N, tuple(rows), noise_sigma, seed, tuple(map_.periods),
                             truth=(x_true.coords.copy(), k_true))


def residuals(map_: ParametricMap, k: float, x: PhasePoint,
              obs: ObservationSeries) -> list[np.ndarray]:
    """Residuals obs_n - f^n(x) for n = -N..N, wrapped to (-P/2, P/2]."""
    if x.dim != map_.dim:
        raise ValueError("point dimension does not match the map")
    out: list[Optional[np.ndarray]] = [None] * (2 * obs.N + 1)
    out[obs.N] = wrap_nearest_delta(obs.at(0) - x.coords, map_.periods)
    p = x
    for n in range(1, obs.N + 1):
        p = map_.eval(k, p)
        out[obs.N + n] = wrap_nearest_delta(obs.at(n) - p.coords, map_.periods)
    p = x
    for n in range(1, obs.N + 1):
        p = map_.inverse_eval(k, p)
        out[obs.N - n] = wrap_nearest_delta(obs.at(-n) - p.coords, map_.periods)
    return out


def target(map_: ParametricMap, k: float, x: PhasePoint, obs: ObservationSeries) -> float:
    """Mean squared residual norm over the 2N+1 epochs."""
    xi = residuals(map_, k, x, obs)
    return float(sum(r @ r for r in xi) / len(xi))


@dataclass(frozen=True)
class SolveConfig:
    max_iter: int = 50
    tol_step: float = 1e-12
    divergence_norm: float = 1e3
    # optional fallback: halve the step while the target increases
    step_halving: bool = False
    max_halvings: int = 20


@dataclass(frozen=True)
class FitSolution:
    """Nominal solution with convergence diagnostics and its ellipsoid.

    ``center`` is the estimated initial condition (case 'a') or the initial
    condition with the parameter appended (case 'b').
    """

    center: np.ndarray
    converged: bool
    iterations: int
    rms: float
    ellipsoid: ConfidenceEllipsoid
    step_history: tuple[float, ...]


def _design_blocks(map_: ParametricMap, k: float, x: PhasePoint, N: int, case: str
                   ) -> tuple[dict[int, np.ndarray], dict[int, np.ndarray]]:
    """Unscaled design matrices and orbit points per epoch (standard precision)."""
    designs: dict[int, np.ndarray] = {}
    points: dict[int, np.ndarray] = {}
    for s in iter_states(map_, k, x, N):
        F = s.F_true()
        if case == "b":
            D = np.hstack([F, s.dk_true().reshape(-1, 1)])
        else:
            D = F
        if not np.all(np.isfinite(D)):
            raise FitDiverged(f"design block at epoch {s.n} is not finite")
        designs[s.n] = D
        points[s.n] = s.x.coords.copy()
    return designs, points


def solve(map_: ParametricMap, obs: ObservationSeries, x_init: PhasePoint,
          k_init: float, case: str = "a", cfg: SolveConfig = SolveConfig()) -> FitSolution:
    """Gauss-Newton differential corrections for the nominal solution.

    Case 'a' solves for the initial condition at fixed k = k_init; case 'b'
    appends the parameter to the unknowns.  Raises ``FitDiverged`` when the
    step norm exceeds ``cfg.divergence_norm`` or values go non-finite, and
    ``SingularNormalMatrix`` when the normal matrix is rank deficient (for
    instance case 'b' with N = 0).
    """
    case = case.lower()
    if case not in ("a", "b"):
        raise ValueError("case must be 'a' or 'b'")
    d = map_.dim
    dim = d if case == "a" else d + 1
    x = map_.point(x_init.coords)
    k = float(k_init)
    steps: list[float] = []
    converged = False
    iterations = 0
    q_prev: Optional[float] = None

    for iterations in range(1, cfg.max_iter + 1):
        designs, points = _design_blocks(map_, k, x, obs.N, case)
        C = np.zeros((dim, dim))
        rhs = np.zeros(dim)
        q_here = 0.0
        for n in range(-obs.N, obs.N + 1):
            xi = wrap_nearest_delta(obs.at(n) - points[n], map_.periods)
            D = designs[n]
            C += D.T @ D
            rhs += D.T @ xi
            q_here += float(xi @ xi)
        q_here /= 2 * obs.N + 1
        w = np.linalg.eigvalsh(C)
        if w[0] <= 0.0 or w[0] < 1e-14 * w[-1]:
            raise SingularNormalMatrix(
                f"normal matrix rank-deficient (eigenvalues {w.tolist()})")
        delta = np.linalg.solve(C, rhs)
        if cfg.step_halving and q_prev is not None:
            scale = 1.0
            for _ in range(cfg.max_halvings):
                x_try = map_.point(x.coords + scale * delta[:d])
                k_try = k + scale * delta[d] if case == "b" else k
                if target(map_, k_try, x_try, obs) <= q_prev:
                    break
                scale *= 0.5
            delta = delta * scale
        step = float(np.linalg.norm(delta))
        steps.append(step)
        if not math.isfinite(step) or step > cfg.divergence_norm or not math.isfinite(q_here):
            raise FitDiverged(f"step norm {step:g} at iteration {iterations}")
        x = map_.point(x.coords + delta[:d])
        if case == "b":
            k += float(delta[d])
        q_prev = q_here
        if step <= cfg.tol_step:
            converged = True
            break

    rms = math.sqrt(target(map_, k, x, obs))
    mode = Mode.CASE_A if case == "a" else Mode.CASE_B
    acc = SymmetricAccumulator.for_map(map_, mode)
    for plus, minus in iter_shells(map_, k, x, obs.N):
        accumulate_shell(acc, plus, minus)
    try:
        cov = covariance_eigen(acc)
    except RankDeficientMatrix as exc:
        raise SingularNormalMatrix(str(exc)) from exc
    if case == "a":
        center = x.coords.copy()
        periods = tuple(map_.periods)
    else:
        center = np.concatenate([x.coords, [k]])
        periods = tuple(map_.periods) + (None,)
    ell = ellipsoid(cov, center, sigma=1.0, periods=periods)
    return FitSolution(center, converged, iterations, rms, ell, tuple(steps))
