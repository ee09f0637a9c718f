"""Lyapunov spectra by the discrete QR method.

An orthonormal frame is pushed forward by the state Jacobian along the
orbit and re-orthonormalised by QR every few steps; the accumulated logs of
the R diagonal divided by the step count estimate the Lyapunov exponents.
The R diagonal is forced positive (column sign flips) so the log
accumulation is well-defined.

``extended_spectrum`` runs the same method for the auxiliary map
(x, k) -> (f_k(x), k), whose (d+1)-dimensional Jacobian appends the
parameter-derivative column and a bottom row (0 ... 0 1); its spectrum is
the spectrum of f_k plus one vanishing exponent.

``lyapunov_indicator`` reproduces the finite-horizon estimate used in
desk-scale experiments: an ordinary linear fit of the accumulated log
growth of the leading direction against the step index.  For strongly
fluctuating orbits this differs measurably from the long-run QR exponent,
so both are exposed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from .analysis import FitResult, fit_rate
from .dynamics import ParametricMap, PhasePoint


class DegenerateFrame(RuntimeError):
    """The QR frame collapsed (an R diagonal entry underflowed to zero)."""


@dataclass(frozen=True)
class SpectrumResult:
    """Estimated exponents, sorted ascending and counted with multiplicity.

    ``residual`` is the standard deviation of the per-window estimates
    (ten windows), a cheap fluctuation measure used for error bars.
    """

    exponents: tuple[float, ...]
    n_steps: int
    direction: str  # "forward" | "backward"
    residual: float

    @property
    def dim(self) -> int:
        return len(self.exponents)


def _qr_positive(V: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    Q, R = np.linalg.qr(V)
    diag = np.diag(R).copy()
    sign = np.where(diag >= 0.0, 1.0, -1.0)
    return Q * sign, np.abs(diag)


def _qr_spectrum(jacobians: Iterator[np.ndarray], dim: int, n_steps: int,
                 reorth_every: int, direction: str) -> SpectrumResult:
    if n_steps < 100:
        raise ValueError("n_steps must be >= 100")
    if not (1 <= reorth_every <= 10):
        raise ValueError("reorth_every must lie in [1, 10]")
    V = np.eye(dim)
    logs = np.zeros(dim)
    window_sums = np.zeros((10, dim))
    window_steps = np.zeros(10, dtype=int)
    pending = 0

    def collect(step: int) -> None:
        nonlocal V, logs, pending
        V, diag = _qr_positive(V)
        if np.any(diag == 0.0) or not np.all(np.isfinite(diag)):
            raise DegenerateFrame(
                "QR diagonal underflow; reduce reorth_every or check the map")
        contrib = np.log(diag)
        logs += contrib
        w = min((step - 1) * 10 // n_steps, 9)
        window_sums[w] += contrib
        window_steps[w] += pending
        pending = 0

    for step in range(1, n_steps + 1):
        V = next(jacobians) @ V
        pending += 1
        if step % reorth_every == 0:
            collect(step)
    if pending:
        collect(n_steps)

    exponents = np.sort(logs / n_steps)
    ok = window_steps > 0
    per_window = np.sort(window_sums[ok] / window_steps[ok, None], axis=1)
    residual = float(np.max(np.std(per_window, axis=0))) if ok.sum() > 1 else math.nan
    return SpectrumResult(tuple(float(g) for g in exponents), n_steps, direction, residual)


def _forward_jacobians(map_: ParametricMap, k: float, x0: PhasePoint) -> Iterator[np.ndarray]:
    x = x0
    while True:
        yield map_.jac_x(k, x)
        x = map_.eval(k, x)


def _backward_jacobians(map_: ParametricMap, k: float, x0: PhasePoint) -> Iterator[np.ndarray]:
    # Jacobian of f^{-1} at x is the inverse state Jacobian at the preimage.
    x = x0
    while True:
        x = map_.inverse_eval(k, x)
        yield map_.jac_x_inv(k, x)


def _extended_jacobians(map_: ParametricMap, k: float, x0: PhasePoint) -> Iterator[np.ndarray]:
    d = map_.dim
    x = x0
    while True:
        G = np.zeros((d + 1, d + 1))
        G[:d, :d] = map_.jac_x(k, x)
        G[:d, d] = map_.jac_k(k, x)
        G[d, d] = 1.0
        yield G
        x = map_.eval(k, x)


def lyapunov_qr(map_: ParametricMap, k: float, x0: PhasePoint, n_steps: int,
                reorth_every: int = 1) -> SpectrumResult:
    """Forward Lyapunov spectrum of f_k along the orbit of x0."""
    return _qr_spectrum(_forward_jacobians(map_, k, x0), map_.dim,
                        n_steps, reorth_every, "forward")


def backward_spectrum(map_: ParametricMap, k: float, x0: PhasePoint, n_steps: int,
                      reorth_every: int = 1) -> SpectrumResult:
    """Lyapunov spectrum of the inverse map along the backward orbit of x0."""
    return _qr_spectrum(_backward_jacobians(map_, k, x0), map_.dim,
                        n_steps, reorth_every, "backward")


def forward_backward_check(map_: ParametricMap, k: float, x0: PhasePoint, n_steps: int,
                           reorth_every: int = 1) -> tuple[SpectrumResult, SpectrumResult]:
    """Forward and backward spectra of the same orbit.

    For an exact computation the backward spectrum is the negated, reversed
    forward spectrum; the residuals bound the discrepancy to expect at
    finite n.
    """
    fwd = lyapunov_qr(map_, k, x0, n_steps, reorth_every)
    bwd = backward_spectrum(map_, k, x0, n_steps, reorth_every)
    return fwd, bwd


def extended_spectrum(map_: ParametricMap, k: float, x0: PhasePoint, n_steps: int,
                      reorth_every: int = 1) -> SpectrumResult:
    """Spectrum of the auxiliary map (x, k) -> (f_k(x), k); d+1 exponents."""
    return _qr_spectrum(_extended_jacobians(map_, k, x0), map_.dim + 1,
                        n_steps, reorth_every, "forward")


def lyapunov_indicator(map_: ParametricMap, k: float, x0: PhasePoint,
                       n_steps: int = 300) -> FitResult:
    """Finite-horizon growth indicator: fit of log growth against step index.

    Pushes a frame with per-step QR and fits the cumulative log of the
    leading diagonal linearly in the step count.  The slope is the indicator.
    """
    if n_steps < 10:
        raise ValueError("n_steps must be >= 10")
    d = map_.dim
    V = np.eye(d)
    x = x0
    total = 0.0
    series = []
    for step in range(1, n_steps + 1):
        V = map_.jac_x(k, x) @ V
        x = map_.eval(k, x)
        V, diag = _qr_positive(V)
        if np.any(diag == 0.0):
            raise DegenerateFrame("QR diagonal underflow")
        total += math.log(diag[0])
        series.append((float(step), total))
    return fit_rate(series, model="exp")


def merged_multiplicities(result: SpectrumResult, tol: float = 1e-3
                          ) -> list[tuple[float, int]]:
    """Group exponents closer than ``tol`` for reporting; raw values stay as-is.

    Oseledets multiplicities are not observable at finite n, so this is a
    diagnostic convenience only.
    """
    groups: list[list[float]] = []
    for g in result.exponents:
        if groups and abs(g - groups[-1][0]) <= tol:
            groups[-1].append(g)
        else:
            groups.append([g])
    return [(float(np.mean(grp)), len(grp)) for grp in groups]
