"""Parametric maps on tori and the two built-in families.

A parametric map is a diffeomorphism f_k of a d-dimensional torus (or of
R^d) depending differentiably on a scalar parameter k.  Every map supplies
four operations: a forward step, an inverse step, the Jacobian with respect
to the state, and the derivative with respect to the parameter.  No
automatic differentiation is provided; user-defined maps must implement all
four.

Built-ins:
  * ``StandardMap`` -- the Chirikov standard map on the 2-torus of period 2*pi,
    x' = x + y', y' = y - k*sin(x).
  * ``AffineTorusMap`` -- x -> A x + k b (mod 1) with A an integer matrix of
    determinant +-1 and no eigenvalue of modulus one, so the map is a
    hyperbolic affine automorphism of the d-torus.

Torus representatives live in the fundamental domain [0, P_i); wrapping is
by floor division.  Map descriptors are immutable after construction and all
operations are pure, so instances are safe to share between threads.
"""

from __future__ import annotations

import abc
import json
import math
import warnings
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence, Union

import numpy as np

Periods = tuple[Union[float, None], ...]

TWO_PI = 2.0 * math.pi


def wrap_coords(coords: np.ndarray, periods: Periods) -> np.ndarray:
    """Wrap each periodic coordinate into its fundamental domain [0, P)."""
    out = np.array(coords, dtype=float)
    for i, p in enumerate(periods):
        if p is not None:
            out[i] -= p * math.floor(out[i] / p)
            if out[i] >= p:  # floor rounding can land exactly on P
                out[i] -= p
    return out


def wrap_nearest_delta(delta: np.ndarray, periods: Periods) -> np.ndarray:
    """Map each periodic component of a difference vector to (-P/2, P/2]."""
    out = np.array(delta, dtype=float)
    for i, p in enumerate(periods):
        if p is not None:
            out[i] -= p * math.ceil(out[i] / p - 0.5)
    return out


@dataclass(frozen=True)
class PhasePoint:
    """A point of the phase space, canonically wrapped.

    ``periods[i]`` is the period of coordinate i, or None for an unbounded
    coordinate.  Periodic coordinates are normalised to [0, P_i) at
    construction.
    """

    coords: np.ndarray
    periods: Periods

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=float)
        if coords.ndim != 1 or coords.size < 1:
            raise ValueError("coords must be a vector of dimension >= 1")
        if len(self.periods) != coords.size:
            raise ValueError(
                f"topology has {len(self.periods)} entries for {coords.size} coordinates"
            )
        for p in self.periods:
            if p is not None and not p > 0:
                raise ValueError("periods must be positive or None")
        object.__setattr__(self, "coords", wrap_coords(coords, self.periods))

    @property
    def dim(self) -> int:
        return self.coords.size


class ParametricMap(abc.ABC):
    """A diffeomorphism f_k with evaluable inverse and derivatives.

    Subclasses implement the four coordinate-level operations; this base
    class supplies the ``PhasePoint`` plumbing, dimension checks and a
    generic (numerical) inverse Jacobian.
    """

    dim: int
    periods: Periods

    def point(self, coords: Sequence[float]) -> PhasePoint:
        return PhasePoint(np.asarray(coords, dtype=float), self.periods)

    def _check(self, x: PhasePoint) -> np.ndarray:
        if x.dim != self.dim:
            raise ValueError(f"point has dimension {x.dim}, map has dimension {self.dim}")
        return x.coords

    # coordinate-level operations ------------------------------------------
    @abc.abstractmethod
    def _eval(self, k: float, c: np.ndarray) -> np.ndarray: ...

    @abc.abstractmethod
    def _inverse_eval(self, k: float, c: np.ndarray) -> np.ndarray: ...

    @abc.abstractmethod
    def _jac_x(self, k: float, c: np.ndarray) -> np.ndarray: ...

    @abc.abstractmethod
    def _jac_k(self, k: float, c: np.ndarray) -> np.ndarray: ...

    def _jac_x_inv(self, k: float, c: np.ndarray) -> np.ndarray:
        return np.linalg.inv(self._jac_x(k, c))

    # public operations ----------------------------------------------------
    def eval(self, k: float, x: PhasePoint) -> PhasePoint:
        """Return f_k(x), wrapped into the fundamental domain."""
        c = self._eval(k, self._check(x))
        return PhasePoint(c, self.periods)

    def inverse_eval(self, k: float, x: PhasePoint) -> PhasePoint:
        """Return f_k^{-1}(x), wrapped into the fundamental domain."""
        c = self._inverse_eval(k, self._check(x))
        return PhasePoint(c, self.periods)

    def jac_x(self, k: float, x: PhasePoint) -> np.ndarray:
        """Jacobian of f_k with respect to the state, at x."""
        return self._jac_x(k, self._check(x))

    def jac_x_inv(self, k: float, x: PhasePoint) -> np.ndarray:
        """Inverse of ``jac_x`` at x (analytic for the built-ins)."""
        return self._jac_x_inv(k, self._check(x))

    def jac_k(self, k: float, x: PhasePoint) -> np.ndarray:
        """Derivative of f_k with respect to the parameter, at x."""
        return self._jac_k(k, self._check(x))


class StandardMap(ParametricMap):
    """Chirikov standard map on the 2-torus of period 2*pi.

    x' = x + y',  y' = y - k*sin(x), both taken mod 2*pi.  The parameter k
    is supplied per call.  The map is area preserving: det jac_x = 1.
    """

    dim = 2
    periods: Periods = (TWO_PI, TWO_PI)

    def _eval(self, k, c):
        yb = c[1] - k * math.sin(c[0])
        return np.array([c[0] + yb, yb])

    def _inverse_eval(self, k, c):
        xo = c[0] - c[1]
        yo = c[1] + k * math.sin(xo)
        return np.array([xo, yo])

    def _jac_x(self, k, c):
        kc = k * math.cos(c[0])
        return np.array([[1.0 - kc, 1.0], [-kc, 1.0]])

    def _jac_x_inv(self, k, c):
        # adjugate; det jac_x = 1 identically
        kc = k * math.cos(c[0])
        return np.array([[1.0, -1.0], [kc, 1.0 - kc]])

    def _jac_k(self, k, c):
        s = math.sin(c[0])
        return np.array([-s, -s])

    def __repr__(self):
        return "StandardMap()"


def _exact_det(rows: list[list[int]]) -> int:
    """Determinant of an integer matrix, exactly (fraction-free Gauss)."""
    m = [[Fraction(v) for v in row] for row in rows]
    d = len(m)
    det = Fraction(1)
    for col in range(d):
        piv = next((r for r in range(col, d) if m[r][col] != 0), None)
        if piv is None:
            return 0
        if piv != col:
            m[col], m[piv] = m[piv], m[col]
            det = -det
        det *= m[col][col]
        inv = 1 / m[col][col]
        for r in range(col + 1, d):
            f = m[r][col] * inv
            for c in range(col, d):
                m[r][c] -= f * m[col][c]
    assert det.denominator == 1
    return int(det)


def _exact_int_inverse(rows: list[list[int]], det: int) -> list[list[int]]:
    """Inverse of an integer matrix with det = +-1, as exact integers."""
    d = len(rows)
    aug = [[Fraction(v) for v in row] + [Fraction(int(i == r)) for i in range(d)]
           for r, row in enumerate(rows)]
    for col in range(d):
        piv = next(r for r in range(col, d) if aug[r][col] != 0)
        aug[col], aug[piv] = aug[piv], aug[col]
        inv = 1 / aug[col][col]
        aug[col] = [v * inv for v in aug[col]]
        for r in range(d):
            if r != col and aug[r][col] != 0:
                f = aug[r][col]
                aug[r] = [v - f * w for v, w in zip(aug[r], aug[col])]
    out = [[aug[r][d + c] for c in range(d)] for r in range(d)]
    assert all(v.denominator == 1 for row in out for v in row), det
    return [[int(v) for v in row] for row in out]


class AffineTorusMap(ParametricMap):
    """Hyperbolic affine automorphism x -> A x + k b of the d-torus R^d/Z^d.

    A must be an integer matrix with det A = +-1 and no eigenvalue of
    modulus one; (1 - A) is then invertible.  b is a vector of rationals so
    backward orbits and oracles can be carried exactly.  The inverse step
    uses the exact integer inverse of A (the adjugate), so it introduces no
    inversion error.
    """

    def __init__(self, A: Sequence[Sequence[int]], b: Sequence[Union[int, str, float, Fraction]] = None):
        rows = [list(r) for r in A]
        d = len(rows)
        if d < 1 or any(len(r) != d for r in rows):
            raise ValueError("A must be a square matrix")
        for r in rows:
            for v in r:
                if int(v) != v:
                    raise ValueError("A must have integer entries")
        self.A_int = [[int(v) for v in r] for r in rows]
        det = _exact_det(self.A_int)
        if det not in (1, -1):
            raise ValueError(f"A must have determinant +-1, got {det}")
        eigvals = np.linalg.eigvals(np.array(self.A_int, dtype=float))
        logmods = np.log(np.abs(eigvals))
        if np.any(np.abs(logmods) <= 1e-9):
            raise ValueError("A has an eigenvalue of modulus one; map is not hyperbolic")
        if det == -1:
            warnings.warn("A has determinant -1; orientation is reversed", stacklevel=2)
        self.det = det
        self.A_inv_int = _exact_int_inverse(self.A_int, det)
        if b is None:
            b = [0] * d
        if len(b) != d:
            raise ValueError("b must have the same dimension as A")
        self.b_frac = tuple(Fraction(v) for v in b)
        self.dim = d
        self.periods = (1.0,) * d
        self.symmetric = all(
            self.A_int[i][j] == self.A_int[j][i] for i in range(d) for j in range(d)
        )
        self._A = np.array(self.A_int, dtype=float)
        self._A_inv = np.array(self.A_inv_int, dtype=float)
        self._b = np.array([float(v) for v in self.b_frac])

    def _eval(self, k, c):
        return self._A @ c + k * self._b

    def _inverse_eval(self, k, c):
        return self._A_inv @ (c - k * self._b)

    def _jac_x(self, k, c):
        return self._A.copy()

    def _jac_x_inv(self, k, c):
        return self._A_inv.copy()

    def _jac_k(self, k, c):
        return self._b.copy()

    def __repr__(self):
        return f"AffineTorusMap(A={self.A_int}, b={[str(v) for v in self.b_frac]})"


def map_from_json(spec: Union[str, dict]) -> ParametricMap:
    """Construct a map from a JSON object.

    ``{"type": "standard"}`` or
    ``{"type": "affine", "A": [[2,1],[1,1]], "b": ["1", "0"]}``;
    entries of b may be integers or rationals written "p/q".
    """
    obj = json.loads(spec) if isinstance(spec, str) else spec
    if not isinstance(obj, dict) or "type" not in obj:
        raise ValueError("map spec must be an object with a 'type' field")
    kind = obj["type"]
    if kind == "standard":
        return StandardMap()
    if kind == "affine":
        if "A" not in obj:
            raise ValueError("affine map spec requires 'A'")
        b = obj.get("b")
        return AffineTorusMap(obj["A"], b)
    raise ValueError(f"unknown map type {kind!r}")
