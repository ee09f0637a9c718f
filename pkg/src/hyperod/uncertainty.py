"""Normal-matrix accumulation, extended-precision eigenstructure, ellipsoids.

The normal matrix of the orbit-determination problem is the sum over epochs
|n| <= N of D_n^T D_n, where the design block D_n is the state-transition
matrix (estimating initial conditions only), the extended block with the
parameter column appended (co-estimating the parameter), or the auxiliary
block with an extra bottom row (0 ... 0 1).  The terms grow exponentially on
hyperbolic orbits, so the accumulator holds a symmetric double-double matrix
together with a global power-of-two scale; every scale manipulation is a
power of two and therefore exact.

Shells are accumulated in increasing |n| and the two signs of a shell are
summed before entering the accumulator, so the two comparable-magnitude
terms meet each other first.  A shell falling below 1e-400 of the
accumulator scale is dropped and recorded: at double-double precision such
a term cannot affect the sum.

Eigenvalues come from cyclic Jacobi rotations carried entirely in
double-double; the covariance spectrum is obtained by negating and
reversing the logs, never by inverting the matrix.  The ~31-digit working
precision caps the resolvable eigenvalue ratio; decay tables flag
eigenvalues beyond the ceiling as untrusted rather than reporting noise.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import IO, Optional, Sequence

import numpy as np

from .ddouble import DoubleDouble, two_prod, two_sum
from .dynamics import ParametricMap, PhasePoint
from .tangent import TangentState, iter_shells

LN2 = math.log(2.0)
LN10 = math.log(10.0)

_DROP_EXP2 = -1329           # 10**-400: shell negligible, drop and record
_ACC_RENORM_EXP2 = 512       # keep accumulator max entry below 2**512
_TRUST_LOG_RATIO = 62.0 * LN10   # double-double condition ceiling for trusted flags
_RANK_DEFICIENT_LOG = 60.0 * LN10


class JacobiDidNotConverge(RuntimeError):
    """Cyclic Jacobi failed to reach the off-diagonal tolerance in 60 sweeps."""


class NotPositiveSemidefinite(RuntimeError):
    """An accumulator eigenvalue is negative beyond tolerance (accumulation bug)."""


class RankDeficientMatrix(RuntimeError):
    """The normal matrix is singular at working precision; no covariance exists."""


class Mode(enum.Enum):
    """Which design block enters the normal matrix."""

    CASE_A = "case_a"        # initial conditions only: D = F^n, d x d
    CASE_B = "case_b"        # parameter co-estimated: D = [F^n | dk^n]
    AUXILIARY_G = "aux_g"    # extended map: bottom row (0 ... 0 1) appended

    def design_dim(self, d: int) -> int:
        return d if self is Mode.CASE_A else d + 1


def _dot_dd(u: np.ndarray, v: np.ndarray) -> DoubleDouble:
    """Exact-product compensated dot product of two float vectors."""
    s = 0.0
    c = 0.0
    for a, b in zip(u, v):
        p, e = two_prod(float(a), float(b))
        s, e2 = two_sum(s, p)
        c += e + e2
    return DoubleDouble(s, c)


class SymmetricAccumulator:
    """Symmetric double-double normal matrix with a power-of-two scale.

    Only the upper triangle is stored, so the matrix is symmetric to the
    last bit by construction.  ``N`` is the index of the last completed
    shell (-1 when empty; shell 0 is the single n = 0 epoch).  Single
    writer; copy before sharing.
    """

    def __init__(self, dim: int, mode: Mode):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = dim
        self.mode = mode
        self.entries: list[DoubleDouble] = [DoubleDouble.ZERO] * (dim * (dim + 1) // 2)
        self.scale2 = 0
        self.N = -1
        self.truncated: list[int] = []

    @classmethod
    def for_map(cls, map_: ParametricMap, mode: Mode) -> "SymmetricAccumulator":
        return cls(mode.design_dim(map_.dim), mode)

    @classmethod
    def from_matrix(cls, M: Sequence[Sequence[float]], mode: Mode = Mode.CASE_A,
                    scale2: int = 0) -> "SymmetricAccumulator":
        """Wrap an explicit symmetric matrix (tests, standalone eigensolves)."""
        dim = len(M)
        acc = cls(dim, mode)
        for i in range(dim):
            for j in range(i, dim):
                if M[i][j] != M[j][i]:
                    raise ValueError("matrix must be symmetric")
                acc.entries[acc._idx(i, j)] = DoubleDouble(float(M[i][j]))
        acc.scale2 = scale2
        acc.N = 0
        return acc

    def _idx(self, i: int, j: int) -> int:
        if i > j:
            i, j = j, i
        return i * self.dim - i * (i - 1) // 2 + (j - i)

    @property
    def logscale(self) -> float:
        return self.scale2 * LN2

    def entry(self, i: int, j: int) -> DoubleDouble:
        """Scaled entry; the true value is 2**scale2 times this."""
        return self.entries[self._idx(i, j)]

    def entry_fraction(self, i: int, j: int) -> Fraction:
        """Exact rational value of the true (unscaled) entry."""
        return self.entries[self._idx(i, j)].to_fraction() * Fraction(2) ** self.scale2

    def matrix_dd(self) -> list[list[DoubleDouble]]:
        return [[self.entry(i, j) for j in range(self.dim)] for i in range(self.dim)]

    def copy(self) -> "SymmetricAccumulator":
        out = SymmetricAccumulator(self.dim, self.mode)
        out.entries = list(self.entries)
        out.scale2 = self.scale2
        out.N = self.N
        out.truncated = list(self.truncated)
        return out

    def _renormalize(self) -> None:
        amax = max(abs(e.hi) for e in self.entries)
        if amax == 0.0:
            return
        ex = math.frexp(amax)[1]
        if ex > _ACC_RENORM_EXP2:
            self.entries = [e.ldexp(-ex) for e in self.entries]
            self.scale2 += ex


def _state_gram(s: TangentState, mode: Mode, dim: int
                ) -> tuple[list[DoubleDouble], int]:
    """Upper triangle of D^T D for one tangent state, with a scale exponent.

    Entries are normalised so the returned scale2 makes 2**scale2 * entry
    the true value; blocks of differing magnitude (state vs parameter
    columns) are aligned exactly by powers of two.
    """
    d = s.x.dim
    amax = float(np.max(np.abs(s.F)))
    eF = math.frexp(amax)[1] if amax > 0.0 else 0
    Fn = np.ldexp(s.F, -eF)
    aF = s.scale2_F + eF

    has_dk = s.scale2_dk is not None
    if has_dk:
        dmax = float(np.max(np.abs(s.dk)))
        eD = math.frexp(dmax)[1] if dmax > 0.0 else 0
        dkn = np.ldexp(s.dk, -eD)
        aD = s.scale2_dk + eD

    # block scales of the Gram pieces
    scales = [2 * aF]
    if mode is not Mode.CASE_A and has_dk:
        scales += [aF + aD, 2 * aD]
    if mode is Mode.AUXILIARY_G:
        scales.append(0)  # the appended unit bottom row contributes 1 to the corner
    t2 = max(scales)

    entries: list[DoubleDouble] = []
    for i in range(dim):
        for j in range(i, dim):
            if i < d and j < d:
                g = _dot_dd(Fn[:, i], Fn[:, j]).ldexp(2 * aF - t2)
            elif i < d:  # j == d: cross block
                g = _dot_dd(Fn[:, i], dkn).ldexp(aF + aD - t2) if has_dk else DoubleDouble.ZERO
            else:        # corner
                g = _dot_dd(dkn, dkn).ldexp(2 * aD - t2) if has_dk else DoubleDouble.ZERO
                if mode is Mode.AUXILIARY_G:
                    g = g + DoubleDouble.ONE.ldexp(-t2)
            entries.append(g)
    return entries, t2


def _add_terms(a: list[DoubleDouble], a2: int, b: list[DoubleDouble], b2: int
               ) -> tuple[list[DoubleDouble], int]:
    t2 = max(a2, b2)
    return [x.ldexp(a2 - t2) + y.ldexp(b2 - t2) for x, y in zip(a, b)], t2


def accumulate_shell(acc: SymmetricAccumulator, s_plus: TangentState,
                     s_minus: TangentState) -> SymmetricAccumulator:
    """Add shell {+n, -n} to the accumulator; shell 0 passes the n=0 state twice.

    The two signed terms are summed first (comparable magnitudes), then
    aligned to the accumulator scale.  Returns the mutated accumulator.
    """
    n = acc.N + 1
    if n == 0:
        if s_plus.n != 0 or s_minus.n != 0:
            raise ValueError("first shell must be the n = 0 state")
        term, t2 = _state_gram(s_plus, acc.mode, acc.dim)
    else:
        if s_plus.n != n or s_minus.n != -n:
            raise ValueError(
                f"expected shell {{+{n}, -{n}}}, got n = {s_plus.n}, {s_minus.n}")
        tp, tp2 = _state_gram(s_plus, acc.mode, acc.dim)
        tm, tm2 = _state_gram(s_minus, acc.mode, acc.dim)
        term, t2 = _add_terms(tp, tp2, tm, tm2)

    if acc.N < 0:
        acc.entries = term
        acc.scale2 = t2
    else:
        delta2 = t2 - acc.scale2
        if delta2 < _DROP_EXP2:
            acc.truncated.append(n)
            acc.N = n
            return acc
        if delta2 > _ACC_RENORM_EXP2:
            # incoming term dominates: move the accumulator to the term scale
            acc.entries = [e.ldexp(-delta2) for e in acc.entries]
            acc.scale2 = t2
            delta2 = 0
        acc.entries = [e + t.ldexp(delta2) for e, t in zip(acc.entries, term)]
    acc._renormalize()
    acc.N = n
    return acc


def accumulate_orbit(map_: ParametricMap, k: float, x0: PhasePoint, N: int,
                     mode: Mode) -> SymmetricAccumulator:
    """Build the normal matrix for shells 0..N from a single propagation."""
    acc = SymmetricAccumulator.for_map(map_, mode)
    for plus, minus in iter_shells(map_, k, x0, N):
        accumulate_shell(acc, plus, minus)
    return acc


# ---------------------------------------------------------------------------
# double-double Jacobi eigensolver
# ---------------------------------------------------------------------------

_JACOBI_TOL = 1e-30
_JACOBI_MAX_SWEEPS = 60


def jacobi_symmetric(M: list[list[DoubleDouble]], max_sweeps: int = _JACOBI_MAX_SWEEPS,
                     tol: float = _JACOBI_TOL
                     ) -> tuple[list[DoubleDouble], list[list[DoubleDouble]]]:
    """Eigen-decomposition of a symmetric double-double matrix.

    Cyclic-by-row Jacobi rotations until max |off-diagonal| / max |diagonal|
    drops below ``tol``.  Returns (eigenvalues, eigenvector columns), both in
    double-double and unsorted; vectors[i][j] is component i of eigenvector j.
    """
    dim = len(M)
    A = [[M[i][j] for j in range(dim)] for i in range(dim)]
    V = [[DoubleDouble.ONE if i == j else DoubleDouble.ZERO for j in range(dim)]
         for i in range(dim)]
    if dim == 1:
        return [A[0][0]], V

    one = DoubleDouble.ONE
    for _ in range(max_sweeps):
        off = max(abs(A[p][q].hi) for p in range(dim) for q in range(p + 1, dim))
        diag = max(abs(A[p][p].hi) for p in range(dim))
        if diag == 0.0 or off <= tol * diag:
            return [A[i][i] for i in range(dim)], V
        for p in range(dim):
            for q in range(p + 1, dim):
                apq = A[p][q]
                if abs(apq.hi) <= tol * diag:
                    continue
                theta = (A[q][q] - A[p][p]) / (apq * 2.0)
                # t = sign(theta) / (|theta| + sqrt(theta^2 + 1))
                t = one / (theta.abs() + (theta * theta + one).sqrt())
                if theta.hi < 0.0:
                    t = -t
                c = one / (t * t + one).sqrt()
                s = t * c
                for i in range(dim):
                    aip, aiq = A[i][p], A[i][q]
                    A[i][p] = aip * c - aiq * s
                    A[i][q] = aip * s + aiq * c
                for i in range(dim):
                    aip, aiq = A[p][i], A[q][i]
                    A[p][i] = aip * c - aiq * s
                    A[q][i] = aip * s + aiq * c
                # restore exact symmetry of the rotated pair
                A[p][q] = A[q][p] = DoubleDouble(0.0)
                for i in range(dim):
                    vip, viq = V[i][p], V[i][q]
                    V[i][p] = vip * c - viq * s
                    V[i][q] = vip * s + viq * c
    off = max(abs(A[p][q].hi) for p in range(dim) for q in range(p + 1, dim))
    diag = max(abs(A[p][p].hi) for p in range(dim))
    if diag != 0.0 and off <= tol * diag:
        return [A[i][i] for i in range(dim)], V
    raise JacobiDidNotConverge(
        f"off-diagonal {off:g} vs diagonal {diag:g} after {max_sweeps} sweeps")


@dataclass(frozen=True)
class EigenReport:
    """Eigenstructure of a symmetric positive matrix held in log scale.

    ``log_eigenvalues`` are natural logs of the true eigenvalues (the
    accumulator scale is already included), ascending; a zero eigenvalue is
    reported as -inf.  ``eigenvectors`` are orthonormal double-double
    columns matching that order; ``values_dd`` with ``scale2`` give the
    scaled eigenvalues for exact downstream checks.
    """

    log_eigenvalues: tuple[float, ...]
    eigenvectors: tuple[tuple[DoubleDouble, ...], ...]   # [j][i]: component i of vector j
    condition_estimate: float
    values_dd: tuple[DoubleDouble, ...]
    scale2: int

    @property
    def dim(self) -> int:
        return len(self.log_eigenvalues)

    def eigenvectors_array(self) -> np.ndarray:
        """Eigenvectors as float columns."""
        cols = [[c.to_float() for c in col] for col in self.eigenvectors]
        return np.array(cols).T

    def eigenvalue_fraction(self, i: int) -> Fraction:
        """Exact rational value of the i-th (ascending) true eigenvalue."""
        return self.values_dd[i].to_fraction() * Fraction(2) ** self.scale2


def eigen(acc: SymmetricAccumulator) -> EigenReport:
    """Eigen report of the accumulated normal matrix."""
    if acc.N < 0:
        raise ValueError("accumulator is empty")
    values, vectors = jacobi_symmetric(acc.matrix_dd())
    dim = acc.dim
    diag_max = max(abs(v.hi) for v in values)
    cleaned: list[DoubleDouble] = []
    for v in values:
        if v.hi < 0.0:
            if diag_max > 0.0 and v.hi < -1e-28 * diag_max:
                raise NotPositiveSemidefinite(
                    f"eigenvalue {v.hi:g} of a Gram accumulation is negative")
            v = DoubleDouble.ZERO
        cleaned.append(v)
    logs = [v.log() + acc.scale2 * LN2 if v.hi > 0.0 else -math.inf for v in cleaned]
    order = sorted(range(dim), key=lambda i: logs[i])
    logs_sorted = tuple(logs[i] for i in order)
    vecs_sorted = tuple(tuple(vectors[i][j] for i in range(dim)) for j in order)
    vals_sorted = tuple(cleaned[i] for i in order)
    spread = logs_sorted[-1] - logs_sorted[0]
    cond = math.inf if math.isinf(spread) else math.exp(min(spread, 700.0))
    return EigenReport(logs_sorted, vecs_sorted, cond, vals_sorted, acc.scale2)


def covariance_eigen(acc: SymmetricAccumulator) -> EigenReport:
    """Eigen report of the covariance matrix (the inverse normal matrix).

    The logs are the negated, reversed logs of the normal spectrum and the
    eigenvectors are reordered to match; nothing is inverted numerically.
    Raises ``RankDeficientMatrix`` when the smallest eigenvalue is zero or
    more than 60 decimal orders below the largest.
    """
    rep = eigen(acc)
    if not math.isfinite(rep.log_eigenvalues[0]) or \
            rep.log_eigenvalues[-1] - rep.log_eigenvalues[0] > _RANK_DEFICIENT_LOG:
        raise RankDeficientMatrix(
            "normal matrix is rank-deficient at working precision")
    dim = rep.dim
    logs = tuple(-rep.log_eigenvalues[dim - 1 - i] for i in range(dim))
    vecs = tuple(rep.eigenvectors[dim - 1 - i] for i in range(dim))
    vals = tuple(DoubleDouble.ONE / rep.values_dd[dim - 1 - i] for i in range(dim))
    return EigenReport(logs, vecs, rep.condition_estimate, vals, -rep.scale2)


def _log_sum_exp(terms: Sequence[float]) -> float:
    finite = [t for t in terms if t != -math.inf]
    if not finite:
        return -math.inf
    m = max(finite)
    return m + math.log(sum(math.exp(t - m) for t in finite))


@dataclass(frozen=True)
class ConfidenceEllipsoid:
    """Quadratic-form confidence region around a nominal solution.

    Semi-axis j has log-length ``log(sigma) + log_eigenvalue_j / 2`` along
    ``directions[:, j]``; marginal sigmas are sigma * sqrt(diag of the
    covariance), computed from the eigenstructure in log-safe form.  All
    lengths are stored as natural logs to survive the exponential decay.
    """

    center: np.ndarray
    sigma: float
    log_semi_axes: tuple[float, ...]
    directions: np.ndarray
    log_marginal_sigmas: tuple[float, ...]
    log_covariance_eigenvalues: tuple[float, ...]
    periods: Optional[tuple] = None

    def semi_axes(self) -> np.ndarray:
        return np.exp(self.log_semi_axes)

    def marginal_sigmas(self) -> np.ndarray:
        return np.exp(self.log_marginal_sigmas)

    def mahalanobis_log(self, point: Sequence[float]) -> float:
        """log of (point - center)^T C (point - center), C the normal matrix."""
        delta = np.asarray(point, dtype=float) - self.center
        if self.periods is not None:
            from .dynamics import wrap_nearest_delta
            delta = wrap_nearest_delta(delta, self.periods)
        terms = []
        for j, lam_log in enumerate(self.log_covariance_eigenvalues):
            proj = float(self.directions[:, j] @ delta)
            if proj != 0.0:
                terms.append(2.0 * math.log(abs(proj)) - lam_log)
        return _log_sum_exp(terms)

    def contains(self, point: Sequence[float]) -> bool:
        q = self.mahalanobis_log(point)
        return q <= 2.0 * math.log(self.sigma)


def ellipsoid(report: EigenReport, center: Sequence[float], sigma: float = 1.0,
              periods: Optional[tuple] = None) -> ConfidenceEllipsoid:
    """Confidence ellipsoid from a covariance eigen report."""
    if sigma <= 0.0:
        raise ValueError("sigma must be positive")
    log_sigma = math.log(sigma)
    logs = report.log_eigenvalues
    axes = tuple(log_sigma + 0.5 * l for l in logs)
    dirs = report.eigenvectors_array()
    dim = report.dim
    marg = []
    for j in range(dim):
        terms = []
        for i in range(dim):
            v = report.eigenvectors[i][j].to_float()
            if v != 0.0:
                terms.append(logs[i] + 2.0 * math.log(abs(v)))
        marg.append(log_sigma + 0.5 * _log_sum_exp(terms))
    return ConfidenceEllipsoid(np.asarray(center, dtype=float), sigma, axes, dirs,
                               tuple(marg), logs, periods)


# ---------------------------------------------------------------------------
# decay of the covariance spectrum with the number of observations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DecayPoint:
    """Covariance spectrum at shell N.

    ``log_cov_eigenvalues`` ascending; ``trusted[i]`` is False when the
    matching normal-matrix eigenvalue sits more than the double-double
    condition ceiling below the largest one.  ``log_delta_min`` is the
    smallest normal-matrix log-eigenvalue (reported for the co-estimation
    mode).  ``log_marginal_sigmas`` are 0.5 * log of the covariance diagonal.
    """

    N: int
    mode: Mode
    log_cov_eigenvalues: tuple[float, ...]
    trusted: tuple[bool, ...]
    log_delta_min: Optional[float]
    log_marginal_sigmas: tuple[float, ...]


def decay_series(map_: ParametricMap, k: float, x0: PhasePoint, N_max: int,
                 mode: Mode, stride: int = 1,
                 trust_log_ratio: float = _TRUST_LOG_RATIO) -> list[DecayPoint]:
    """Covariance log-eigenvalues versus N from a single two-sided propagation.

    Emits a row at every stride-th shell (and at N_max).  For the
    co-estimation modes the first shell is singular and is skipped in the
    output.
    """
    if N_max < 2:
        raise ValueError("N_max must be >= 2")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    acc = SymmetricAccumulator.for_map(map_, mode)
    rows: list[DecayPoint] = []
    for plus, minus in iter_shells(map_, k, x0, N_max):
        accumulate_shell(acc, plus, minus)
        N = acc.N
        if N % stride and N != N_max:
            continue
        if mode is not Mode.CASE_A and N < 1:
            continue  # singular by construction at shell 0
        rep = eigen(acc)
        dim = rep.dim
        log_delta_max = rep.log_eigenvalues[-1]
        cov_logs = tuple(-rep.log_eigenvalues[dim - 1 - i] for i in range(dim))
        trusted = tuple(
            log_delta_max - rep.log_eigenvalues[dim - 1 - i] <= trust_log_ratio
            for i in range(dim))
        marg = []
        for j in range(dim):
            terms = []
            for i in range(dim):
                v = rep.eigenvectors[dim - 1 - i][j].to_float()
                if v != 0.0:
                    terms.append(cov_logs[i] + 2.0 * math.log(abs(v)))
            marg.append(0.5 * _log_sum_exp(terms))
        rows.append(DecayPoint(
            N, mode, cov_logs, trusted,
            rep.log_eigenvalues[0] if mode is not Mode.CASE_A else None,
            tuple(marg)))
    return rows


def write_decay_csv(rows: Sequence[DecayPoint], stream: IO[str]) -> None:
    """CSV schema: N, mode, i, log10_lambda_i, trusted (0/1)."""
    stream.write("N,mode,i,log10_lambda_i,trusted\n")
    for row in rows:
        for i, (l, ok) in enumerate(zip(row.log_cov_eigenvalues, row.trusted), start=1):
            stream.write(f"{row.N},{row.mode.value},{i},{l / LN10!r},{int(ok)}\n")
