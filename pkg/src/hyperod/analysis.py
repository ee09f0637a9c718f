"""Exact oracles for affine torus maps and decay-rate fitting.

Affine maps x -> A x + k b admit closed-form orbits: with w = (1-A)^{-1} b,
the n-th iterate is A^n x + k (1 - A^n) w and its parameter derivative is
(1 - A^n) w.  Everything in this module that touches those formulas runs in
exact rational arithmetic (``fractions.Fraction``), so the results serve as
independent oracles for the floating propagation and accumulation paths.

Certified eigenvalue bounds come from exact-sign bisection of the
characteristic polynomial (cofactor expansion over the rationals, Sturm
chain for root counting); eigenvalues of integer matrices are algebraic,
not rational, so honest exact output is an isolating interval.

The oracle scope is deliberately limited to affine maps: only there do
closed forms exist.  d > 4 exact eigen-isolation is out of scope.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence, Union

Rational = Union[int, str, Fraction]
FracMatrix = list[list[Fraction]]
FracVector = list[Fraction]

_EXACT_N_GUARD = 60  # entries grow like |delta|^(2N); beyond this the exact
                     # path costs much and tells nothing the floats cannot


# ---------------------------------------------------------------------------
# rational linear algebra (dims are tiny; clarity over cleverness)
# ---------------------------------------------------------------------------

def fr(v: Rational) -> Fraction:
    return v if isinstance(v, Fraction) else Fraction(v)


def frmat(rows: Sequence[Sequence[Rational]]) -> FracMatrix:
    return [[fr(v) for v in row] for row in rows]


def frvec(vec: Sequence[Rational]) -> FracVector:
    return [fr(v) for v in vec]


def mat_identity(d: int) -> FracMatrix:
    return [[Fraction(int(i == j)) for j in range(d)] for i in range(d)]


def mat_mul(A: FracMatrix, B: FracMatrix) -> FracMatrix:
    d, m, n = len(A), len(B), len(B[0])
    return [[sum(A[i][l] * B[l][j] for l in range(m)) for j in range(n)] for i in range(d)]


def mat_vec(A: FracMatrix, v: FracVector) -> FracVector:
    return [sum(A[i][j] * v[j] for j in range(len(v))) for i in range(len(A))]


def mat_sub(A: FracMatrix, B: FracMatrix) -> FracMatrix:
    return [[a - b for a, b in zip(ra, rb)] for ra, rb in zip(A, B)]


def mat_transpose(A: FracMatrix) -> FracMatrix:
    return [list(col) for col in zip(*A)]


def mat_inv(A: FracMatrix) -> FracMatrix:
    d = len(A)
    aug = [list(row) + [Fraction(int(i == r)) for i in range(d)] for r, row in enumerate(A)]
    for col in range(d):
        piv = next((r for r in range(col, d) if aug[r][col] != 0), None)
        if piv is None:
            raise ZeroDivisionError("matrix is singular over the rationals")
        aug[col], aug[piv] = aug[piv], aug[col]
        inv = 1 / aug[col][col]
        aug[col] = [v * inv for v in aug[col]]
        for r in range(d):
            if r != col and aug[r][col] != 0:
                f = aug[r][col]
                aug[r] = [v - f * w for v, w in zip(aug[r], aug[col])]
    return [row[d:] for row in aug]


def mat_pow(A: FracMatrix, n: int) -> FracMatrix:
    if n < 0:
        return mat_pow(mat_inv(A), -n)
    result = mat_identity(len(A))
    base = [list(r) for r in A]
    e = n
    while e:
        if e & 1:
            result = mat_mul(result, base)
        base = mat_mul(base, base)
        e >>= 1
    return result


# ---------------------------------------------------------------------------
# closed-form orbits and the sharp case-A / case-B constants
# ---------------------------------------------------------------------------

def cat_iterate_exact(A: Sequence[Sequence[int]], b: Sequence[Rational], k: Rational,
                      x: Sequence[Rational], n: int
                      ) -> tuple[FracVector, FracMatrix, FracVector]:
    """Exact n-th iterate of the affine map: lift point, A^n, parameter column.

    Returns (A^n x + k (1-A^n) w,  A^n,  (1-A^n) w) with w = (1-A)^{-1} b.
    The point is the lift in R^d, not wrapped.
    """
    Af = frmat(A)
    d = len(Af)
    I = mat_identity(d)
    try:
        w = mat_vec(mat_inv(mat_sub(I, Af)), frvec(b))
    except ZeroDivisionError:
        raise ZeroDivisionError("(1 - A) is singular; the closed form does not apply")
    An = mat_pow(Af, n)
    dk = mat_vec(mat_sub(I, An), w)
    kq = fr(k)
    point = [sum(An[i][j] * fr(x[j]) for j in range(d)) + kq * dk[i] for i in range(d)]
    return point, An, dk


def _abs_log_eigenvalues(A: Sequence[Sequence[int]]) -> list[float]:
    """|log| of eigenvalue moduli of a symmetric integer matrix, descending."""
    d = len(A)
    if any(A[i][j] != A[j][i] for i in range(d) for j in range(d)):
        raise ValueError("A must be symmetric")
    if d == 2:
        t = float(A[0][0] + A[1][1])
        det = float(A[0][0] * A[1][1] - A[0][1] * A[1][0])
        disc = t * t - 4.0 * det
        if disc < 0:
            raise ValueError("symmetric matrix with complex eigenvalues?")
        r = math.sqrt(disc)
        eig = [(t + r) / 2.0, (t - r) / 2.0]
    else:
        from .uncertainty import jacobi_symmetric
        from .ddouble import DoubleDouble
        M = [[DoubleDouble(float(A[i][j])) for j in range(d)] for i in range(d)]
        values, _ = jacobi_symmetric(M)
        eig = [v.to_float() for v in values]
    gammas = []
    for e in eig:
        if abs(e) == 0.0 or abs(math.log(abs(e))) <= 1e-9:
            raise ValueError("A has an eigenvalue of modulus one; not hyperbolic")
        gammas.append(abs(math.log(abs(e))))
    return sorted(gammas, reverse=True)


def cat_case_a_limits(A: Sequence[Sequence[int]]) -> list[tuple[float, float]]:
    """Exact decay limits for case A on a symmetric hyperbolic A.

    Returns, ordered by ascending covariance eigenvalue index, pairs
    (|gamma_i|, limit_i) with limit_i = 1 - exp(-2 |gamma_i|): the limit of
    the ratio of the i-th covariance eigenvalue to exp(-2 |gamma_i| N).
    The smallest covariance eigenvalue pairs with the largest |gamma|.
    """
    gammas = _abs_log_eigenvalues(A)
    return [(g, 1.0 - math.exp(-2.0 * g)) for g in gammas]


def cat_case_a_ratio(A: Sequence[Sequence[int]], N: int) -> list[float]:
    """Ratios of covariance eigenvalues to their limiting exponentials at shell N.

    The normal-matrix eigenvalues are two-sided geometric sums
    S_i(N) = sum_{|n|<=N} |delta_i|^{2n}; factoring out the dominant term
    analytically gives ratio_i = (1 - rho_i) / (1 - rho_i^{2N+1}) with
    rho_i = exp(-2 |gamma_i|), evaluated without overflow at any N.
    Ordering matches ``cat_case_a_limits``.
    """
    if N < 0:
        raise ValueError("N must be >= 0")
    out = []
    for g, _ in cat_case_a_limits(A):
        rho = math.exp(-2.0 * g)
        out.append((1.0 - rho) / (1.0 - rho ** (2 * N + 1)))
    return out


@dataclass(frozen=True)
class CaseBBound:
    """Certificate data for the case-B covariance lower bound.

    The vector v0 = (w, 1) is fixed by every extended Jacobian G^n, so the
    Rayleigh quotient of the case-B normal matrix at v0 equals
    (2N+1) |w|^2 / (|w|^2 + 1), bounding the smallest eigenvalue above and
    hence the largest covariance eigenvalue below by
    prefactor / (2N+1) with prefactor = (|w|^2 + 1)/|w|^2.
    """

    w: tuple[Fraction, ...]
    w_norm_sq: Fraction
    prefactor: Fraction
    fixed_vector: tuple[Fraction, ...]      # (w, 1)
    fixed_vector_verified: bool             # G^n v0 == v0 checked exactly, |n| <= 20

    def covariance_lower_bound(self, N: int) -> Fraction:
        if N < 1:
            raise ValueError("the bound holds for N >= 1")
        return self.prefactor / (2 * N + 1)

    def rayleigh_value(self, N: int) -> Fraction:
        """Exact value of v0^T C~_N v0: (2N+1) |w|^2."""
        return (2 * N + 1) * self.w_norm_sq


def cat_case_b_bound(A: Sequence[Sequence[int]], b: Sequence[Rational]) -> CaseBBound:
    """Exact case-B bound data for an affine map; requires b != 0."""
    bv = frvec(b)
    if all(v == 0 for v in bv):
        raise ValueError("b must be nonzero (w = 0 degenerates the bound)")
    Af = frmat(A)
    d = len(Af)
    I = mat_identity(d)
    w = mat_vec(mat_inv(mat_sub(I, Af)), bv)
    wsq = sum(v * v for v in w)
    v0 = list(w) + [Fraction(1)]
    verified = True
    for n in range(-20, 21):
        An = mat_pow(Af, n)
        dkn = mat_vec(mat_sub(I, An), w)
        image = [sum(An[i][j] * w[j] for j in range(d)) + dkn[i] for i in range(d)] + [Fraction(1)]
        if image != v0:
            verified = False
            break
    return CaseBBound(tuple(w), wsq, (wsq + 1) / wsq, tuple(v0), verified)


def exact_normal_matrix(A: Sequence[Sequence[int]], b: Sequence[Rational], k: Rational,
                        N: int, mode: str) -> FracMatrix:
    """Exact normal matrix of the affine map over shells |n| <= N.

    ``mode`` is 'case_a' (design A^n, d x d), 'case_b' (design [A^n | dk_n],
    (d+1) x (d+1)) or 'aux_g' (extended design with bottom row (0..0 1)).
    The result does not depend on k or x for affine maps; k is accepted for
    interface symmetry.
    """
    if N > _EXACT_N_GUARD:
        raise ValueError(f"N exceeds the exact-computation guard ({_EXACT_N_GUARD})")
    if N < 0:
        raise ValueError("N must be >= 0")
    mode = str(getattr(mode, "value", mode))
    if mode not in ("case_a", "case_b", "aux_g"):
        raise ValueError(f"unknown mode {mode!r}")
    Af = frmat(A)
    d = len(Af)
    I = mat_identity(d)
    need_w = mode in ("case_b", "aux_g")
    w = mat_vec(mat_inv(mat_sub(I, Af)), frvec(b)) if need_w else None
    dim = d if mode == "case_a" else d + 1
    C = [[Fraction(0)] * dim for _ in range(dim)]
    for n in range(-N, N + 1):
        An = mat_pow(Af, n)
        if mode == "case_a":
            D = An
        else:
            dkn = mat_vec(mat_sub(I, An), w)
            D = [An[i] + [dkn[i]] for i in range(d)]
            if mode == "aux_g":
                D = D + [[Fraction(0)] * d + [Fraction(1)]]
        for i in range(dim):
            for j in range(i, dim):
                v = sum(row[i] * row[j] for row in D)
                C[i][j] += v
    for i in range(dim):
        for j in range(i):
            C[i][j] = C[j][i]
    return C


# ---------------------------------------------------------------------------
# certified smallest eigenvalue via Sturm bisection
# ---------------------------------------------------------------------------

def _char_poly(M: FracMatrix) -> list[Fraction]:
    """Coefficients of det(t*I - M), ascending powers, by cofactor expansion."""
    d = len(M)
    # polynomial entries of (t*I - M) as coefficient lists
    def pconst(c: Fraction) -> list[Fraction]:
        return [c]

    def padd(p, q):
        n = max(len(p), len(q))
        return [ (p[i] if i < len(p) else Fraction(0)) + (q[i] if i < len(q) else Fraction(0)) for i in range(n) ]

    def pmul(p, q):
        out = [Fraction(0)] * (len(p) + len(q) - 1)
        for i, a in enumerate(p):
            if a == 0:
                continue
            for j, c in enumerate(q):
                out[i + j] += a * c
        return out

    def pneg(p):
        return [-a for a in p]

    entries = [[([-M[i][j], Fraction(1)] if i == j else [-M[i][j]]) for j in range(d)] for i in range(d)]

    def det(rows: list[int], cols: list[int]) -> list[Fraction]:
        if len(rows) == 1:
            return entries[rows[0]][cols[0]]
        total = pconst(Fraction(0))
        r = rows[0]
        for idx, c in enumerate(cols):
            minor = det(rows[1:], cols[:idx] + cols[idx + 1:])
            term = pmul(entries[r][c], minor)
            total = padd(total, term if idx % 2 == 0 else pneg(term))
        return total

    p = det(list(range(d)), list(range(d)))
    p = p + [Fraction(0)] * (d + 1 - len(p))
    return p


def _poly_eval(p: list[Fraction], t: Fraction) -> Fraction:
    acc = Fraction(0)
    for c in reversed(p):
        acc = acc * t + c
    return acc


def _sturm_chain(p: list[Fraction]) -> list[list[Fraction]]:
    def deriv(q):
        return [c * i for i, c in enumerate(q)][1:]

    def trim(q):
        while q and q[-1] == 0:
            q = q[:-1]
        return q

    def rem(a, b):
        a = trim(list(a))
        while a and len(a) >= len(b):
            f = a[-1] / b[-1]
            shift = len(a) - len(b)
            for i, c in enumerate(b):
                a[shift + i] -= f * c
            a = trim(a)  # leading coefficient cancelled exactly
        return a

    chain = [trim(list(p)), trim(deriv(p))]
    while chain[-1] and len(chain[-1]) > 1:
        r = rem(chain[-2], chain[-1])
        if not r:
            break
        chain.append([-c for c in r])
    return [c for c in chain if c]


def _sign_variations(chain: list[list[Fraction]], t: Fraction) -> int:
    signs = []
    for q in chain:
        v = _poly_eval(q, t)
        if v != 0:
            signs.append(1 if v > 0 else -1)
    return sum(1 for a, b in zip(signs, signs[1:]) if a != b)


def exact_smallest_eigen_interval(M: Sequence[Sequence[Rational]], bits: int = 80
                                  ) -> tuple[Fraction, Fraction]:
    """Certified isolating interval for the smallest eigenvalue of symmetric M.

    Exact-sign bisection of the characteristic polynomial, narrowing to a
    width of 2^-bits * max(1, |root|).  Supports dim <= 4.
    """
    Mf = frmat(M)
    d = len(Mf)
    if d > 4:
        raise ValueError("exact eigen isolation supports dim <= 4")
    if any(len(r) != d for r in Mf):
        raise ValueError("matrix must be square")
    if any(Mf[i][j] != Mf[j][i] for i in range(d) for j in range(d)):
        raise ValueError("matrix must be symmetric")
    p = _char_poly(Mf)
    chain = _sturm_chain(p)
    # Gershgorin bracket: all eigenvalues lie within it
    radii = [sum(abs(Mf[i][j]) for j in range(d) if j != i) for i in range(d)]
    lo = min(Mf[i][i] - radii[i] for i in range(d)) - 1
    hi = max(Mf[i][i] + radii[i] for i in range(d)) + 1
    total = _sign_variations(chain, lo) - _sign_variations(chain, hi)
    if total < 1:
        raise RuntimeError("Sturm chain found no eigenvalue in the Gershgorin bracket")

    def count_in(a: Fraction, b: Fraction) -> int:
        return _sign_variations(chain, a) - _sign_variations(chain, b)

    # shrink [lo, hi] keeping at least the smallest root inside
    while True:
        width = hi - lo
        bound = Fraction(1, 2 ** bits) * max(Fraction(1), abs(lo), abs(hi))
        if width <= bound:
            return lo, hi
        mid = (lo + hi) / 2
        if _poly_eval(p, mid) == 0:
            # landed on the root exactly; return a tight interval around it
            eps = bound / 4
            return mid - eps, mid + eps
        if count_in(lo, mid) >= 1:
            hi = mid
        else:
            lo = mid


# ---------------------------------------------------------------------------
# decay-rate fitting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FitResult:
    """Ordinary least-squares line y = slope * t + intercept.

    For model 'exp' the abscissa is t itself (slope = exponential rate per
    step); for model 'poly' it is log t (slope = polynomial order).
    """

    slope: float
    intercept: float
    r_squared: float
    window: tuple[float, float]
    n_points: int


def fit_rate(series: Sequence[tuple[float, float]], model: str = "exp") -> FitResult:
    """Fit a decay law to (t, y) pairs; y is typically a log quantity."""
    if model not in ("exp", "poly"):
        raise ValueError(f"unknown model {model!r}")
    pts = [(float(t), float(y)) for t, y in series]
    if len(pts) < 3:
        raise ValueError("fit_rate needs at least 3 points")
    if any(not (math.isfinite(t) and math.isfinite(y)) for t, y in pts):
        raise ValueError("fit_rate requires finite values (filter untrusted points first)")
    ts = [t for t, _ in pts]
    if model == "poly":
        if any(t <= 0 for t in ts):
            raise ValueError("poly model needs positive abscissas")
        xs = [math.log(t) for t in ts]
    else:
        xs = ts
    ys = [y for _, y in pts]
    n = len(pts)
    xm = sum(xs) / n
    ym = sum(ys) / n
    sxx = sum((x - xm) ** 2 for x in xs)
    if sxx == 0.0:
        raise ValueError("fit_rate needs non-constant abscissas")
    sxy = sum((x - xm) * (y - ym) for x, y in zip(xs, ys))
    slope = sxy / sxx
    intercept = ym - slope * xm
    ss_res = sum((y - (slope * x + intercept)) ** 2 for x, y in zip(xs, ys))
    ss_tot = sum((y - ym) ** 2 for y in ys)
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return FitResult(slope, intercept, r2, (min(ts), max(ts)), n)
