"""Catalog of chronological-exponential identities.

Notation used in the statements::

    T{X}    = T exp{ int_a^t X }        later factors leftmost
    T0{X}   = T0 exp{ int_a^t X }       later factors rightmost
    T{X}(s) = the same over [a, s];  T{X}[s, t] over [s, t]
    [P, Q]  = P Q - Q P

Each entry evaluates its two sides on shared generator samples through
different evaluation trees: every ordered exponential that appears by name
in a statement is computed by its own engine call (never by inverting
another one), and compound generators are assembled from dense propagators.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

from ..texp.dyson import simplex_nodes
from ..texp.matfun import CallableMatrixFunction, ChebyshevMatrixFunction, MatrixFunction
from ..texp.product import DenseOrderedExp, ordered_exp
from ..texp.quadrature import integrate
from ..texp.solvers import solve_operator_sylvester

__all__ = [
    "IdentityEntry",
    "TrialContext",
    "CATALOG",
    "PARAMETRIC",
    "DEFAULT_K",
    "catalog_ids",
    "get_entry",
    "parse_identity_id",
    "UnknownIdentityError",
    "truncation_discrepancy",
]


class UnknownIdentityError(KeyError):
    """Requested identity id is not in the catalog."""


# ---------------------------------------------------------------------------
# evaluation context


class TrialContext:
    """Generators and cached propagators for one trial on ``[a, t]``.

    Parameters
    ----------
    generators : name -> MatrixFunction, or a constant matrix for the
        t-independent entries.  A derivative can be supplied under the
        key ``name + "'"``; otherwise ``generator.derivative()`` is used.
    tol : engine tolerance for ordered exponentials
    """

    def __init__(self, generators: Mapping[str, object], a: float, t: float, tol: float,
                 rng: np.random.Generator, quad_points: int = 16):
        self.gens = dict(generators)
        self.a, self.t, self.tol = float(a), float(t), float(tol)
        self.dense_tol = max(tol * 1e-2, 1e-13)
        self.fit_tol = max(tol * 1e-1, 1e-12)
        self.rng = rng
        self.q = int(quad_points)
        self._dense: dict = {}

    def __getitem__(self, name: str):
        return self.gens[name]

    def derivative(self, name: str) -> MatrixFunction:
        key = name + "'"
        if key in self.gens:
            return self.gens[key]
        g = self.gens[name]
        if not hasattr(g, "derivative"):
            raise ValueError(f"generator {name!r} needs an explicit derivative {key!r}")
        return g.derivative()

    def dense(self, gen: MatrixFunction, direction: str = "T", sign: float = 1.0) -> DenseOrderedExp:
        key = (id(gen), direction, sign)
        if key not in self._dense:
            self._dense[key] = (gen, DenseOrderedExp(gen, self.a, self.t, direction, sign,
                                                     tol=self.dense_tol))
        return self._dense[key][1]

    def exp(self, gen: MatrixFunction, direction: str = "T", sign: float = 1.0,
            lo: Optional[float] = None, hi: Optional[float] = None) -> np.ndarray:
        lo = self.a if lo is None else lo
        hi = self.t if hi is None else hi
        return ordered_exp(gen, lo, hi, direction=direction, sign=sign, tol=self.tol)

    def fit(self, fn: Callable[[np.ndarray], np.ndarray]) -> ChebyshevMatrixFunction:
        return ChebyshevMatrixFunction.fit(fn, self.a, self.t, tol=self.fit_tol)

    def integral(self, fn: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        value, _ = integrate(fn, self.a, self.t, tol=self.fit_tol)
        return value


def _fn(dim: int, f: Callable) -> CallableMatrixFunction:
    return CallableMatrixFunction(f, dim)


def _comm(P: np.ndarray, Q: np.ndarray) -> np.ndarray:
    return P @ Q - Q @ P


def _nested_commutators(A: np.ndarray, Bs: np.ndarray) -> np.ndarray:
    """``[[..[A, B_1], B_2] .., B_m]`` for ``Bs`` of shape ``(N, m, n, n)``.

    ``A`` is either one matrix or a stack of ``N``.
    """
    out = np.broadcast_to(A, (Bs.shape[0],) + Bs.shape[2:]).copy()
    for j in range(Bs.shape[1]):
        out = _comm(out, Bs[:, j])
    return out


def _unit_simplex(m: int, q: int, increasing: bool):
    return simplex_nodes(0.0, 1.0, m, q, increasing=increasing)


# ---------------------------------------------------------------------------
# entries


@dataclass(frozen=True)
class IdentityEntry:
    """One catalog identity.

    ``inputs`` maps generator names to their kind: ``smooth`` (random
    trigonometric generator), ``invertible`` (stays invertible on the
    interval), ``const`` (invertible constant) or ``const_any`` (constant,
    possibly singular).  ``evaluate(ctx, k)`` returns ``(lhs, rhs)`` pairs.
    """

    id: str
    title: str
    statement: str
    inputs: Mapping[str, str]
    evaluate: Callable
    parametric: bool = False
    notes: str = ""

    @property
    def arity(self) -> int:
        return len(self.inputs)


def _tt(ctx: TrialContext, k=None):
    L = ctx["L"]
    b = float(ctx.rng.uniform(ctx.a, ctx.t))
    lhs = ctx.exp(L)
    rhs = ctx.exp(L, lo=b) @ ctx.exp(L, hi=b)
    return [(lhs, rhs)]


def _tt0(ctx, k=None):
    L = ctx["L"]
    inv = ctx.exp(L, "T0", -1.0)
    fwd = ctx.exp(L, "T", 1.0)
    eye = np.eye(L.dim)
    return [(inv @ fwd, eye), (fwd @ inv, eye)]


def _t0t0(ctx, k=None):
    L = ctx["L"]
    b = float(ctx.rng.uniform(ctx.a, ctx.t))
    lhs = ctx.exp(L, "T0")
    rhs = ctx.exp(L, "T0", hi=b) @ ctx.exp(L, "T0", lo=b)
    return [(lhs, rhs)]


def _b_conj(ctx, k=None):
    A, b = ctx["A"], ctx["b"]
    db = ctx.derivative("b")

    def gen(ts):
        bv = b.batch(ts)
        binv = np.linalg.inv(bv)
        return db.batch(ts) @ binv + bv @ A.batch(ts) @ binv

    lhs = b(ctx.t) @ ctx.exp(A)
    rhs = ctx.exp(_fn(A.dim, gen)) @ b(ctx.a)
    return [(lhs, rhs)]


def _bch_merge(ctx, k=None):
    A, B = ctx["A"], ctx["B"]
    TB, T0mB = ctx.dense(B, "T", 1.0), ctx.dense(B, "T0", -1.0)
    gen = _fn(A.dim, lambda ts: B.batch(ts) + TB.from_start(ts) @ A.batch(ts) @ T0mB.from_start(ts))
    return [(ctx.exp(B) @ ctx.exp(A), ctx.exp(gen))]


def _zassenhaus_split(ctx, k=None):
    B, C = ctx["B"], ctx["C"]
    TB, T0mB = ctx.dense(B, "T", 1.0), ctx.dense(B, "T0", -1.0)
    inner = _fn(B.dim, lambda ts: T0mB.from_start(ts) @ C.batch(ts) @ TB.from_start(ts))
    return [(ctx.exp(B + C), ctx.exp(B) @ ctx.exp(inner))]


def _conj_lhs(ctx):
    A, B = ctx["A"], ctx["B"]
    return ctx.exp(B) @ A(ctx.t) @ ctx.exp(B, "T0", -1.0)


def _mirror_lhs(ctx):
    A, B = ctx["A"], ctx["B"]
    return ctx.exp(B, "T0", -1.0) @ A(ctx.t) @ ctx.exp(B)


def _bch_integral(ctx, k=None):
    A, B = ctx["A"], ctx["B"]
    At = A(ctx.t)
    TB, T0mB = ctx.dense(B, "T", 1.0), ctx.dense(B, "T0", -1.0)

    def integrand(ts):
        return TB.to_end(ts) @ _comm(At[None], B.batch(ts)) @ T0mB.to_end(ts)

    return [(_conj_lhs(ctx), At - ctx.integral(integrand))]


def _bch_mirror(ctx, k=None):
    A, B = ctx["A"], ctx["B"]
    At = A(ctx.t)
    TB, T0mB = ctx.dense(B, "T", 1.0), ctx.dense(B, "T0", -1.0)

    def integrand(ts):
        return T0mB.from_start(ts) @ _comm(At[None], B.batch(ts)) @ TB.from_start(ts)

    return [(_mirror_lhs(ctx), At + ctx.integral(integrand))]


def _series_sum(A0, B, a, s, k, q, increasing, remainder, sign_alternates):
    """Explicit nested-commutator terms of orders ``1..k-1`` over the
    ordered simplex on ``[a, s]``, plus the order-``k`` term passed through
    ``remainder(taus_k, commutators, weights)``."""
    total = np.array(A0, dtype=float, copy=True)
    span = s - a
    for m in range(1, k + 1):
        u, w = _unit_simplex(m, q, increasing)
        taus = a + span * u
        w = w * span ** m
        N = taus.shape[0]
        Bs = B.batch(taus.ravel()).reshape(N, m, B.dim, B.dim)
        comms = _nested_commutators(A0, Bs)
        sgn = (-1.0) ** m if sign_alternates else 1.0
        if m < k:
            total = total + sgn * np.einsum("p,pij->ij", w, comms)
        else:
            total = total + sgn * remainder(taus[:, -1], comms, w)
    return total


def _plain_remainder(taus, comms, w):
    return np.einsum("p,pij->ij", w, comms)


def _bch_iterated(ctx, k=2, truncate=False):
    A, B = ctx["A"], ctx["B"]
    At = A(ctx.t)
    TB, T0mB = ctx.dense(B, "T", 1.0), ctx.dense(B, "T0", -1.0)

    def remainder(tk, comms, w):
        return np.einsum("p,pij->ij", w, TB.to_end(tk) @ comms @ T0mB.to_end(tk))

    rhs = _series_sum(At, B, ctx.a, ctx.t, k, ctx.q, True,
                      _plain_remainder if truncate else remainder, True)
    return [(_conj_lhs(ctx), rhs)]


def _bch_mirror_iterated(ctx, k=2, truncate=False):
    A, B = ctx["A"], ctx["B"]
    At = A(ctx.t)
    TB, T0mB = ctx.dense(B, "T", 1.0), ctx.dense(B, "T0", -1.0)

    def remainder(tk, comms, w):
        return np.einsum("p,pij->ij", w, T0mB.from_start(tk) @ comms @ TB.from_start(tk))

    rhs = _series_sum(At, B, ctx.a, ctx.t, k, ctx.q, False,
                      _plain_remainder if truncate else remainder, False)
    return [(_mirror_lhs(ctx), rhs)]


def _bch_conventional(ctx, k=2, truncate=False):
    """Generator ``A + B + sum_m (-1)^m int [..[A(s), B(s_1)]..]`` with the
    order-``k`` term conjugated by ``T{B}[s_k, s]`` and its inverse."""
    A, B = ctx["A"], ctx["B"]
    a, n, q = ctx.a, A.dim, ctx.q
    TB, T0mB = ctx.dense(B, "T", 1.0), ctx.dense(B, "T0", -1.0)
    # the inner rule shrinks with the simplex dimension to bound the node count
    rules = [_unit_simplex(m, q if m <= 2 else max(8, min(q, 10)), True)
             for m in range(1, k + 1)]

    def gen(ss):
        ss = np.atleast_1d(ss)
        out = A.batch(ss) + B.batch(ss)
        As = A.batch(ss)
        for m, (u, w) in enumerate(rules, start=1):
            span = ss - a
            taus = a + span[:, None, None] * u[None]            # (S, P, m)
            ww = w[None, :] * span[:, None] ** m                  # (S, P)
            S, P = taus.shape[:2]
            Bs = B.batch(taus.ravel()).reshape(S * P, m, n, n)
            comms = _nested_commutators(np.repeat(As, P, axis=0), Bs).reshape(S, P, n, n)
            sgn = (-1.0) ** m
            if m < k or truncate:
                out = out + sgn * np.einsum("sp,spij->sij", ww, comms)
                continue
            tk = taus[:, :, -1].ravel()
            left = np.linalg.inv(TB.from_start(tk)).reshape(S, P, n, n)
            right = np.linalg.inv(T0mB.from_start(tk)).reshape(S, P, n, n)
            mid = np.einsum("sp,spij->sij", ww, left @ comms @ right)
            out = out + sgn * (TB.from_start(ss) @ mid @ T0mB.from_start(ss))
        return out

    fitted = ctx.fit(gen)
    return [(ctx.exp(B) @ ctx.exp(A), ctx.exp(fitted))]


def _order_swap_t0(ctx, k=None):
    A = ctx["A"]
    TA, T0mA = ctx.dense(A, "T", 1.0), ctx.dense(A, "T0", -1.0)
    conj = _fn(A.dim, lambda ts: T0mA.from_start(ts) @ A.batch(ts) @ TA.from_start(ts))
    return [(ctx.exp(A, "T0", -1.0), ctx.exp(conj, "T", -1.0))]


def _order_swap_t(ctx, k=None):
    A = ctx["A"]
    TA, T0mA = ctx.dense(A, "T", 1.0), ctx.dense(A, "T0", -1.0)
    conj = _fn(A.dim, lambda ts: T0mA.from_start(ts) @ A.batch(ts) @ TA.from_start(ts))
    return [(ctx.exp(A, "T"), ctx.exp(conj, "T0", 1.0))]


def _conj_involution(ctx, k=None):
    B = ctx["B"]
    TB, T0mB = ctx.dense(B, "T", 1.0), ctx.dense(B, "T0", -1.0)
    Afn = _fn(B.dim, lambda ts: T0mB.from_start(ts) @ B.batch(ts) @ TB.from_start(ts))
    lhs = ctx.exp(Afn, "T0", 1.0) @ Afn(ctx.t) @ ctx.exp(Afn, "T", -1.0)
    return [(lhs, B(ctx.t))]


def _sylvester_form(ctx, k=None):
    A, Bm, C = ctx["A"], ctx["B"], ctx["C"]
    dB = ctx.derivative("B")
    YA, YAi = ctx.dense(A, "T0", 1.0), ctx.dense(A, "T", -1.0)
    XC, XCi = ctx.dense(C, "T", 1.0), ctx.dense(C, "T0", -1.0)
    n = A.dim
    a_fn = _fn(n, lambda ts: YA.from_start(ts) @ A.batch(ts) @ YAi.from_start(ts))
    c_fn = _fn(n, lambda ts: XCi.from_start(ts) @ C.batch(ts) @ XC.from_start(ts))
    b_fn = _fn(n, lambda ts: YA.from_start(ts) @ dB.batch(ts) @ XC.from_start(ts))
    lhs = ctx.exp(A, "T0") @ Bm(ctx.t) @ ctx.exp(C, "T")
    rhs = solve_operator_sylvester(a_fn, b_fn, c_fn, Bm(ctx.a), ctx.a, ctx.t, tol=ctx.tol)
    return [(lhs, rhs)]


def _inv_product(ctx, k=None):
    A, B = ctx["A"], ctx["B"]
    TmB, T0B = ctx.dense(B, "T", -1.0), ctx.dense(B, "T0", 1.0)
    gen = _fn(A.dim, lambda ts: B.batch(ts) + TmB.from_start(ts) @ A.batch(ts) @ T0B.from_start(ts))
    return [(ctx.exp(A, "T0") @ ctx.exp(B, "T0"), ctx.exp(gen, "T0"))]


def _zassenhaus_t0(ctx, k=None):
    B, C = ctx["B"], ctx["C"]
    T0B, TmB = ctx.dense(B, "T0", 1.0), ctx.dense(B, "T", -1.0)
    inner = _fn(B.dim, lambda ts: T0B.from_start(ts) @ C.batch(ts) @ TmB.from_start(ts))
    return [(ctx.exp(B + C, "T0"), ctx.exp(inner, "T0") @ ctx.exp(B, "T0"))]


def _mixed_1(ctx, k=None):
    A, B = ctx["A"], ctx["B"]
    T0B, TmB = ctx.dense(B, "T0", 1.0), ctx.dense(B, "T", -1.0)
    gen = _fn(A.dim, lambda ts: T0B.from_start(ts) @ (A.batch(ts) + B.batch(ts)) @ TmB.from_start(ts))
    return [(ctx.exp(B, "T0") @ ctx.exp(A), ctx.exp(gen, "T"))]


def _mixed_2(ctx, k=None):
    A, B = ctx["A"], ctx["B"]
    TA, T0mA = ctx.dense(A, "T", 1.0), ctx.dense(A, "T0", -1.0)
    gen = _fn(A.dim, lambda ts: T0mA.from_start(ts) @ (A.batch(ts) + B.batch(ts)) @ TA.from_start(ts))
    return [(ctx.exp(B, "T0") @ ctx.exp(A), ctx.exp(gen, "T0", 1.0))]


def _mixed_3(ctx, k=None):
    B, C = ctx["B"], ctx["C"]
    TC, T0mC = ctx.dense(C, "T", 1.0), ctx.dense(C, "T0", -1.0)
    TB, T0mB = ctx.dense(B, "T", 1.0), ctx.dense(B, "T0", -1.0)
    g1 = _fn(B.dim, lambda ts: T0mC.from_start(ts) @ B.batch(ts) @ TC.from_start(ts))
    g2 = _fn(B.dim, lambda ts: T0mB.from_start(ts) @ C.batch(ts) @ TB.from_start(ts))
    lhs = ctx.exp(C, "T0", -1.0) @ ctx.exp(B)
    rhs = ctx.exp(g1, "T") @ ctx.exp(g2, "T0", -1.0)
    return [(lhs, rhs)]


def _t_indep_conj(ctx, k=None):
    A = ctx["A"]
    M = np.asarray(ctx["M"], dtype=float)
    Minv = np.linalg.inv(M)
    gen = _fn(A.dim, lambda ts: Minv[None] @ A.batch(ts) @ M[None])
    return [(ctx.exp(A) @ M, M @ ctx.exp(gen))]


def _t_indep_slide(ctx, k=None):
    A = ctx["A"]
    M = np.asarray(ctx["M"], dtype=float)
    AM = _fn(A.dim, lambda ts: A.batch(ts) @ M[None])
    MA = _fn(A.dim, lambda ts: M[None] @ A.batch(ts))
    return [(M @ ctx.exp(AM, "T"), ctx.exp(MA, "T") @ M),
            (M @ ctx.exp(AM, "T0"), ctx.exp(MA, "T0") @ M)]


def _zassenhaus_two_stage(ctx, k=None):
    B, C = ctx["B"], ctx["C"]
    TB, T0mB = ctx.dense(B, "T", 1.0), ctx.dense(B, "T0", -1.0)
    x, w = np.polynomial.legendre.leggauss(ctx.q)
    x, w = 0.5 * (x + 1.0), 0.5 * w
    n, a = B.dim, ctx.a

    def gen(ss):
        ss = np.atleast_1d(ss)
        span = ss - a
        taus = a + span[:, None] * x[None]                       # (S, q)
        S = ss.size
        Bs = B.batch(taus.ravel()).reshape(S, ctx.q, n, n)
        Cs = C.batch(ss)
        comm = Cs[:, None] @ Bs - Bs @ Cs[:, None]
        conj = (T0mB.from_start(taus.ravel()).reshape(S, ctx.q, n, n) @ comm
                @ TB.from_start(taus.ravel()).reshape(S, ctx.q, n, n))
        return Cs + np.einsum("sp,spij->sij", w[None] * span[:, None], conj)

    fitted = ctx.fit(gen)
    return [(ctx.exp(B + C), ctx.exp(B) @ ctx.exp(fitted))]


def _zassenhaus_three(ctx, k=None):
    B, C = ctx["B"], ctx["C"]
    TB, T0mB = ctx.dense(B, "T", 1.0), ctx.dense(B, "T0", -1.0)
    TC, T0mC = ctx.dense(C, "T", 1.0), ctx.dense(C, "T0", -1.0)
    x, w = np.polynomial.legendre.leggauss(ctx.q)
    x, w = 0.5 * (x + 1.0), 0.5 * w
    n, a = B.dim, ctx.a

    def gen(ss):
        ss = np.atleast_1d(ss)
        span = ss - a
        taus = a + span[:, None] * x[None]
        S = ss.size
        Bs = B.batch(taus.ravel()).reshape(S, ctx.q, n, n)
        Cs = C.batch(ss)
        comm = Cs[:, None] @ Bs - Bs @ Cs[:, None]
        conj = (T0mB.from_start(taus.ravel()).reshape(S, ctx.q, n, n) @ comm
                @ TB.from_start(taus.ravel()).reshape(S, ctx.q, n, n))
        D = np.einsum("sp,spij->sij", w[None] * span[:, None], conj)
        return T0mC.from_start(ss) @ D @ TC.from_start(ss)

    fitted = ctx.fit(gen)
    return [(ctx.exp(B + C), ctx.exp(B) @ ctx.exp(C) @ ctx.exp(fitted))]


_S, _I, _C, _CA = "smooth", "invertible", "const", "const_any"

_ENTRIES = [
    IdentityEntry(
        "TT", "Group law of T-ordered exponentials",
        "T exp{int_a^t L} = T exp{int_b^t L} T exp{int_a^b L}   (a <= b <= t)",
        {"L": _S}, _tt),
    IdentityEntry(
        "TT0_INVERSE", "T0-ordered exponential of -L inverts the T-ordered one",
        "T0 exp{-int_a^t L} T exp{int_a^t L} = 1, and the two factors commute",
        {"L": _S}, _tt0),
    IdentityEntry(
        "T0T0", "Group law of T0-ordered exponentials",
        "T0 exp{int_a^t L} = T0 exp{int_a^b L} T0 exp{int_b^t L}   (a <= b <= t)",
        {"L": _S}, _t0t0),
    IdentityEntry(
        "B_CONJ", "Left multiplication by an invertible family",
        "b(t) T{A} = T exp{int_a^t [b'(s) b(s)^-1 + b(s) A(s) b(s)^-1]} b(a)",
        {"A": _S, "b": _I}, _b_conj),
    IdentityEntry(
        "BCH_MERGE", "Product of two T-ordered exponentials as one",
        "T{B} T{A} = T exp{int_a^t [B(s) + T{B}(s) A(s) T0{-B}(s)]}",
        {"A": _S, "B": _S}, _bch_merge),
    IdentityEntry(
        "ZASSENHAUS_SPLIT", "Splitting the exponential of a sum",
        "T{B + C} = T{B} T exp{int_a^t T0{-B}(s) C(s) T{B}(s)}",
        {"B": _S, "C": _S}, _zassenhaus_split),
    IdentityEntry(
        "BCH_INTEGRAL", "Integral form of the conjugation by T{B}",
        "T{B} A(t) T0{-B} = A(t) - int_a^t T{B}[s,t] [A(t), B(s)] T0{-B}[s,t] ds",
        {"A": _S, "B": _S}, _bch_integral),
    IdentityEntry(
        "BCH_ITERATED", "Iterated conjugation with exact remainder",
        "T{B} A(t) T0{-B} = A(t) + sum_{m<k} (-1)^m int_{a<=s1<=..<=sm<=t} "
        "[..[A(t),B(s1)]..,B(sm)] + (-1)^k int_{a<=s1<=..<=sk<=t} T{B}[sk,t] "
        "[..[A(t),B(s1)]..,B(sk)] T0{-B}[sk,t]",
        {"A": _S, "B": _S}, _bch_iterated, parametric=True),
    IdentityEntry(
        "BCH_CONVENTIONAL", "Merged exponent as a nested-commutator series",
        "T{B} T{A} = T exp{int_a^t G}, G(s) = A(s) + B(s) + sum_{m<k} (-1)^m "
        "int_{a<=s1<=..<=sm<=s} [..[A(s),B(s1)]..,B(sm)] + (-1)^k int T{B}[sk,s] "
        "[..[A(s),B(s1)]..,B(sk)] T0{-B}[sk,s]",
        {"A": _S, "B": _S}, _bch_conventional, parametric=True),
    IdentityEntry(
        "BCH_MIRROR", "Integral form of the conjugation by T0{-B}",
        "T0{-B} A(t) T{B} = A(t) + int_a^t T0{-B}(s) [A(t), B(s)] T{B}(s) ds",
        {"A": _S, "B": _S}, _bch_mirror),
    IdentityEntry(
        "BCH_MIRROR_ITERATED", "Iterated mirror conjugation with exact remainder",
        "T0{-B} A(t) T{B} = A(t) + sum_{m<k} int_{t>=s1>=..>=sm>=a} "
        "[..[A(t),B(s1)]..,B(sm)] + int_{t>=s1>=..>=sk>=a} T0{-B}(sk) "
        "[..[A(t),B(s1)]..,B(sk)] T{B}(sk)",
        {"A": _S, "B": _S}, _bch_mirror_iterated, parametric=True),
    IdentityEntry(
        "ORDER_SWAP_T0", "T0-ordered exponential written as a T-ordered one",
        "T0{-A} = T exp{-int_a^t T0{-A}(s) A(s) T{A}(s)}",
        {"A": _S}, _order_swap_t0),
    IdentityEntry(
        "ORDER_SWAP_T", "T-ordered exponential written as a T0-ordered one",
        "T{A} = T0 exp{int_a^t T0{-A}(s) A(s) T{A}(s)}",
        {"A": _S}, _order_swap_t),
    IdentityEntry(
        "CONJ_INVOLUTION", "Inverting the conjugation map",
        "with A(s) = T0{-B}(s) B(s) T{B}(s):  T0{A} A(t) T{-A} = B(t)",
        {"B": _S}, _conj_involution),
    IdentityEntry(
        "SYLVESTER_FORM", "Ordered-exponential solution of K' = aK + Kc + b",
        "K(t) = T{a} [K(a) + int_a^t T0{-a}(s) b(s) T{-c}(s) ds] T0{c} solves "
        "K' = aK + Kc + b; checked on K = T0{A} B(t) T{C} with "
        "a = T0{A} A T{-A}, c = T0{-C} C T{C}, b = T0{A} B' T{C}",
        {"A": _S, "B": _S, "C": _S}, _sylvester_form,
        notes="the source coefficient carries T{+C} on the right"),
    IdentityEntry(
        "INV_PRODUCT", "Product of two T0-ordered exponentials as one",
        "T0{A} T0{B} = T0 exp{int_a^t [B(s) + T{-B}(s) A(s) T0{B}(s)]}",
        {"A": _S, "B": _S}, _inv_product,
        notes="factor order on the left is A then B"),
    IdentityEntry(
        "ZASSENHAUS_T0", "Splitting a T0-ordered exponential of a sum",
        "T0{B + C} = T0 exp{int_a^t T0{B}(s) C(s) T{-B}(s)} T0{B}",
        {"B": _S, "C": _S}, _zassenhaus_t0),
    IdentityEntry(
        "MIXED_ORDER_1", "Mixed product as a T-ordered exponential",
        "T0{B} T{A} = T exp{int_a^t T0{B}(s) [A(s) + B(s)] T{-B}(s)}",
        {"A": _S, "B": _S}, _mixed_1),
    IdentityEntry(
        "MIXED_ORDER_2", "Mixed product as a T0-ordered exponential",
        "T0{B} T{A} = T0 exp{int_a^t T0{-A}(s) [A(s) + B(s)] T{A}(s)}",
        {"A": _S, "B": _S}, _mixed_2,
        notes="the outer exponent carries a plus sign"),
    IdentityEntry(
        "MIXED_ORDER_3", "Mixed product split into two conjugated factors",
        "T0{-C} T{B} = T exp{int_a^t T0{-C}(s) B(s) T{C}(s)} "
        "T0 exp{-int_a^t T0{-B}(s) C(s) T{B}(s)}",
        {"B": _S, "C": _S}, _mixed_3),
    IdentityEntry(
        "T_INDEP_CONJ", "Sliding a constant invertible factor",
        "T{A} M = M T exp{int_a^t M^-1 A(s) M}",
        {"A": _S, "M": _C}, _t_indep_conj),
    IdentityEntry(
        "T_INDEP_SLIDE", "Sliding a constant factor through the exponent",
        "M T exp{int_a^t A(s) M} = T exp{int_a^t M A(s)} M, and the same with T0",
        {"A": _S, "M": _CA}, _t_indep_slide),
    IdentityEntry(
        "ZASSENHAUS_TWO_STAGE", "Split with the conjugated term expanded once",
        "T{B + C} = T{B} T exp{int_a^t [C(s) + int_a^s T0{-B}(r) [C(s), B(r)] T{B}(r) dr]}",
        {"B": _S, "C": _S}, _zassenhaus_two_stage),
    IdentityEntry(
        "ZASSENHAUS_THREE", "Three-factor split of the exponential of a sum",
        "T{B + C} = T{B} T{C} T exp{int_a^t T0{-C}(s) [int_a^s T0{-B}(r) [C(s), B(r)] "
        "T{B}(r) dr] T{C}(s)}",
        {"B": _S, "C": _S}, _zassenhaus_three),
]

CATALOG: dict[str, IdentityEntry] = {e.id: e for e in _ENTRIES}
PARAMETRIC = tuple(e.id for e in _ENTRIES if e.parametric)
DEFAULT_K = (1, 2, 3)

_ID_RE = re.compile(r"^([A-Z0-9_]+)(?:\((\d+)\))?$")


def parse_identity_id(text: str) -> tuple[IdentityEntry, Optional[int]]:
    """``"BCH_ITERATED(3)"`` -> (entry, 3); plain parametric ids get ``k = 2``."""
    m = _ID_RE.match(text.strip())
    if not m or m.group(1) not in CATALOG:
        raise UnknownIdentityError(text)
    entry = CATALOG[m.group(1)]
    k = m.group(2)
    if k is not None and not entry.parametric:
        raise UnknownIdentityError(f"{entry.id} takes no order parameter")
    if entry.parametric:
        k = 2 if k is None else int(k)
        if k < 1:
            raise ValueError("order parameter must be at least 1")
    return entry, (int(k) if k is not None else None)


def get_entry(text: str) -> IdentityEntry:
    return parse_identity_id(text)[0]


def catalog_ids(ks=DEFAULT_K) -> list[str]:
    """Every catalog id, parametric entries expanded over ``ks``."""
    out = []
    for e in _ENTRIES:
        if e.parametric:
            out.extend(f"{e.id}({k})" for k in ks)
        else:
            out.append(e.id)
    return out


_TRUNCATABLE = {"BCH_ITERATED": "_bch_iterated", "BCH_MIRROR_ITERATED": "_bch_mirror_iterated",
                "BCH_CONVENTIONAL": "_bch_conventional"}


def truncation_discrepancy(identity: str, generators: Mapping[str, object], a: float, t: float,
                           tol: float = 1e-12, quad_points: int = 16) -> float:
    """Frobenius gap between the two sides when the exact remainder of a
    parametric expansion is replaced by its plain leading term.

    ``identity`` must carry its order, e.g. ``"BCH_ITERATED(2)"``.  The gap
    is the truncation error of the order-``k`` expansion on ``[a, t]``.
    """
    entry, k = parse_identity_id(identity)
    if entry.id not in _TRUNCATABLE or k is None:
        raise ValueError(f"{identity!r} is not a truncatable expansion with an order")
    ctx = TrialContext(generators, a, t, tol, np.random.default_rng(0), quad_points)
    fn = globals()[_TRUNCATABLE[entry.id]]
    (lhs, rhs), = fn(ctx, k, truncate=True)
    return float(np.linalg.norm(np.asarray(lhs) - np.asarray(rhs)))
