"""Sign and factor-order checks: each implemented form holds and its variant fails.

Each case uses constant or x-independent generators, so every ordered
exponential on one side reduces to ``expm`` and the comparison does not lean
on the catalog code it is meant to back up.
"""

import numpy as np
from scipy.integrate import quad_vec
from scipy.linalg import expm

from chronexp.pdesolve import CompatibleB, PDESystemProblem, check_consistency
from chronexp.texp import CallableMatrixFunction, ordered_exp

RNG = np.random.default_rng(11)
A, B, C = RNG.normal(size=(3, 3, 3)) * 0.6
T = 0.8


def t0_exp(fn):
    gen = CallableMatrixFunction(lambda ts: np.stack([fn(s) for s in np.atleast_1d(ts)]), 3)
    return ordered_exp(gen, 0.0, T, "T0", tol=1e-12)


def gap(x, y):
    return np.linalg.norm(x - y) / max(1.0, np.linalg.norm(x))


def test_product_of_two_t0_exponentials_factor_order():
    rhs = t0_exp(lambda s: B + expm(-s * B) @ A @ expm(s * B))
    assert gap(expm(T * A) @ expm(T * B), rhs) <= 1e-9
    assert gap(expm(T * B) @ expm(T * A), rhs) >= 1e-2


def test_mixed_product_as_t0_exponential_sign():
    lhs = expm(T * B) @ expm(T * A)
    inner = lambda s: expm(-s * A) @ (A + B) @ expm(s * A)
    assert gap(lhs, t0_exp(inner)) <= 1e-9
    assert gap(lhs, t0_exp(lambda s: -inner(s))) >= 1e-2


def test_sylvester_source_coefficient_sign():
    Bt = lambda s: np.sin(s) * B + s * np.eye(3)
    dB = lambda s: np.cos(s) * B + np.eye(3)
    K = lambda s: expm(s * A) @ Bt(s) @ expm(s * C)
    h = 1e-5
    dK = (K(T + h) - K(T - h)) / (2 * h)
    homog = A @ K(T) + K(T) @ C
    assert gap(dK, homog + expm(T * A) @ dB(T) @ expm(T * C)) <= 1e-8
    assert gap(dK, homog + expm(T * A) @ dB(T) @ expm(-T * C)) >= 1e-2


def test_compatible_b_conjugation_sign():
    M1, M2 = A[:2, :2], C[:2, :2]
    Afield = lambda x, y: np.broadcast_to(M1 + y * M2, np.shape(x) + (2, 2)).copy()
    B0 = np.array([[0.0, 1.0], [1.0, 0.0]])

    def variant(x, y, sign):
        G = M1 + y * M2
        inner = quad_vec(lambda s: expm(-s * G) @ M2 @ expm(sign * s * G), 0.0, x,
                         epsabs=1e-13)[0]
        return expm(x * G) @ (B0 + inner) @ expm(-x * G)

    def as_field(sign):
        def field(x, y):
            x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
            out = np.empty(x.shape + (2, 2))
            for idx in np.ndindex(x.shape):
                out[idx] = variant(float(x[idx]), float(y[idx]), sign)
            return out
        return field

    xs, ys = np.linspace(0.1, 0.6, 3), np.linspace(-0.3, 0.3, 3)
    good = CompatibleB(Afield, B0)
    assert np.allclose(good(0.5, 0.2), variant(0.5, 0.2, +1), atol=1e-9)
    ok = check_consistency(PDESystemProblem(Afield, as_field(+1)), xs, ys)
    bad = check_consistency(PDESystemProblem(Afield, as_field(-1)), xs, ys)
    assert ok.max_residual <= 1e-6 < 1e-3 <= bad.max_residual
