"""scikit-learn style transformers over the solvers.

Both transformers are stateless maps from initial data to solution values,
so ``fit`` only validates shapes.  They let flows and propagators sit inside
``sklearn.pipeline.Pipeline`` objects and be cloned with ``sklearn.clone``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .characteristics import CharField, solve_system_characteristic
from .texp import as_matrix_function, ordered_exp

__all__ = ["CharacteristicFlowTransformer", "OrderedExpTransformer"]


class CharacteristicFlowTransformer(TransformerMixin, BaseEstimator):
    """Map initial values ``c`` (rows of ``X``) to ``u(t; c)`` for ``u' = f(t, u)``.

    Parameters
    ----------
    field : str or sequence of str
        Field components, one per state variable.
    t : float
        End time.
    a : float
        Base time where ``u(a) = c``.
    names : sequence of str, optional
        State variable names; detected from the expressions by default.
    params : dict, optional
        Parameter values bound in the expressions.
    tol : float
        Flow integrator tolerance.
    """

    def __init__(self, field="u", t=1.0, a=0.0, names=None, params=None, tol=1e-12):
        self.field = field
        self.t = t
        self.a = a
        self.names = names
        self.params = params
        self.tol = tol

    def _components(self):
        return [self.field] if isinstance(self.field, str) else list(self.field)

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_features=1)
        comps = self._components()
        if X.shape[1] != len(comps):
            raise ValueError(f"X has {X.shape[1]} columns but the field has {len(comps)} components")
        self.field_ = CharField(comps, self.names, self.a, params=self.params or {})
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "field_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} columns, got {X.shape[1]}")
        r = solve_system_characteristic(list(self.field_.components), X, self.t, self.tol,
                                        a=self.a, names=self.field_.names,
                                        params=self.params or {})
        return np.asarray(r.values, dtype=float).reshape(X.shape)


class OrderedExpTransformer(TransformerMixin, BaseEstimator):
    """Map initial vectors ``u(a)`` (rows of ``X``) to ``u(t) = T exp{int_a^t L} u(a)``.

    Parameters
    ----------
    generator : array-like or matrix function
        Constant matrix, nested list of expression strings in ``t`` or any
        object accepted by the ordered-exponential engine.
    a, t : float
        Interval ends.
    method : {"product", "dyson"}
        Engine route.
    tol : float
        Engine tolerance.
    """

    def __init__(self, generator=None, a=0.0, t=1.0, method="product", tol=1e-10):
        self.generator = generator
        self.a = a
        self.t = t
        self.method = method
        self.tol = tol

    def fit(self, X, y=None):
        X = check_array(X)
        gen = self.generator
        if gen is None:
            raise ValueError("a generator is required")
        if isinstance(gen, (list, tuple)) and not all(
                isinstance(x, (int, float)) for r in gen for x in r):
            from .texp import ExprMatrixFunction
            gen = ExprMatrixFunction(gen)
        elif isinstance(gen, (list, tuple, np.ndarray)):
            gen = np.asarray(gen, dtype=float)
        E = ordered_exp(as_matrix_function(gen), self.a, self.t, method=self.method,
                        tol=self.tol)
        if E.shape[0] != X.shape[1]:
            raise ValueError(f"X has {X.shape[1]} columns but the generator is {E.shape[0]}x{E.shape[0]}")
        self.propagator_ = E
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "propagator_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} columns, got {X.shape[1]}")
        return X @ self.propagator_.T
