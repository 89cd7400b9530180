"""scikit-learn wrappers around the flow and propagator solvers."""

import numpy as np
import pytest
from scipy.linalg import expm
from sklearn.base import clone
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import FunctionTransformer

from chronexp.estimators import CharacteristicFlowTransformer, OrderedExpTransformer


def test_flow_transformer_matches_separation():
    X = np.array([[0.5], [1.0], [-2.0]])
    out = CharacteristicFlowTransformer("u^2", t=0.5).fit_transform(X)
    assert np.allclose(out[:, 0], X[:, 0] / (1 - 0.5 * X[:, 0]), rtol=1e-10)


def test_flow_transformer_system_rotation():
    X = np.array([[1.0, 0.0], [0.0, 1.0]])
    tr = CharacteristicFlowTransformer(["y", "-x"], t=0.7, names=["x", "y"]).fit(X)
    R = np.array([[np.cos(0.7), np.sin(0.7)], [-np.sin(0.7), np.cos(0.7)]])
    assert np.allclose(tr.transform(X), X @ R.T, atol=1e-10)


def test_flow_transformer_shape_checks():
    tr = CharacteristicFlowTransformer(["y", "-x"], names=["x", "y"])
    with pytest.raises(ValueError):
        tr.fit(np.ones((3, 1)))
    tr.fit(np.ones((3, 2)))
    with pytest.raises(ValueError):
        tr.transform(np.ones((3, 3)))


def test_ordered_exp_transformer_constant_generator():
    L = np.array([[0.0, 1.0], [-2.0, -0.1]])
    X = np.random.default_rng(0).normal(size=(4, 2))
    out = OrderedExpTransformer(L, a=0.2, t=1.1).fit_transform(X)
    assert np.allclose(out, X @ expm(0.9 * L).T, rtol=1e-9)


def test_ordered_exp_transformer_expression_generator():
    X = np.eye(2)
    tr = OrderedExpTransformer([["0", "t"], ["0", "0"]], t=2.0).fit(X)
    assert np.allclose(tr.propagator_, [[1.0, 2.0], [0.0, 1.0]], atol=1e-9)


def test_clone_and_pipeline():
    base = OrderedExpTransformer(np.diag([1.0, -1.0]), t=0.5)
    twin = clone(base)
    assert twin.get_params()["t"] == 0.5 and not hasattr(twin, "propagator_")
    pipe = make_pipeline(FunctionTransformer(lambda X: 2 * X), base)
    out = pipe.fit_transform(np.ones((2, 2)))
    assert np.allclose(out, 2 * np.array([np.exp(0.5), np.exp(-0.5)]))


def test_missing_generator_and_mismatch():
    with pytest.raises(ValueError):
        OrderedExpTransformer().fit(np.ones((1, 2)))
    with pytest.raises(ValueError):
        OrderedExpTransformer(np.eye(3)).fit(np.ones((1, 2)))
