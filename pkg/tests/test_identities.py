"""Catalog structure and randomized identity checks."""

import json

import numpy as np
import pytest
from scipy.integrate import quad

from chronexp.identities import (CATALOG, TrialConfig, UnknownIdentityError, catalog_ids,
                                 get_entry, random_generator, relative_error, reports_to_json,
                                 run_suite, trial_rng, truncation_discrepancy, verify_identity)
from chronexp.texp import ConstantMatrixFunction, DenseOrderedExp, ExprMatrixFunction, ordered_exp

REQUIRED = ["TT", "TT0_INVERSE", "T0T0", "B_CONJ", "BCH_MERGE", "ZASSENHAUS_SPLIT",
            "BCH_INTEGRAL", "BCH_ITERATED", "BCH_CONVENTIONAL", "BCH_MIRROR",
            "BCH_MIRROR_ITERATED", "ORDER_SWAP_T0", "ORDER_SWAP_T", "CONJ_INVOLUTION",
            "SYLVESTER_FORM", "INV_PRODUCT", "ZASSENHAUS_T0", "MIXED_ORDER_1", "MIXED_ORDER_2",
            "MIXED_ORDER_3", "T_INDEP_CONJ", "T_INDEP_SLIDE"]


def test_catalog_has_required_entries_with_unique_ids():
    for name in REQUIRED:
        assert get_entry(name).id == name
    ids = catalog_ids()
    assert len(ids) == len(set(ids))
    assert "BCH_ITERATED(3)" in ids


def test_unknown_identity():
    with pytest.raises(UnknownIdentityError):
        verify_identity("NOPE")
    with pytest.raises(UnknownIdentityError):
        get_entry("BCH_ITERATED(x)")


def test_bch_merge_with_zero_second_generator():
    A = random_generator(trial_rng(1, "merge"), 3, (0, 1))
    zero = ExprMatrixFunction([["0"] * 3] * 3)
    rep = verify_identity("BCH_MERGE", TrialConfig(dimension=3, trials=3, tolerance=1e-12),
                          generators={"A": A, "B": zero})
    assert rep.passed, rep.max_error


def test_bch_merge_with_commuting_scalar_generators():
    a = ExprMatrixFunction([["cos(t)", "0"], ["0", "cos(t)"]])
    b = ExprMatrixFunction([["t^2", "0"], ["0", "t^2"]])
    rep = verify_identity("BCH_MERGE", TrialConfig(trials=2, tolerance=1e-9),
                          generators={"A": a, "B": b})
    assert rep.passed
    t = 1.0
    oracle = np.exp(quad(lambda s: np.cos(s) + s * s, 0, t)[0]) * np.eye(2)
    merged = ordered_exp(b, 0, t) @ ordered_exp(a, 0, t)
    assert np.allclose(merged, oracle, rtol=1e-10)


def test_inverse_law_fifty_trials():
    rep = verify_identity("TT0_INVERSE", TrialConfig(dimension=3, trials=50, seed=7,
                                                     tolerance=5e-9))
    assert rep.passed and rep.max_error <= 5e-9


@pytest.mark.parametrize("identity", ["BCH_ITERATED(1)", "BCH_ITERATED(4)",
                                      "BCH_MIRROR_ITERATED(4)", "BCH_CONVENTIONAL(3)"])
def test_remainder_forms_exact_for_every_order(identity):
    rep = verify_identity(identity, TrialConfig(dimension=2, trials=3, interval=(0.0, 1.5),
                                                tolerance=1e-7))
    assert rep.passed, rep.max_error


@pytest.mark.parametrize("name,offset", [("BCH_ITERATED", 1), ("BCH_MIRROR_ITERATED", 1),
                                         ("BCH_CONVENTIONAL", 2)])
@pytest.mark.parametrize("k", [1, 2, 3])
def test_truncated_remainder_slope(name, offset, k):
    rng = trial_rng(42, "truncation-slope")
    gens = {"A": random_generator(rng, 2, (0, 1)), "B": random_generator(rng, 2, (0, 1))}
    hs = [0.1 / 2 ** i for i in range(5)]
    d = [truncation_discrepancy(f"{name}({k})", gens, 0.0, h) for h in hs]
    slope = np.polyfit(np.log(hs), np.log(d), 1)[0]
    assert abs(slope - (k + offset)) <= 0.3


def test_truncation_needs_an_order():
    with pytest.raises(ValueError):
        truncation_discrepancy("TT", {}, 0, 1)


def test_conjugation_map_is_an_involution():
    A = random_generator(trial_rng(5, "involution"), 3, (0, 1))
    TA, T0mA = DenseOrderedExp(A, 0, 1, "T", 1.0), DenseOrderedExp(A, 0, 1, "T0", -1.0)
    ts = np.linspace(0, 1, 41)
    from chronexp.texp import CallableMatrixFunction
    At = CallableMatrixFunction(lambda s: T0mA.from_start(s) @ A.batch(s) @ TA.from_start(s), 3)
    T0b, Tmb = DenseOrderedExp(At, 0, 1, "T0", 1.0), DenseOrderedExp(At, 0, 1, "T", -1.0)
    back = T0b.from_start(ts) @ At.batch(ts) @ Tmb.from_start(ts)
    assert np.max(np.abs(back - A.batch(ts))) <= 5e-9


def test_relative_error_scaling():
    assert relative_error(np.eye(2), np.eye(2)) == 0
    assert relative_error(np.zeros(2), np.array([0.5, 0])) == 0.5
    assert relative_error(np.array([100.0]), np.array([101.0])) == pytest.approx(1 / 101)


def test_run_suite_requires_trials():
    with pytest.raises(ValueError):
        run_suite(trials=0)


def test_reports_deterministic_and_thread_independent():
    ids = ["TT", "BCH_MERGE", "SYLVESTER_FORM"]
    one = reports_to_json(run_suite(seed=3, trials=4, ids=ids))
    two = reports_to_json(run_suite(seed=3, trials=4, ids=ids, workers=3))
    assert one == two
    doc = json.loads(one)
    assert [r["identity"] for r in doc["reports"]] == ids


def test_report_pass_flag_consistent():
    rep = verify_identity("TT", TrialConfig(trials=3, tolerance=1e-30))
    assert not rep.passed and rep.max_error > rep.tolerance
    d = rep.to_dict()
    assert d["passed"] is False and len(d["errors"]) == 3


def test_every_entry_passes_quick_configuration():
    reports = run_suite(seed=1, trials=2, dimension=2, interval=(0.0, 0.5))
    bad = [(r.identity, r.max_error, r.failure) for r in reports if not r.passed]
    assert not bad
    assert len(reports) == len(catalog_ids())
    assert set(CATALOG) >= set(REQUIRED)
