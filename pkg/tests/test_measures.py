import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fractrace.errors import InputError, SupportExplosion
from fractrace.measures import (DiscreteMeasure, average_g, bump, constant, contraction_ratio, coordinate,
                                distance_to, dual_g, hutchinson_error_bound, hutchinson_estimate,
                                model_level_measure, transfer_f)
from fractrace.systems import sierpinski, tent


def test_merge_and_prune():
    mu = DiscreteMeasure([[0.25], [0.25], [0.5]], [1.0, 2.0, 1.0])
    assert len(mu) == 2
    assert mu.point_mass([0.25]) == pytest.approx(3.0)
    assert mu.total_mass == pytest.approx(4.0)


def test_negative_weight_rejected():
    with pytest.raises(InputError):
        DiscreteMeasure([[0.0]], [-1.0])


def test_masses_at_on_empty_measure():
    assert DiscreteMeasure.zero(1).masses_at(np.array([[0.3]])).tolist() == [0.0]


def test_transfer_on_tent_preimages():
    s = tent()
    mu = transfer_f(s, DiscreteMeasure.dirac([0.5]))
    assert np.allclose(mu.points[:, 0], [0.25, 0.75])
    assert np.allclose(mu.weights, [1.0, 1.0])
    # both preimages of 1 coincide: the mass is not doubled
    at_one = transfer_f(s, DiscreteMeasure.dirac([1.0]))
    assert len(at_one) == 1 and at_one.total_mass == pytest.approx(1.0)


def test_dual_g_preserves_mass_and_counts_multiplicity():
    s = tent()
    mu = dual_g(s, DiscreteMeasure.dirac([1.0]))
    assert len(mu) == 1 and mu.point_mass([0.5]) == pytest.approx(1.0)
    nu = dual_g(s, DiscreteMeasure([[0.1], [0.7]], [0.3, 0.7]), n=3)
    assert nu.total_mass == pytest.approx(1.0)
    assert len(nu) == 16


def test_model_level_measure_is_uniform_on_orbit():
    s = sierpinski()
    b = [0.5, 0.0]
    mu = model_level_measure(s, b, 3, 1)
    assert len(mu) == 9
    assert np.allclose(mu.weights, 1 / 9)
    assert model_level_measure(s, b, 3, 4).total_mass == 0.0


def test_tent_estimate_is_uniform_on_dyadic_grid():
    mu = hutchinson_estimate(tent(), 6)
    # images of 0 under all length-6 words: multiples of 1/32, endpoints with half weight
    assert np.allclose(mu.points[:, 0], np.arange(33) / 32)
    expected = np.full(33, 1 / 32)
    expected[[0, -1]] = 1 / 64
    assert np.allclose(mu.weights, expected)
    assert hutchinson_error_bound(tent(), 6) == pytest.approx(2.0 ** -6)


def test_sampled_strategy_is_seeded():
    a = hutchinson_estimate(tent(), 10, strategy="sampled", samples=500, seed=3)
    b = hutchinson_estimate(tent(), 10, strategy="sampled", samples=500, seed=3)
    assert np.array_equal(a.points, b.points)
    assert a.integrate(coordinate()) == pytest.approx(0.5, abs=0.05)


def test_support_cap():
    with pytest.raises(SupportExplosion):
        hutchinson_estimate(sierpinski(), 30, cap=10_000)


def test_csv_and_json_roundtrip(tmp_path):
    mu = DiscreteMeasure([[0.1, 0.2], [0.3, 0.4]], [0.25, 0.75], addresses=[(1, 2), (3,)])
    path = tmp_path / "mu.csv"
    mu.to_csv(path)
    back = DiscreteMeasure.from_csv(path)
    assert np.allclose(back.points, mu.points) and np.allclose(back.weights, mu.weights)
    again = DiscreteMeasure.from_json(mu.to_json())
    assert np.allclose(again.weights, mu.weights)


def test_test_functions():
    X = np.array([[0.0], [0.5], [1.0]])
    assert np.allclose(coordinate(0, 2)(X), [0, 0.25, 1])
    assert np.allclose(constant(2.0)(X), 2.0)
    assert bump([0.5], 0.25)(X)[1] == pytest.approx(1.0)
    assert bump([0.5], 0.25)(X)[0] == pytest.approx(0.0)
    assert np.allclose(distance_to([[0.5]])(X), [0.5, 0, 0.5])


def test_contraction_ratio_on_two_diracs():
    s = tent()
    r = contraction_ratio(s, DiscreteMeasure.dirac([0.0]), DiscreteMeasure.dirac([0.2]))
    assert r == pytest.approx(0.5)


weights = st.lists(st.floats(0.01, 1.0), min_size=1, max_size=8)


@settings(max_examples=50, deadline=None)
@given(weights, st.integers(0, 2**31 - 1))
def test_averaging_is_dual_to_pushforward(w, seed):
    s = sierpinski()
    rng = np.random.default_rng(seed)
    X = s.sample(len(w), rng=rng)
    mu = DiscreteMeasure(X, w, dim=2)
    f = coordinate(0, 2)
    assert dual_g(s, mu).integrate(f) == pytest.approx(mu.integrate(average_g(s, f)), rel=1e-12, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=6))
def test_transfer_multiplies_mass_off_branch_values(xs):
    s = tent()
    ys = [x for x in xs if abs(x - 1.0) > 1e-6]
    if not ys:
        return
    mu = DiscreteMeasure(np.array(ys)[:, None], np.ones(len(ys)))
    assert transfer_f(s, mu).total_mass == pytest.approx(2 * mu.total_mass)


def test_documented_transfer_and_averaging():
    s = tent()
    mu = transfer_f(s, DiscreteMeasure([[0.25], [0.75]], [0.5, 0.5]))
    assert mu.points[:, 0] == pytest.approx([0.125, 0.375, 0.625, 0.875])
    assert np.allclose(mu.weights, 0.5)
    g0 = dual_g(s, DiscreteMeasure.dirac([0.0]))
    assert g0.points[:, 0] == pytest.approx([0.0, 1.0]) and np.allclose(g0.weights, 0.5)


def test_documented_model_level_measures():
    s = tent()
    mu = model_level_measure(s, [0.5], 1, 0)
    assert mu.points[:, 0] == pytest.approx([0.25, 0.75]) and np.allclose(mu.weights, 0.5)
    assert model_level_measure(s, [0.5], 3, 3).points[:, 0] == pytest.approx([0.5])
    assert model_level_measure(s, [0.5], 1, 5).total_mass == 0.0


def test_one_step_estimate_is_one_average():
    s = sierpinski()
    x = s.generic_point
    mu = hutchinson_estimate(s, 1, start=x)
    ref = dual_g(s, DiscreteMeasure.dirac(x, dim=2))
    assert np.allclose(mu.points, ref.points) and np.allclose(mu.weights, ref.weights)


def test_documented_point_masses():
    from fractrace.traces import default_hutchinson

    assert DiscreteMeasure.dirac([0.5]).point_mass([0.5]) == 1.0
    assert DiscreteMeasure([[0.1], [0.9]], [1 / 3, 2 / 3]).point_mass([0.9]) == pytest.approx(2 / 3)
    est, _ = default_hutchinson(tent())
    assert est.point_mass([0.5]) == 0.0


def test_documented_distances():
    from fractrace.transport import hutchinson_metric

    d0, d1 = DiscreteMeasure.dirac([0.0]), DiscreteMeasure.dirac([1.0])
    assert hutchinson_metric(d0, d1) == pytest.approx(1.0)
    assert hutchinson_metric(d0, d0) == 0.0
    half = DiscreteMeasure([[0.0], [1.0]], [0.5, 0.5])
    assert hutchinson_metric(half, DiscreteMeasure.dirac([0.5])) == pytest.approx(0.5)
    assert contraction_ratio(tent(), d0, d1) == pytest.approx(0.5)


def test_contraction_ratio_of_equal_measures():
    from fractrace.errors import DegenerateInput

    with pytest.raises(DegenerateInput):
        contraction_ratio(tent(), DiscreteMeasure.dirac([0.3]), DiscreteMeasure.dirac([0.3]))
