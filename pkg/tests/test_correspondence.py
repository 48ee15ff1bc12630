import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fractrace.correspondence import (RankOne, Section, alpha_endo, build_truncated_frame, compose,
                                      degenerate_fibres, frame_transfer_check, in_jx, inner_product, left_action,
                                      measured_window, random_section, rank_one_apply, right_action, tensor, tilde,
                                      unit_section, verify_frame_sum)
from fractrace.errors import AtomInExclusionWindow, InsufficientMembers, LevelMismatch
from fractrace.ifs import compute_branch_data
from fractrace.measures import DiscreteMeasure, TestFunction, constant, coordinate
from fractrace.systems import load_system, sierpinski, tent

Y1 = np.linspace(0, 1, 41)[:, None]


def _a():
    return TestFunction(lambda X: 1.0 + X[:, 0] ** 2 + 0.3 * np.sin(5 * X[:, -1]), name="a", sup=2.3)


@pytest.mark.parametrize("n", [0, 1, 2, 3])
def test_unit_section_has_unit_norm(n):
    s = sierpinski()
    Y = s.sample(10, rng=0)
    assert np.allclose(inner_product(unit_section(s, n), unit_section(s, n))(Y), 1.0)


def test_tent_components_by_hand():
    s = tent()
    xi = Section.from_graph_function(s, 1, lambda X, Y: X[:, 0] + 10 * Y[:, 0])
    vals = xi(np.array([[0.4]]))
    assert np.allclose(vals[:, 0], [0.2 + 4, 0.8 + 4])
    assert xi.compatibility_defect(np.array([[1.0]])) == pytest.approx(0.0)
    bad = Section.constant(s, 1, [1.0, 2.0])
    assert bad.compatibility_defect(np.array([[1.0]])) == pytest.approx(1.0)


def test_tilde_on_tent_by_hand():
    s = tent()
    a = coordinate(0, 2)
    assert tilde(s, a)(np.array([[0.4]]))[0] == pytest.approx(0.2 ** 2 + 0.8 ** 2)
    # the two preimages of 1 coincide and count once
    assert tilde(s, a)(np.array([[1.0]]))[0] == pytest.approx(0.25)


def test_alpha_endo_on_tent():
    s = tent()
    f = alpha_endo(s, coordinate(), 1)
    assert np.allclose(f(np.array([[0.25], [0.75]])), [0.5, 0.5])


def test_in_jx():
    br = compute_branch_data(tent())
    assert in_jx(TestFunction(lambda X: X[:, 0] - 0.5), br)
    assert not in_jx(coordinate(), br)


def test_level_mismatch():
    s = tent()
    with pytest.raises(LevelMismatch):
        inner_product(unit_section(s, 1), unit_section(s, 2))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 2))
def test_module_identities(seed, n):
    s = sierpinski() if seed % 2 else tent()
    rng = np.random.default_rng(seed)
    Y = s.sample(16, rng=rng)
    xi, eta, zeta, omega = (random_section(s, n, rng) for _ in range(4))
    a = _a()
    abar = a
    # adjointness of the left action for a real function
    assert np.allclose(inner_product(left_action(a, xi), eta)(Y), inner_product(xi, left_action(abar, eta))(Y))
    assert np.allclose(inner_product(xi, right_action(eta, a))(Y), inner_product(xi, eta)(Y) * a(Y))
    assert np.allclose(np.conj(inner_product(xi, eta)(Y)), inner_product(eta, xi)(Y))
    assert (inner_product(xi, xi)(Y).real >= -1e-12).all()
    lhs = inner_product(tensor(zeta, xi), tensor(omega, eta))(Y)
    rhs = inner_product(xi, left_action(inner_product(zeta, omega), eta))(Y)
    assert np.allclose(lhs, rhs)
    s1, s2 = RankOne(xi, eta), RankOne(zeta, omega)
    assert np.allclose(rank_one_apply(compose(s1, s2), xi)(Y), rank_one_apply(s1, rank_one_apply(s2, xi))(Y))


def test_degenerate_fibres_tent():
    D, classes, anchors = degenerate_fibres(tent(), 1)
    assert np.allclose(D, [[1.0]])


def test_tent_default_frame():
    frame = build_truncated_frame(tent(), 1)
    assert frame.size == 17
    assert frame.reconstruction_error < 1e-12
    assert verify_frame_sum(frame, _a()) <= 1e-3
    # exact at the degenerate fibre itself
    at_one = frame.frame_sum(_a())(np.array([[1.0]]))[0]
    assert at_one == pytest.approx(tilde(tent(), _a())(np.array([[1.0]]))[0], abs=1e-12)


def test_frame_window_shrinks_with_members():
    s = tent()
    small = build_truncated_frame(s, 1)
    grid = small.default_grid()
    big = build_truncated_frame(s, 1, 4 * small.size, grid=grid)
    assert measured_window(big, _a(), 1e-3, grid) < measured_window(small, _a(), 1e-3, grid) / 3
    assert big.exclusion_radius < small.exclusion_radius


def test_too_few_members():
    with pytest.raises(InsufficientMembers):
        build_truncated_frame(tent(), 1, M=1)


def test_frame_level_two_on_tent():
    frame = build_truncated_frame(tent(), 2)
    assert frame.reconstruction_error < 1e-12
    assert verify_frame_sum(frame, _a()) <= 1e-3


def test_sierpinski_frame_reconstruction():
    frame = build_truncated_frame(sierpinski(), 1)
    assert frame.reconstruction_error < 1e-12


def test_symmetric_plin_frame_is_exact_away_from_branch_value():
    s = load_system("plin:0.5")
    Y = np.array([[0.3]])
    frame = build_truncated_frame(s, 1)
    assert verify_frame_sum(frame, _a(), Y) < 1e-12


def test_transfer_check_on_orbit_atoms():
    s = tent()
    frame = build_truncated_frame(s, 1)
    a = _a()
    for x in (0.5, 0.25, 0.75, 0.1):
        tc = frame_transfer_check(frame, DiscreteMeasure.dirac([x]), a, a.sup)
        assert tc.passed, (x, tc)


def test_transfer_check_refuses_atoms_in_window():
    s = tent()
    frame = build_truncated_frame(s, 1)
    x = 1.0 - frame.exclusion_radius / 2
    with pytest.raises(AtomInExclusionWindow):
        frame_transfer_check(frame, DiscreteMeasure.dirac([x]), _a())


def _cantor():
    from fractrace.systems import from_dict

    return from_dict({"name": "cantor", "base_point": [0.0],
                      "maps": [{"linear": [[1 / 3]], "offset": [0.0]}, {"linear": [[1 / 3]], "offset": [2 / 3]}],
                      "cells": [{"branch": 1, "vertices": [0.0, 1 / 3]}, {"branch": 2, "vertices": [2 / 3, 1.0]}]})


def test_branch_free_frame_is_exact_with_N_members():
    s = _cantor()
    frame = build_truncated_frame(s, 1, M=2)
    assert frame.size == 2 and frame.reconstruction_error <= 1e-12
    Y = s.sample(64, rng=0)
    assert np.allclose(frame.operator(Y), np.eye(2)[None])


def test_two_member_tent_frame_errs_only_near_one():
    s = tent()
    frame = build_truncated_frame(s, 1, M=2)
    Y = np.linspace(0, 1, 401)[:, None]
    err = np.abs(frame.operator(Y) - frame.admissible_projection(Y)).max(axis=(1, 2))
    assert err[Y[:, 0] <= 1 - frame.exclusion_radius].max() < 1e-12
    assert err[-1] < 1e-12
    assert err.max() > 1e-3
    bad = Y[err > 1e-12, 0]
    assert bad.min() > 1 - frame.exclusion_radius


def test_frame_sum_of_unit_and_identity():
    s = tent()
    frame = build_truncated_frame(s, 1)
    Y = np.linspace(0, 1 - frame.exclusion_radius, 200)[:, None]
    assert np.allclose(frame.frame_sum(constant(1.0))(Y), 2.0)
    assert np.allclose(frame.frame_sum(coordinate())(Y), 1.0)
    assert np.allclose(frame.frame_sum(constant(0.0))(Y), 0.0)


def test_finite_degree_bound():
    s = sierpinski()
    frame = build_truncated_frame(s, 1)
    Y = frame.default_grid()
    total = np.sum(np.abs(frame.stacked(Y)) ** 2, axis=(0, 1))
    assert total.max() <= s.N + frame.reconstruction_error * s.N + 1e-12


def test_transfer_check_values():
    s = tent()
    frame = build_truncated_frame(s, 1)
    tc = frame_transfer_check(frame, DiscreteMeasure.dirac([0.5]), coordinate(), 1.0)
    assert tc.rhs == pytest.approx(1.0) and tc.passed
    orbit = DiscreteMeasure([[0.125], [0.375], [0.625], [0.875]], [0.25] * 4)
    tc = frame_transfer_check(frame, orbit, constant(1.0), 1.0)
    assert tc.rhs == pytest.approx(2.0) and tc.passed
    zero = frame_transfer_check(frame, DiscreteMeasure.zero(1), constant(1.0))
    assert (zero.lhs, zero.rhs) == (0.0, 0.0)


def test_unit_rank_one_identities():
    s = sierpinski()
    Y = s.sample(20, rng=1)
    y0 = unit_section(s, 2)
    assert np.allclose(tensor(unit_section(s, 1), unit_section(s, 1))(Y), y0(Y))
    assert np.allclose(rank_one_apply(RankOne(y0, y0), y0)(Y), y0(Y))
    zeta = random_section(s, 2, 4)
    assert np.abs(rank_one_apply(RankOne(zeta, y0), y0)(Y) - zeta(Y)).max() <= 1e-12
    assert np.allclose(rank_one_apply(RankOne(zeta, y0), y0 * 0.0)(Y), 0.0)


def test_rank_one_kills_orthogonal_sections():
    s = tent()
    eta = Section.constant(s, 1, [1.0, 1.0])
    zeta = Section.constant(s, 1, [1.0, -1.0])
    xi = random_section(s, 1, 0)
    assert np.allclose(rank_one_apply(RankOne(xi, eta), zeta)(Y1), 0.0)


def test_right_action_is_left_action_of_pulled_back_function():
    s = sierpinski()
    Y = s.sample(20, rng=2)
    xi = random_section(s, 2, 7)
    a = _a()
    lhs = right_action(xi, a)(Y)
    rhs = left_action(alpha_endo(s, a, 2), xi)(Y)
    assert np.abs(lhs - rhs).max() <= 1e-9
    assert np.allclose(alpha_endo(s, a, 0)(Y), a(Y))


def test_jx_examples():
    br = compute_branch_data(tent())
    assert in_jx(TestFunction(lambda X: (X[:, 0] - 0.5) ** 2), br)
    assert not in_jx(constant(1.0), br)
