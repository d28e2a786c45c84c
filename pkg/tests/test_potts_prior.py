import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import synth
from pottsseg import potts_prior as pp
from pottsseg.exact import enumerate_states, transfer_matrix_chain
from pottsseg.grid import Graph, build_grid

# u values inside the window where the constrained curve runs through
# fixed points that are unstable at fixed coupling
UNSTABLE_WINDOW = {5: (0.3907, 0.5334), 8: (0.3577, 0.5834)}


def test_zero_coupling_sweep_gives_uniform():
    g = build_grid(3, 3)
    rng = np.random.default_rng(0)
    m = rng.random((g.n_directed, 4))
    m /= m.sum(axis=1, keepdims=True)
    out = pp.prior_sweep(g, 4, 0.0, m)
    assert np.allclose(out, 0.25, atol=1e-15)


def test_uniform_messages_are_fixed():
    g = build_grid(4, 3)
    m = np.full((g.n_directed, 5), 0.2)
    assert np.allclose(pp.prior_sweep(g, 5, 2.7, m), 0.2, atol=1e-15)


def test_sweep_output_normalized():
    g = build_grid(4, 4, "periodic")
    rng = np.random.default_rng(1)
    m = rng.random((g.n_directed, 3))
    m /= m.sum(axis=1, keepdims=True)
    for _ in range(5):
        m = pp.prior_sweep(g, 3, 1.9, m, damping=0.5)
        assert np.abs(m.sum(axis=1) - 1).max() < 1e-12


def test_chain_of_eight_exact():
    g = Graph.chain(8)
    rep = pp.solve_prior_fixed_point(g, 3, 1.0, tol=1e-13)
    ex = enumerate_states(g, 3, 1.0)
    assert abs(rep.free_energy + ex.log_partition / 8) < 1e-9
    assert abs(rep.disagreement - ex.disagreement) < 1e-9


def test_chain_fixed_point_after_diameter_sweeps():
    # synchronous updates on a tree settle after as many sweeps as the diameter
    g = Graph.chain(8)
    m = np.full((g.n_directed, 3), 1 / 3)
    rng = np.random.default_rng(2)
    m = rng.random(m.shape)
    m /= m.sum(axis=1, keepdims=True)
    for _ in range(7):
        m = pp.prior_sweep(g, 3, 1.0, m)
    assert np.abs(pp.prior_sweep(g, 3, 1.0, m) - m).max() < 1e-15


def test_zero_coupling_free_energy():
    rep = pp.solve_prior_fixed_point(None, 5, 0.0)
    assert rep.free_energy == pytest.approx(-math.log(5), abs=1e-12)
    assert rep.disagreement == pytest.approx(0.8, abs=1e-15)


def test_periodic_lattice_matches_reduction():
    g = build_grid(8, 8, "periodic")
    for K, init in ((2.0, "uniform"), (2.6, "ordered"), (1.2, "ordered")):
        full = pp.solve_prior_fixed_point(g, 5, K, init=init, tol=1e-12)
        red = pp.solve_prior_fixed_point(None, 5, K, init=init, tol=1e-12)
        assert abs(full.disagreement - red.disagreement) < 1e-10
        assert abs(full.free_energy - red.free_energy) < 1e-10
        assert full.branch == red.branch


def test_branch_resolution_picks_lower_free_energy():
    below = pp.solve_prior_fixed_point(None, 5, 2.18, resolve_branch=True)
    above = pp.solve_prior_fixed_point(None, 5, 2.22, resolve_branch=True)
    assert below.branch == "disordered"
    assert above.branch == "ordered"
    dis, ordd = pp.both_branches(None, 5, 2.18)
    assert ordd.branch == "ordered" and ordd.free_energy > dis.free_energy


def test_label_permutation_symmetry():
    g = build_grid(4, 4, "periodic")
    rng = np.random.default_rng(3)
    m = rng.random((g.n_directed, 4))
    m /= m.sum(axis=1, keepdims=True)
    perm = rng.permutation(4)
    a = pp.solve_prior_fixed_point(g, 4, 2.4, init=m, tol=1e-12)
    b = pp.solve_prior_fixed_point(g, 4, 2.4, init=m[:, perm], tol=1e-12)
    assert abs(a.free_energy - b.free_energy) < 1e-12
    assert abs(a.disagreement - b.disagreement) < 1e-12


def test_reported_solution_survives_extra_sweep():
    g = build_grid(5, 5)
    rep = pp.solve_prior_fixed_point(g, 3, 2.5, init="ordered", tol=1e-10)
    again = pp.prior_sweep(g, 3, 2.5, rep.prob_messages)
    assert np.abs(again - rep.prob_messages).max() < 1e-10


def test_disordered_closed_form():
    for K in (0.0, 0.5, 1.7):
        rep = pp.solve_prior_fixed_point(None, 4, K)
        assert rep.disagreement == pytest.approx(pp.disordered_disagreement(4, K), abs=1e-15)


@pytest.mark.parametrize("q,u,alpha", [(5, 0.0155, 3.2218), (8, 0.3371, 2.5050)])
def test_alpha_examples(q, u, alpha):
    assert pp.solve_alpha_for_u(q, u) == pytest.approx(alpha, abs=0.02)


def test_alpha_of_uniform_value_is_zero():
    assert pp.solve_alpha_for_u(5, 0.8) == 0.0


@pytest.mark.parametrize("u", [0.0, -0.1, 0.81, 1.0])
def test_alpha_rejects_out_of_domain(u):
    with pytest.raises(ValueError):
        pp.solve_alpha_for_u(5, u)


def test_alpha_matches_ordered_branch_oracle():
    for q, u in ((5, 0.0155), (5, 0.1440), (5, 0.2775), (8, 0.0510), (8, 0.3371)):
        assert pp.solve_alpha_for_u(q, u, tol=1e-10) == pytest.approx(
            synth.alpha_on_ordered_branch(q, u), abs=1e-7)


def test_alpha_on_disordered_branch_closed_form():
    # above u at the instability coupling the uniform point is the solution
    for q, u in ((5, 0.6), (8, 0.7)):
        assert pp.solve_alpha_for_u(q, u, tol=1e-10) == pytest.approx(
            2 * math.log((q - 1) * (1 - u) / u), abs=1e-7)


def test_methods_agree_outside_unstable_window():
    tol = 1e-8
    lo, hi = UNSTABLE_WINDOW[5]
    for u in np.round(np.arange(0.05, 0.701, 0.05), 10):
        a = pp.solve_alpha(5, u, method="paper_multiplicative", tol=tol)
        if lo < u < hi:
            with pytest.raises(pp.ConvergenceError):
                pp.solve_alpha(5, u, method="bisection", tol=tol)
            assert abs(a.disagreement - u) < tol
            continue
        b = pp.solve_alpha(5, u, method="bisection", tol=tol)
        assert abs(a.alpha - b.alpha) < 2 * tol + 1e-7, u


def test_alpha_curve_shape():
    rows = pp.alpha_curve(5, [0.1, 0.3, 0.45, 0.6, 0.8, 0.9])
    us = [r[0] for r in rows]
    assert us == [0.1, 0.3, 0.45, 0.6, 0.8]
    alpha = dict((r[0], r[1]) for r in rows)
    assert alpha[0.1] > alpha[0.3]
    assert alpha[0.8] == 0.0


def test_alpha_monotone_on_stable_parts():
    for q in (5, 8):
        lo, hi = UNSTABLE_WINDOW[q]
        grid = [u for u in np.arange(0.02, (q - 1) / q, 0.02) if not lo - 0.02 < u < hi + 0.02]
        rows = pp.alpha_curve(q, grid)
        low = [a for u, a, _ in rows if u < lo]
        high = [a for u, a, _ in rows if u > hi]
        assert all(np.diff(low) < 0) and all(np.diff(high) < 0)


def test_alpha_curve_passes_through_unstable_segment():
    # inside the window the coupling dips below the transition point
    q = 5
    alpha = pp.solve_alpha_for_u(q, 0.45)
    assert alpha < synth.bethe_transition(q)
    _, u = synth.ordered_branch_point(q, 1.5)
    assert u == pytest.approx(pp.solve_alpha(q, u).disagreement, abs=1e-8)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.01, 0.35))
def test_alpha_roundtrip_property(u):
    sol = pp.solve_alpha(5, u, tol=1e-9)
    rep = pp.solve_prior_fixed_point(None, 5, sol.alpha, init="ordered", tol=1e-12)
    assert abs(rep.disagreement - u) < 1e-7


@pytest.mark.parametrize("q", [3, 5, 8])
def test_transition_matches_closed_form(q):
    res = pp.transition_point(q, tol=1e-7)
    assert res.kind == "first_order"
    assert res.K_C == pytest.approx(synth.bethe_transition(q), abs=1e-5)
    assert res.disagreement_jump > 0.05


def test_transition_q2_continuous():
    res = pp.transition_point(2)
    assert res.kind == "none_detected"
    assert res.K_C is None
    assert res.onset == pytest.approx(4 * math.atanh(1 / 3), abs=1e-6)


def test_instability_coupling_closed_form():
    for q in (2, 5, 8):
        assert pp.instability_coupling(q) == pytest.approx(2 * math.log((q + 2) / 2), abs=1e-7)


def test_transition_bracket_checked():
    with pytest.raises(ValueError):
        pp.transition_point(5, bracket=(0.0, 7.0))


def test_free_energy_curve_identity_and_kink():
    rows = pp.free_energy_curve(5, [0.0, 2.0, 2.19, 2.20, 2.4])
    assert rows[0][2] == pytest.approx(-0.2, abs=1e-12)
    assert rows[2][4] == "disordered" and rows[3][4] == "ordered"
    # the slope jumps by the disagreement jump, f itself barely moves
    assert abs(rows[3][2] - rows[2][2]) > 0.2
    assert abs(rows[3][1] - rows[2][1]) < 0.01
    assert pp.free_energy_curve(8, [0.0])[0][2] == pytest.approx(-1 / 8, abs=1e-12)


def test_free_energy_curve_rejects_descending():
    with pytest.raises(ValueError):
        pp.free_energy_curve(5, [1.0, 0.5])


def test_invalid_arguments():
    with pytest.raises(ValueError):
        pp.solve_prior_fixed_point(None, 1, 1.0)
    with pytest.raises(ValueError):
        pp.solve_prior_fixed_point(None, 3, -1.0)
    with pytest.raises(ValueError):
        pp.solve_prior_fixed_point(None, 3, 1.0, tol=0)
    with pytest.raises(ValueError):
        pp.solve_alpha(5, 0.3, method="newton")


def test_nonconvergence_reported():
    rep = pp.solve_prior_fixed_point(build_grid(6, 6), 2, 1.45, init="ordered", max_iter=3)
    assert not rep.converged
    assert rep.residual > 1e-9 and rep.iterations == 3


def test_tree_free_energy_vs_transfer_matrix():
    rep = pp.solve_prior_fixed_point(Graph.chain(10), 4, 2.2, init="ordered", tol=1e-13)
    ref = transfer_matrix_chain(10, 4, 2.2)
    assert abs(rep.free_energy * 10 + ref.log_partition) < 1e-9
