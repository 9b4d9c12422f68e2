"""Master-equation residuals and consistency checks."""
from __future__ import annotations

import numpy as np
import pytest

from masterlq import lq_model, master_verifier as mv, riccati
from masterlq.lq_model import scalar_model
from masterlq.master_verifier import (consistency_uncoupling, corrupt_P,
                                      eval_master_field, eval_value,
                                      mean_flow_ode, residual_master_mfc,
                                      residual_master_mfg_gradient,
                                      residual_master_mfg_scalar,
                                      seeded_state_panel, time_panel)

from conftest import make_asymmetric_2x2


@pytest.fixture(scope="module")
def panel():
    return seeded_state_panel(1, 64, 3)


# ---------------------------------------------------------------------------
# value / field evaluation

def test_eval_value_terminal_equals_terminal_cost(scalar_coupled, sol_coupled_mfc):
    X = seeded_state_panel(1, 32, 1)
    V = eval_value(sol_coupled_mfc, X, scalar_coupled.T)
    yb = X.mean(axis=0)
    h = np.mean([lq_model.terminal_cost(x, yb, scalar_coupled) for x in X])
    assert V == pytest.approx(h, abs=1e-10)


def test_eval_value_zero_solution():
    m = scalar_model(R=1.0, T=1.0)
    sol = riccati.solve_mfc(m, riccati.TimeGrid(1.0, 100))
    X = seeded_state_panel(1, 16, 2)
    assert eval_value(sol, X, 0.5) == 0.0


def test_eval_value_scalar_lqr(sol_lqr):
    X = seeded_state_panel(1, 1000, 4)
    V = eval_value(sol_lqr, X, 0.0)
    assert V == pytest.approx(0.5 * np.tanh(1.0) * np.mean(X ** 2), rel=1e-8)


def test_master_field_linear_form(scalar_coupled, sol_coupled_mfc, panel):
    U = eval_master_field(sol_coupled_mfc, panel, 0.3)
    ev = riccati.eval_at(sol_coupled_mfc, 0.3)
    expect = panel @ ev["P"].T + panel.mean(axis=0) @ ev["Sigma"].T
    assert np.array_equal(U, expect)


def test_master_field_is_lifted_value_gradient(scalar_coupled, sol_coupled_mfc):
    # finite-difference gradient of eval_value in particle i = U_i / N
    X = seeded_state_panel(1, 64, 5)
    t = 0.4
    U = eval_master_field(sol_coupled_mfc, X, t)
    h = 1e-6
    for i in (0, 17, 63):
        Xp, Xm = X.copy(), X.copy()
        Xp[i] += h
        Xm[i] -= h
        fd = (eval_value(sol_coupled_mfc, Xp, t) - eval_value(sol_coupled_mfc, Xm, t)) / (2 * h)
        assert abs(fd - U[i, 0] / len(X)) / max(abs(fd), 1e-12) < 1e-6


# ---------------------------------------------------------------------------
# MFC master residual

def test_mfc_residual_small_on_panel(scalar_coupled, sol_coupled_mfc, panel):
    for t in time_panel(scalar_coupled.T):
        r = residual_master_mfc(scalar_coupled, sol_coupled_mfc, panel, t)
        assert r["residual_norm"] <= 1e-6


def test_mfc_residual_zero_model(panel):
    m = scalar_model(R=1.0, sigma=0.3, T=1.0)
    sol = riccati.solve_mfc(m, riccati.TimeGrid(1.0, 200))
    r = residual_master_mfc(m, sol, panel, 0.5)
    assert r["residual_norm"] == 0.0


def test_mfc_second_derivative_terms_identically_zero(scalar_coupled, sol_coupled_mfc, panel):
    r = residual_master_mfc(scalar_coupled, sol_coupled_mfc, panel, 0.25)
    assert r["term_breakdown"]["second_derivative_terms"] == 0.0


def test_mfc_residual_detects_corruption(scalar_coupled, sol_coupled_mfc, panel):
    bad = corrupt_P(sol_coupled_mfc, 1e-3)
    r = residual_master_mfc(scalar_coupled, bad, panel, 0.5)
    assert r["residual_norm"] > 1e-4


def test_mfc_residual_kind_mismatch(scalar_coupled, sol_coupled_mfg, panel):
    with pytest.raises(ValueError):
        residual_master_mfc(scalar_coupled, sol_coupled_mfg, panel, 0.5)


# ---------------------------------------------------------------------------
# MFG residuals

def test_mfg_gradient_residual_small(scalar_coupled, sol_coupled_mfg, panel):
    for t in time_panel(scalar_coupled.T):
        r = residual_master_mfg_gradient(scalar_coupled, sol_coupled_mfg, panel, t)
        assert r["residual_norm"] <= 1e-6


def test_mfg_gradient_symmetry_violation_flagged(asymmetric_2x2):
    sol = riccati.solve_mfg(asymmetric_2x2, riccati.TimeGrid(1.0, 1000))
    X = seeded_state_panel(2, 32, 6)
    r = residual_master_mfg_gradient(asymmetric_2x2, sol, X, 0.5)
    assert r["symmetry_violation"] > 1e-6
    assert r["residual_norm"] <= 1e-6     # the ODEs are still satisfied


def test_mfg_gradient_symmetric_model_clean():
    m = scalar_model(A=0.1, B=1.0, Q=1.0, Qbar=0.5, R=1.0, QT=0.2,
                     QbarT=0.1, sigma=0.3, T=1.0)   # Abar=0, S=ST=0
    sol = riccati.solve_mfg(m, riccati.TimeGrid(1.0, 1000))
    X = seeded_state_panel(1, 32, 7)
    r = residual_master_mfg_gradient(m, sol, X, 0.5)
    assert r["symmetry_violation"] <= 1e-9
    assert r["residual_norm"] <= 1e-6


def test_mfg_scalar_residual_small(scalar_coupled, sol_coupled_mfg, panel):
    x = np.array([0.7])
    for t in time_panel(scalar_coupled.T):
        r = residual_master_mfg_scalar(scalar_coupled, sol_coupled_mfg, x, panel, t)
        assert abs(r["residual"]) <= 1e-6


def test_mfg_scalar_constant_term_identity():
    # beta=1, sigma=0: mu' + tr(P)/2 + tr(Gamma)/2 + tr(Sigma) = 0
    m = scalar_model(A=0.1, Abar=0.2, B=1.0, Q=1.0, Qbar=0.5, S=0.3, R=1.0,
                     QT=0.4, QbarT=0.2, ST=0.1, sigma=0.0, beta=1.0, T=1.0)
    sol = riccati.solve_mfg(m, riccati.TimeGrid(1.0, 2000))
    for k in (0, 500, 1500):
        lhs = (sol.dmu[k] + 0.5 * np.trace(sol.P[k]) + 0.5 * np.trace(sol.Gamma[k])
               + np.trace(sol.Sigma[k]))
        assert abs(lhs) < 1e-10


def test_mfg_scalar_terminal_residual_zero(scalar_coupled, sol_coupled_mfg, panel):
    t = scalar_coupled.T * (1 - 1e-9)
    r = residual_master_mfg_scalar(scalar_coupled, sol_coupled_mfg,
                                   np.array([1.3]), panel, t)
    assert abs(r["residual"]) < 1e-6


# ---------------------------------------------------------------------------
# MFG vs MFC divergence

def test_sigma_differs_between_kinds():
    m = scalar_model(A=0.0, Abar=1.0, B=1.0, Q=1.0, Qbar=1.0, S=1.0, R=1.0, T=1.0)
    g = riccati.TimeGrid(1.0, 1000)
    a = riccati.solve_mfc(m, g)
    b = riccati.solve_mfg(m, g)
    assert np.max(np.abs(a.Sigma - b.Sigma)) > 1e-6


# ---------------------------------------------------------------------------
# uncoupling along the mean flow

def test_uncoupling_mfg(crowd_mfg):
    sol = riccati.solve_mfg(crowd_mfg, riccati.TimeGrid(crowd_mfg.T, 2000))
    xp = np.linspace(-2, 2, 50)
    rep = consistency_uncoupling(crowd_mfg, sol, np.array([1.0]), xp)
    assert rep["max_residual"] <= 1e-6


def test_uncoupling_mfc(crowd_mfg):
    sol = riccati.solve_mfc(crowd_mfg, riccati.TimeGrid(crowd_mfg.T, 2000))
    xp = np.linspace(-2, 2, 50)
    rep = consistency_uncoupling(crowd_mfg, sol, np.array([1.0]), xp)
    assert rep["max_residual"] <= 1e-6


def test_uncoupling_rejects_common_noise(scalar_coupled, sol_coupled_mfg):
    with pytest.raises(ValueError):
        consistency_uncoupling(scalar_coupled, sol_coupled_mfg,
                               np.array([1.0]), np.linspace(-1, 1, 5))


def test_mean_flow_ode_exponential():
    # no control influence: ydot = A y
    m = scalar_model(A=0.5, R=1.0, T=1.0)
    sol = riccati.solve_mfc(m, riccati.TimeGrid(1.0, 1000))
    flow = mean_flow_ode(m, sol, np.array([1.0]), riccati.TimeGrid(1.0, 1000))
    assert flow[-1, 0] == pytest.approx(np.exp(0.5), rel=1e-10)


# ---------------------------------------------------------------------------
# infrastructure

def test_time_panel_layout():
    tp = time_panel(2.0)
    assert tp[0] == 0.0 and tp[2] == 1.0
    assert tp[-1] < 2.0


def test_state_panel_reproducible():
    a = seeded_state_panel(2, 16, 9)
    b = seeded_state_panel(2, 16, 9)
    assert np.array_equal(a, b)
    assert a.shape == (16, 2)
