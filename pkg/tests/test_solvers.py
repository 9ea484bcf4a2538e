import csv

import numpy as np
import pytest

from helpers import gamma_case, relative_energy_error
from ddcre.errors import InvalidParameter, NonConvergence
from ddcre.solvers import CoarseSolver, bdd_solve, feti_solve, solve, write_history_csv


@pytest.mark.parametrize("method", ["bdd", "feti"])
@pytest.mark.parametrize("nsd", [2, 5, 12])
def test_converged_solution_matches_monolithic(method, nsd, hooke, loads):
    mesh, part, subs, ops, u = gamma_case(4, nsd, hooke, loads)
    state = solve(method, subs, ops, tol=1e-10)
    assert state.converged and state.r <= 1e-10
    assert relative_energy_error(subs, state.u_loc, u) <= 1e-8


@pytest.mark.parametrize("solver", [bdd_solve, feti_solve])
def test_hook_sees_every_iteration(solver, hooke, loads):
    _, _, subs, ops, _ = gamma_case(4, 6, hooke, loads)
    seen = []
    state = solver(subs, ops, tol=1e-8, hook=lambda s: seen.append((s.n, s.r)))
    assert [n for n, _ in seen] == list(range(state.n + 1))
    assert seen[0][1] == 1.0
    assert [(n, r) for n, r, _ in state.history] == seen


@pytest.mark.parametrize("method", ["bdd", "feti"])
def test_non_convergence_carries_state(method, hooke, loads):
    _, _, subs, ops, _ = gamma_case(4, 6, hooke, loads)
    with pytest.raises(NonConvergence) as info:
        solve(method, subs, ops, tol=1e-12, max_iter=2)
    assert info.value.state.n == 2
    assert len(info.value.history) == 3


def test_single_subdomain_is_immediately_converged(hooke, loads):
    _, _, subs, ops, u = gamma_case(2, 1, hooke, loads)
    for method in ("bdd", "feti"):
        state = solve(method, subs, ops)
        assert state.converged and state.n == 0
        assert relative_energy_error(subs, state.u_loc, u) <= 1e-12


def test_invalid_arguments(hooke, loads):
    _, _, subs, ops, _ = gamma_case(2, 2, hooke, loads)
    with pytest.raises(InvalidParameter):
        solve("cg", subs, ops)
    with pytest.raises(InvalidParameter):
        bdd_solve(subs, ops, tol=0.0)


def test_coarse_solver_drops_dependent_columns():
    rng = np.random.default_rng(0)
    G = rng.standard_normal((8, 3))
    G = np.column_stack([G, G[:, 0] + G[:, 1]])
    with pytest.warns(RuntimeWarning):
        cs = CoarseSolver(G.T @ G)
    rhs = G.T @ rng.standard_normal(8)
    x = cs.solve(rhs)
    assert np.allclose(G.T @ G @ x, rhs)


def test_feti_iterates_are_balanced(hooke, loads):
    _, _, subs, ops, _ = gamma_case(4, 6, hooke, loads)
    balances = []
    feti_solve(subs, ops, tol=1e-8, hook=lambda s: balances.append(s.balance))
    assert max(balances) <= 1e-10


def test_history_csv(tmp_path, hooke, loads):
    _, _, subs, ops, _ = gamma_case(2, 3, hooke, loads)
    state = feti_solve(subs, ops)
    path = write_history_csv(state, tmp_path / "h.csv")
    rows = list(csv.DictReader(open(path)))
    assert list(rows[0]) == ["method", "n", "r", "time"]
    assert len(rows) == state.n + 1
