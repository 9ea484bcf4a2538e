from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import operator_fixture as fx
from ddcre.elasticity import assemble_system, solve_monolithic
from ddcre.errors import AssemblyBug, FredholmViolation
from ddcre.mesh import build_gamma_mesh, partition_mesh
from ddcre.substructuring import (InterfaceComm, build_assembly_operators, build_subdomains,
                                  condensed_rhs, dump_operators_csv, interior_solve,
                                  neumann_schur_solve, operators_for, pseudo_inverse_apply,
                                  schur_apply, schur_dense, trace_operator)


def fixture_operators():
    return build_assembly_operators(fx.BOUNDARY_KEYS, fx.PRIMAL_ORDER, fx.DUAL_ORDER)


def test_fixture_operators_match_printed_matrices():
    ops = fixture_operators()
    for s in range(3):
        assert np.array_equal(ops.A[s].toarray(), fx.EXPECTED_A[s])
        assert np.array_equal(ops.B[s].toarray(), fx.EXPECTED_DUAL[s])
        sub = SimpleNamespace(n_b=3, idx_b=np.array(fx.BOUNDARY_POSITIONS[s]),
                              n_free=fx.N_LOCAL[s])
        assert np.array_equal(trace_operator(sub).toarray(), fx.EXPECTED_T[s])


def test_fixture_orthogonality_and_scaling():
    ops = fixture_operators()
    total = sum(ops.B[s] @ ops.A[s].T for s in range(3)).toarray()
    assert np.array_equal(total, np.zeros((6, 4)))
    ident = sum(ops.A[s] @ ops.A_scaled[s].T for s in range(3)).toarray()
    assert np.allclose(ident, np.eye(4))
    # the scaled dual operators give a projector, not the identity
    P = sum(ops.B[s] @ ops.B_scaled[s].T for s in range(3)).toarray()
    assert np.allclose(P @ P, P)
    # rank = sum over interface nodes of (multiplicity - 1)
    assert np.isclose(np.trace(P), sum(m - 1 for m in ops.multiplicity))


def test_bad_orderings_are_rejected():
    with pytest.raises(AssemblyBug):
        build_assembly_operators(fx.BOUNDARY_KEYS, ["G1", "G2", "G3"])
    with pytest.raises(AssemblyBug):
        build_assembly_operators(fx.BOUNDARY_KEYS, fx.PRIMAL_ORDER, fx.DUAL_ORDER[:-1])


@pytest.fixture(scope="module")
def gamma8(hooke, loads):
    mesh = build_gamma_mesh(4)
    part = partition_mesh(mesh, 6)
    subs = build_subdomains(mesh, part, hooke, loads)
    return mesh, part, subs, operators_for(subs)


@settings(max_examples=15, deadline=None)
@given(st.integers(2, 4), st.data())
def test_operator_identities_on_random_partitions(m, data):
    from ddcre.elasticity import LoadSpec, hooke_plane_stress
    mesh = build_gamma_mesh(m)
    nsd = data.draw(st.integers(1, 3 * m * m))
    subs = build_subdomains(mesh, partition_mesh(mesh, nsd), hooke_plane_stress(2000, 0.3),
                            LoadSpec())
    ops = operators_for(subs)
    if ops.n_primal == 0:
        return
    orth = sum(ops.B[s] @ ops.A[s].T for s in range(nsd))
    assert abs(orth).max() == 0
    ident = sum(ops.A[s] @ ops.A_scaled[s].T for s in range(nsd)).toarray()
    assert np.allclose(ident, np.eye(ops.n_primal))


def test_rigid_mode_counts(gamma8):
    _, _, subs, _ = gamma8
    for sd in subs:
        expected = 0 if len(sd.dirichlet) else 3
        assert sd.n_modes == expected
        assert np.linalg.norm(sd.K @ sd.R) <= 1e-10 * abs(sd.K).max()


def test_schur_apply_matches_dense(gamma8):
    _, _, subs, _ = gamma8
    rng = np.random.default_rng(3)
    for sd in subs:
        x = rng.standard_normal(sd.n_b)
        S = schur_dense(sd)
        assert np.allclose(schur_apply(sd, x), S @ x)
        assert np.allclose(S, S.T, atol=1e-9 * abs(S).max())


def test_pseudo_inverse_solves_balanced_problems(gamma8):
    _, _, subs, _ = gamma8
    rng = np.random.default_rng(4)
    for sd in subs:
        rhs = rng.standard_normal(sd.n_free)
        if sd.n_modes:
            rhs -= sd.R @ (sd.R.T @ rhs)
        x = pseudo_inverse_apply(sd, rhs)
        assert np.allclose(sd.K @ x, rhs, atol=1e-9 * np.linalg.norm(rhs))
        if sd.n_modes:
            with pytest.raises(FredholmViolation):
                pseudo_inverse_apply(sd, rhs + sd.R[:, 0])
            r_b = rng.standard_normal(sd.n_b)
            r_b -= sd.R_b @ np.linalg.lstsq(sd.R_b, r_b, rcond=None)[0]
            z = neumann_schur_solve(sd, r_b)
            assert np.allclose(schur_apply(sd, z), r_b, atol=1e-8 * np.linalg.norm(r_b))


def test_monolithic_trace_solves_interface_problem(gamma8, hooke, loads):
    mesh, _, subs, ops = gamma8
    u = solve_monolithic(assemble_system(mesh, hooke, loads))
    total = np.zeros(ops.n_primal)
    for s, sd in enumerate(subs):
        dofs = (2 * sd.nodes[:, None] + np.arange(2)).ravel()[sd.free]
        u_b = u[dofs][sd.idx_b]
        lam = schur_apply(sd, u_b) - condensed_rhs(sd)
        total += ops.A[s] @ lam
        assert np.allclose(interior_solve(sd, u_b), u[dofs][sd.idx_i], atol=1e-12)
    assert np.max(np.abs(total)) <= 1e-10


def test_interface_comm_counts(gamma8):
    _, _, subs, ops = gamma8
    comm = InterfaceComm(ops)
    loc = [np.ones(sd.n_b) for sd in subs]
    g = comm.assemble_primal(loc)
    assert np.allclose(g, ops.multiplicity)
    assert np.allclose(comm.assemble_primal(loc, scaled=True), 1.0)
    assert np.allclose(comm.assemble_dual(loc), 0.0)
    assert comm.sum_scalars([0.1] * 10) == 1.0
    assert comm.counts == {"assemble_primal": 2, "assemble_dual": 1, "dot": 0,
                           "sum_scalars": 1}
    comm.reset()
    assert all(v == 0 for v in comm.counts.values())


def test_dump_operators(tmp_path):
    ops = fixture_operators()
    dump_operators_csv(ops, tmp_path)
    assert len(list(tmp_path.glob("*.csv"))) >= 6
