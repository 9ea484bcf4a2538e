"""One test per acceptance criterion, each printing a PASS/FAIL line.

Two criteria are known to be out of reach with the implemented method and
are marked as expected failures; the measured values are printed all the
same and the analysis lives in the design notes.
"""
import time
from types import SimpleNamespace

import numpy as np
import pytest

import operator_fixture as fx
from conftest import affine_field, record_criterion
from helpers import gamma_case, relative_energy_error
from ddcre.elasticity import LoadSpec, assemble_system, solve_monolithic
from ddcre.estimator import (RecoveryPipeline, ReferenceSolution, estimate_at_iteration,
                             sequential_estimate, true_error)
from ddcre.mesh import build_gamma_mesh, build_rect_mesh, partition_mesh
from ddcre.recovery import balance_residual, continuity_residual
from ddcre.solvers import solve
from ddcre.substructuring import (InterfaceComm, build_assembly_operators, build_subdomains,
                                  operators_for, trace_operator)

M_VALUES = [2, 4, 8, 16, 32]
NSD_VALUES = [2, 4, 8, 16, 32]
REFERENCE_EFFECTIVITY = {2: 2.43, 4: 2.70, 8: 2.84, 16: 2.96, 32: 2.98}


def valid_nsd(m):
    return [n for n in NSD_VALUES if n <= 3 * m * m]


@pytest.fixture(scope="session")
def study(hooke, loads):
    """Converged parallel estimates on the Gamma study matrix (FETI and BDD)."""
    t0 = time.perf_counter()
    reference = ReferenceSolution(128, hooke, loads)
    rows = {}
    for m in M_VALUES:
        mesh = build_gamma_mesh(m)
        u = solve_monolithic(assemble_system(mesh, hooke, loads))
        e_h = true_error(u, mesh, reference)
        seq = sequential_estimate(mesh, hooke, loads, u)
        para = {}
        for nsd in valid_nsd(m):
            part = partition_mesh(mesh, nsd)
            subs = build_subdomains(mesh, part, hooke, loads)
            ops = operators_for(subs)
            pipe = RecoveryPipeline(mesh, part, subs, ops, hooke, loads)
            methods = ("feti", "bdd") if m <= 16 else ("feti",)
            for method in methods:
                state = solve(method, subs, ops, tol=1e-6)
                rep = estimate_at_iteration(state, pipe)
                e_ka = true_error(pipe.global_displacement(rep.pairs), mesh, reference)
                para[method, nsd] = (rep.e_cr, e_ka)
        rows[m] = SimpleNamespace(e_h=e_h, e_seq=seq.e_cr, para=para)
    return SimpleNamespace(rows=rows, seconds=time.perf_counter() - t0)


# 1 -----------------------------------------------------------------------

def test_criterion_01_operator_fixture():
    t0 = time.perf_counter()
    ops = build_assembly_operators(fx.BOUNDARY_KEYS, fx.PRIMAL_ORDER, fx.DUAL_ORDER)
    same = True
    for s in range(3):
        sub = SimpleNamespace(n_b=3, idx_b=np.array(fx.BOUNDARY_POSITIONS[s]),
                              n_free=fx.N_LOCAL[s])
        same &= np.array_equal(trace_operator(sub).toarray(), fx.EXPECTED_T[s])
        same &= np.array_equal(ops.A[s].toarray(), fx.EXPECTED_A[s])
        same &= np.array_equal(ops.B[s].toarray(), fx.EXPECTED_DUAL[s])
    orth = np.abs(sum(ops.B[s] @ ops.A[s].T for s in range(3)).toarray()).max()
    dt = time.perf_counter() - t0
    ok = bool(same) and orth == 0 and dt < 1.0
    record_criterion(1, ok, f"printed operators reproduced={bool(same)}, "
                            f"max|sum B A^T|={orth:.1e}, {dt:.3f}s")
    assert ok


# 2 -----------------------------------------------------------------------

def test_criterion_02_oracle_equivalence(hooke, loads):
    t0 = time.perf_counter()
    worst, cases = 0.0, 0
    for m in (2, 4, 8):
        for nsd in range(2, 9):
            if nsd > 3 * m * m:
                continue
            mesh, part, subs, ops, u = gamma_case(m, nsd, hooke, loads)
            for method in ("bdd", "feti"):
                state = solve(method, subs, ops, tol=1e-9)
                worst = max(worst, relative_energy_error(subs, state.u_loc, u))
                cases += 1
    dt = time.perf_counter() - t0
    ok = worst <= 1e-6 and dt < 30.0
    record_criterion(2, ok, f"{cases} cases, max relative energy error {worst:.2e}, {dt:.1f}s")
    assert ok


# 3 -----------------------------------------------------------------------

def test_criterion_03_admissibility_every_iteration(hooke, loads):
    mesh, part, subs, ops, _ = gamma_case(8, 8, hooke, loads)
    pipe = RecoveryPipeline(mesh, part, subs, ops, hooke, loads)
    worst = dict(continuity=0.0, balance=0.0, equilibrium=0.0, antisymmetry=0.0)
    iterations = {}

    def check(state):
        if state.n < 1:
            return
        rep = estimate_at_iteration(state, pipe)
        worst["continuity"] = max(worst["continuity"], continuity_residual(rep.nodal, ops))
        worst["balance"] = max(worst["balance"], balance_residual(rep.nodal, ops))
        worst["equilibrium"] = max(worst["equilibrium"], rep.diagnostics["eq_residual"],
                                   rep.diagnostics["element_balance"])
        fields = [p.tractions for p in rep.pairs]
        for (a, b), edges in pipe.topo.pairs.items():
            for e in edges:
                fa = fields[a].values[fields[a].lookup[e]]
                fb = fields[b].values[fields[b].lookup[e]]
                worst["antisymmetry"] = max(worst["antisymmetry"], float(np.abs(fa + fb).max()))

    for method in ("bdd", "feti"):
        iterations[method] = solve(method, subs, ops, tol=1e-6, hook=check).n
    ok = (worst["continuity"] <= 1e-10 and worst["balance"] <= 1e-10
          and worst["equilibrium"] <= 1e-8 and worst["antisymmetry"] <= 1e-10)
    record_criterion(3, ok, "iterations " + str(iterations) + ", worst "
                     + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))
    assert ok


# 4 -----------------------------------------------------------------------

def test_criterion_04_guaranteed_bound(study):
    worst = 0.0
    for m in (2, 4, 8, 16):
        row = study.rows[m]
        for (method, nsd), (e_para, e_ka) in row.para.items():
            worst = max(worst, row.e_h / e_para, e_ka / e_para)
    ok = worst <= 1.02 and study.seconds < 300
    record_criterion(4, ok, f"max e_h / e_para = {worst:.3f} (m <= 16, all nsd, both methods), "
                            f"study {study.seconds:.0f}s")
    assert ok


# 5 -----------------------------------------------------------------------

def test_criterion_05_effectivity_envelope(study):
    eff = {m: study.rows[m].e_seq / study.rows[m].e_h for m in M_VALUES}
    values = [eff[m] for m in M_VALUES]
    in_range = all(2.0 <= v <= 3.5 for v in values)
    increasing = all(b > a for a, b in zip(values, values[1:]))
    close = all(abs(eff[m] - REFERENCE_EFFECTIVITY[m]) <= 0.6 for m in M_VALUES)
    ok = in_range and increasing and close
    record_criterion(5, ok, "effectivities " + ", ".join(f"m={m}: {eff[m]:.2f}" for m in M_VALUES))
    assert ok


# 6 -----------------------------------------------------------------------

@pytest.mark.xfail(strict=True, reason="coarsest mesh with 8 subdomains deviates by about 7.8%")
def test_criterion_06_partition_insensitivity(study):
    per_m = {}
    for m in M_VALUES:
        row = study.rows[m]
        devs = {nsd: e / row.e_seq - 1.0 for (meth, nsd), (e, _) in row.para.items()
                if meth == "feti"}
        per_m[m] = max(devs.items(), key=lambda kv: abs(kv[1]))
    worst = max(abs(d) for _, d in per_m.values())
    ok = worst <= 0.07
    record_criterion(6, ok, "max |e_para/e_seq - 1| per m: " + ", ".join(
        f"m={m}: {100 * d:+.2f}% (nsd={n})" for m, (n, d) in per_m.items()))
    assert ok


# 7 -----------------------------------------------------------------------

def test_criterion_07_convergence_rate_ratios(study):
    ratios = {m: study.rows[m].e_h / study.rows[2 * m].e_h for m in (4, 8, 16)}
    ok = all(1.40 <= r <= 1.70 for r in ratios.values())
    record_criterion(7, ok, "e_h(m)/e_h(2m): " + ", ".join(
        f"m={m}: {r:.3f}" for m, r in ratios.items()))
    assert ok


# 8 -----------------------------------------------------------------------

@pytest.mark.xfail(strict=True, reason="estimator not yet within 1% at the residual thresholds")
def test_criterion_08_early_stagnation(hooke, loads):
    thresholds = {"feti": 5e-3, "bdd": 5e-1}
    lines, ok = [], True
    for m in (8, 16):
        mesh, part, subs, ops, _ = gamma_case(m, 8, hooke, loads)
        pipe = RecoveryPipeline(mesh, part, subs, ops, hooke, loads)
        for method, thr in thresholds.items():
            hist = []
            state = solve(method, subs, ops, tol=1e-6,
                          hook=lambda s: hist.append((s.n, s.r, estimate_at_iteration(s, pipe).e_cr
                                                      if s.n >= 1 else None)))
            final = hist[-1][2]
            n_thr, e_thr = next((n, e) for n, r, e in hist if n >= 1 and r <= thr)
            dev = e_thr / final - 1.0
            good = abs(dev) <= 0.01 and n_thr <= 8 and state.n <= 60
            ok &= good
            lines.append(f"{method} m={m}: n={n_thr} dev={100 * dev:+.2f}% total={state.n}")
    record_criterion(8, ok, "; ".join(lines))
    assert ok


# 9 -----------------------------------------------------------------------

def test_criterion_09_patch_test(hooke):
    mesh = build_rect_mesh(4, 4, 2.0, 2.0)
    linear = LoadSpec((0.0, 0.0), (0.0, 0.0), affine_field)
    values = {}
    for nsd in (1, 4):
        part = partition_mesh(mesh, nsd)
        subs = build_subdomains(mesh, part, hooke, linear)
        ops = operators_for(subs)
        pipe = RecoveryPipeline(mesh, part, subs, ops, hooke, linear)
        for method in ("feti", "bdd"):
            state = solve(method, subs, ops, tol=1e-12)
            values[method, nsd] = estimate_at_iteration(state, pipe).e_cr
    worst = max(values.values())
    ok = worst <= 1e-9
    record_criterion(9, ok, f"max e_para over nsd in (1, 4), both methods: {worst:.1e}")
    assert ok


# 10 ----------------------------------------------------------------------

def test_criterion_10_single_reduction(hooke, loads):
    mesh, part, subs, ops, _ = gamma_case(4, 6, hooke, loads)
    pipe = RecoveryPipeline(mesh, part, subs, ops, hooke, loads)
    comm = InterfaceComm(ops)
    counts = []

    def hook(state):
        if state.n >= 1:
            before = dict(comm.counts)
            estimate_at_iteration(state, pipe, comm)
            counts.append({k: comm.counts[k] - before[k] for k in before})

    for method in ("bdd", "feti"):
        solve(method, subs, ops, tol=1e-6, hook=hook, comm=comm)
    expected = {"assemble_primal": 0, "assemble_dual": 0, "dot": 0, "sum_scalars": 1}
    ok = bool(counts) and all(c == expected for c in counts)
    record_criterion(10, ok, f"{len(counts)} estimates, reductions per estimate {counts[0]}")
    assert ok
