"""Experiment orchestration: mesh size x number of subdomains x solver.

Every number written here comes from the library modules; this file only
wires them together and serializes the results as CSV and JSON.
"""
import csv
import json
import re
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .elasticity import LoadSpec, assemble_system, hooke_plane_stress, solve_monolithic
from .errors import AdmissibilityViolation, ConfigError
from .estimator import (RecoveryPipeline, ReferenceSolution, estimate_at_iteration,
                        sequential_estimate, true_error)
from .mesh import build_gamma_mesh, partition_mesh
from .recovery import LIFT_MODES, balance_residual, continuity_residual
from .solvers import solve
from .substructuring import InterfaceComm, build_subdomains, operators_for

METHODS = ("bdd", "feti", "monolithic")


@dataclass
class ExperimentConfig:
    """Study matrix and physical data of a run."""
    m: list = field(default_factory=lambda: [2, 4, 8, 16, 32])
    nsd: list = field(default_factory=lambda: [2, 4, 8, 16, 32])
    method: list = field(default_factory=lambda: ["feti"])
    tol: float = 1e-6
    estimate_every: int = 1
    out: str = "results"
    E: float = 2000.0
    nu: float = 0.3
    traction: list = field(default_factory=lambda: [1.0, 1.0])
    body_force: list = field(default_factory=lambda: [0.0, 0.0])
    L: float = 1.0
    m_ref: int = 128
    map_iterations: list = field(default_factory=lambda: [1])
    lift: str = "nodal"
    max_iter: int = None
    admissibility_tol: float = 1e-8

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
        cfg = cls(**data)
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, path, **overrides):
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("configuration file must hold a JSON object")
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(data)

    def problems(self):
        """All validation failures, as messages."""
        out = []
        for name in ("m", "nsd", "method"):
            v = getattr(self, name)
            if not isinstance(v, (list, tuple)) or not v:
                out.append(f"{name} must be a nonempty list")
        if out:
            return out
        if any(not isinstance(m, int) or m < 1 for m in self.m):
            out.append("m entries must be positive integers")
        if any(not isinstance(n, int) or n < 1 for n in self.nsd):
            out.append("nsd entries must be positive integers")
        bad = [x for x in self.method if x not in METHODS]
        if bad:
            out.append(f"unknown method(s) {bad}; choose among {list(METHODS)}")
        if not (isinstance(self.tol, (int, float)) and self.tol > 0):
            out.append("tol must be positive")
        if not (isinstance(self.estimate_every, int) and self.estimate_every >= 1):
            out.append("estimate_every must be a positive integer")
        if not (self.E > 0 and -1.0 < self.nu < 0.5):
            out.append("material requires E > 0 and -1 < nu < 0.5")
        if not self.L > 0:
            out.append("L must be positive")
        if len(self.traction) != 2 or len(self.body_force) != 2:
            out.append("traction and body_force must have two components")
        if self.lift not in LIFT_MODES:
            out.append(f"lift must be one of {list(LIFT_MODES)}")
        if not out:
            for m in self.m:
                if self.m_ref % m:
                    out.append(f"m_ref={self.m_ref} is not a multiple of m={m}")
                if self.m_ref < 4 * m:
                    out.append(f"m_ref={self.m_ref} is below 4*m for m={m}")
        return out

    def validate(self):
        msgs = self.problems()
        if msgs:
            raise ConfigError("; ".join(msgs))
        return self

    def cells(self):
        """(m, nsd, method) runs, skipping partitions finer than the squares."""
        out = []
        for m in self.m:
            for method in self.method:
                if method == "monolithic":
                    continue
                for nsd in self.nsd:
                    if nsd <= 3 * m * m:
                        out.append((m, nsd, method))
        return out

    def hooke(self):
        return hooke_plane_stress(self.E, self.nu)

    def loads(self):
        return LoadSpec(tuple(self.body_force), tuple(self.traction))


@dataclass
class RunResult:
    m: int
    nsd: int
    method: str
    iterations: int
    history: list          # (n, r, e_para or None)
    final: object          # EstimateReport


def _write_csv(path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def _fmt(x):
    return "" if x is None else f"{x:.10e}"


def write_element_map(path, mesh, per_element):
    """CSV with columns elem_id, centroid_x, centroid_y, contribution."""
    c = mesh.centroids
    rows = [(k, _fmt(c[k, 0]), _fmt(c[k, 1]), _fmt(v)) for k, v in enumerate(per_element)]
    return _write_csv(Path(path), ["elem_id", "centroid_x", "centroid_y", "contribution"], rows)


def check_admissibility(report, ops, tol):
    nodal = report.nodal
    scale = max(max((np.max(np.abs(l), initial=0.0) for l in nodal.lam_b), default=0.0), 1.0)
    cont = continuity_residual(nodal, ops)
    bal = balance_residual(nodal, ops) / scale
    eq = report.diagnostics["eq_residual"]
    if cont > tol or bal > tol or eq > tol:
        raise AdmissibilityViolation(
            f"iteration {report.n}: continuity {cont:.2e}, balance {bal:.2e}, "
            f"element equilibrium {eq:.2e} above {tol:.1e}")


def run_cell(mesh, cfg, nsd, method, out_dir=None, log=print):
    """Solve one (mesh, nsd, method) case, estimating along the iterations."""
    hooke, loads = cfg.hooke(), cfg.loads()
    part = partition_mesh(mesh, nsd)
    subs = build_subdomains(mesh, part, hooke, loads)
    ops = operators_for(subs)
    pipe = RecoveryPipeline(mesh, part, subs, ops, hooke, loads, lift=cfg.lift)
    comm = InterfaceComm(ops)
    history, last = [], {}
    m = mesh.meta["m"]
    wanted_maps = set(cfg.map_iterations)

    def hook(state):
        rep = None
        if state.converged or (state.n >= 1 and state.n % cfg.estimate_every == 0):
            rep = estimate_at_iteration(state, pipe, comm)
            check_admissibility(rep, ops, cfg.admissibility_tol)
            last["report"] = rep
            if out_dir is not None and state.n in wanted_maps:
                write_element_map(out_dir / f"map_{method}_{m}_{nsd}_n{state.n}.csv",
                                  mesh, rep.per_element)
        history.append((state.n, state.r, None if rep is None else rep.e_cr))

    state = solve(method, subs, ops, tol=cfg.tol, hook=hook, max_iter=cfg.max_iter, comm=comm)
    final = last.get("report") or estimate_at_iteration(state, pipe, comm)
    log(f"  {method:4s} m={m:<3d} nsd={nsd:<3d} iterations={state.n:<3d} "
        f"e_para={final.e_cr:.4f}")
    return RunResult(m, nsd, method, state.n, history, final)


def run_experiment(config, log=print):
    """Run the study matrix and write every report file; returns their paths."""
    cfg = config.validate()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    hooke, loads = cfg.hooke(), cfg.loads()
    log(f"reference solution m_ref={cfg.m_ref}")
    reference = ReferenceSolution(cfg.m_ref, hooke, loads, cfg.L)
    files, rows = [], []
    para_cols = [f"{meth}_nsd{n}" for meth in cfg.method if meth != "monolithic"
                 for n in cfg.nsd]
    for m in cfg.m:
        mesh = build_gamma_mesh(m, cfg.L)
        u = solve_monolithic(assemble_system(mesh, hooke, loads))
        e_h = true_error(u, mesh, reference)
        seq = sequential_estimate(mesh, hooke, loads, u).with_true_error(e_h)
        log(f"m={m}: dofs={mesh.n_dofs} e_h={e_h:.4f} e_seq={seq.e_cr:.4f} "
            f"effectivity={seq.effectivity:.3f}")
        files.append(write_element_map(out / f"map_sequential_{m}.csv", mesh, seq.per_element))
        row = {"m": m, "h": cfg.L / m, "dofs": mesh.n_dofs, "e_h": e_h, "e_seq": seq.e_cr}
        for mm, nsd, method in cfg.cells():
            if mm != m:
                continue
            res = run_cell(mesh, cfg, nsd, method, out, log)
            row[f"{method}_nsd{nsd}"] = res.final.e_cr
            files.append(_write_csv(
                out / f"convergence_{method}_{m}_{nsd}.csv", ["n", "r", "e_para"],
                [(n, _fmt(r), _fmt(e)) for n, r, e in res.history]))
            files.append(write_element_map(out / f"map_{method}_{m}_{nsd}_final.csv",
                                           mesh, res.final.per_element))
            rep = res.final.with_true_error(e_h)
            d = rep.to_dict()
            d.update(m=m, nsd=nsd, history=[list(h) for h in res.history])
            path = out / f"report_{method}_{m}_{nsd}.json"
            path.write_text(json.dumps(d, indent=1))
            files.append(path)
        rows.append(row)
    header = ["m", "h", "dofs", "e_h", "e_seq"] + para_cols
    table = _write_csv(out / "table1.csv", header,
                       [[r["m"], _fmt(r["h"]), r["dofs"], _fmt(r["e_h"]), _fmt(r["e_seq"])]
                        + [_fmt(r.get(c)) for c in para_cols] for r in rows])
    (out / "config.json").write_text(json.dumps(asdict(cfg), indent=1))
    return [table] + files


# ----------------------------------------------------------------- summary

_PARA_COL = re.compile(r"^(?P<method>[a-z]+)_nsd(?P<nsd>\d+)$")


def stagnation_iteration(history, rel=0.01):
    """First iteration after which the estimate stays within ``rel`` of its final value."""
    est = [(n, e) for n, _, e in history if e is not None]
    if not est:
        return None
    final = est[-1][1]
    first = None
    for n, e in est:
        if abs(e - final) <= rel * final:
            if first is None:
                first = n
        else:
            first = None
    return first


def _read_history(path):
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            e = row.get("e_para") or ""
            out.append((int(row["n"]), float(row["r"]), float(e) if e else None))
    return out


def compare_reports(table_path, log=print):
    """Effectivities, parallel/sequential deviations and stagnation iterations.

    Reads ``table1.csv`` and the convergence files next to it.  Missing
    entries are skipped.
    """
    table_path = Path(table_path)
    summary = {"effectivity": {}, "deviation": {}, "stagnation": {}}
    with open(table_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        m = int(row["m"])
        e_h = float(row["e_h"]) if row.get("e_h") else None
        e_seq = float(row["e_seq"]) if row.get("e_seq") else None
        if e_h and e_seq is not None:
            summary["effectivity"][m] = e_seq / e_h
            log(f"m={m}: effectivity {e_seq / e_h:.3f}")
        for col, val in row.items():
            match = _PARA_COL.match(col or "")
            if not match or not val or e_seq is None:
                continue
            dev = float(val) / e_seq - 1.0
            key = f"{match['method']}_{m}_{match['nsd']}"
            summary["deviation"][key] = dev
            log(f"  {key}: deviation {100 * dev:+.2f}%")
            conv = table_path.parent / f"convergence_{key}.csv"
            if conv.exists():
                n = stagnation_iteration(_read_history(conv))
                summary["stagnation"][key] = n
                log(f"  {key}: estimate settled at iteration {n}")
    return summary


def max_abs_deviation(summary):
    vals = summary["deviation"].values()
    return max((abs(v) for v in vals), default=0.0)

