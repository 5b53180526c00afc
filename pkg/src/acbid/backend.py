"""Continuous conic subproblem solver backing every solve in the package.

The contract: given a ConicProgram with integrality relaxed, return a
KKT-satisfying primal-dual pair within tolerance, or an infeasible/unbounded
certificate. The implementation delegates to Clarabel, an interior-point
solver for the standard form  min q'x  s.t.  Ax + s = b, s in K.

Equality rows map to the zero cone, <=-rows (including variable bounds and
branch-and-bound node bounds) to the nonnegative cone, and each SOC block
||Fx[1:]|| <= Fx[0] to a second-order cone via A = -F, b = g. Clarabel's dual
satisfies q + A'z = 0, so the returned multipliers are exactly the Lagrange
multipliers of the rows in program order.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import clarabel
import numpy as np
from scipy import sparse

from .program import ConicProgram

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
FAILED = "failed"

_STATUS = {
    "Solved": OPTIMAL,
    "AlmostSolved": OPTIMAL,
    "PrimalInfeasible": INFEASIBLE,
    "AlmostPrimalInfeasible": INFEASIBLE,
    "DualInfeasible": UNBOUNDED,
    "AlmostDualInfeasible": UNBOUNDED,
}


@dataclass
class ContinuousResult:
    status: str
    objective: float | None
    x: np.ndarray | None
    # multipliers, aligned with the program's canonical row order
    eq_duals: np.ndarray | None
    ineq_duals: dict | None  # row label -> multiplier (explicit rows, bounds, node bounds)
    soc_duals: list | None  # per block, array aligned with its entries (head first)
    solve_time: float = 0.0
    iterations: int = 0
    status_raw: str = ""
    r_prim: float = 0.0
    r_dual: float = 0.0

    def value(self, prog: ConicProgram, name: tuple) -> float:
        return float(self.x[prog.var_index[name]])

    def eq_dual(self, prog: ConicProgram, label: tuple) -> float:
        return float(self.eq_duals[prog.eq_labels.index(label)])


@dataclass
class SolverConfig:
    tol: float = 1e-9
    max_iter: int = 200
    time_limit_s: float = 0.0  # 0 = no limit
    verbose: bool = False


def _settings(cfg: SolverConfig):
    s = clarabel.DefaultSettings()
    s.verbose = cfg.verbose
    s.tol_gap_abs = cfg.tol
    s.tol_gap_rel = cfg.tol
    s.tol_feas = cfg.tol
    s.max_iter = cfg.max_iter
    if cfg.time_limit_s:
        s.time_limit = cfg.time_limit_s
    return s


def solve_continuous(
    prog: ConicProgram,
    node_bounds: dict[int, tuple[float, float]] | None = None,
    config: SolverConfig | None = None,
) -> ContinuousResult:
    """Solve the program with binaries relaxed to their box bounds.

    node_bounds maps variable index -> (lo, hi) overrides added as extra rows;
    the base matrices are cached on the program so branch-and-bound re-solves
    only re-stack the override rows.
    """
    cfg = config or SolverConfig()
    prog.validate()
    t0 = time.perf_counter()

    cache = getattr(prog, "_backend_cache", None)
    if cache is None:
        A_eq, b_eq, A_in, b_in, soc_mats = prog.matrices()
        n_base_in = A_in.shape[0]
        blocks = [A_eq, A_in] + [-F for F, _g in soc_mats]
        rhs = [b_eq, b_in] + [g for _F, g in soc_mats]
        cones = [clarabel.ZeroConeT(A_eq.shape[0]), clarabel.NonnegativeConeT(n_base_in)]
        cones += [clarabel.SecondOrderConeT(F.shape[0]) for F, _g in soc_mats]
        cache = (blocks, rhs, cones, n_base_in, len(b_eq))
        prog._backend_cache = cache
    blocks, rhs, cones, n_base_in, m_eq = cache

    extra_labels = []
    if node_bounds:
        data, ri, ci, brow = [], [], [], []
        r = 0
        for i, (lo, hi) in sorted(node_bounds.items()):
            if np.isfinite(lo):
                ri.append(r)
                ci.append(i)
                data.append(-1.0)
                brow.append(-lo)
                extra_labels.append(("node_lb", prog.var_names[i]))
                r += 1
            if np.isfinite(hi):
                ri.append(r)
                ci.append(i)
                data.append(1.0)
                brow.append(hi)
                extra_labels.append(("node_ub", prog.var_names[i]))
                r += 1
        A_node = sparse.csc_matrix((data, (ri, ci)), shape=(r, prog.n_vars))
        all_blocks = [blocks[0], blocks[1], A_node] + blocks[2:]
        all_rhs = [rhs[0], rhs[1], np.array(brow)] + rhs[2:]
        all_cones = [cones[0], clarabel.NonnegativeConeT(n_base_in + r)] + cones[2:]
    else:
        all_blocks, all_rhs, all_cones = blocks, rhs, cones

    A = sparse.vstack(all_blocks, format="csc")
    b = np.concatenate(all_rhs)
    q = prog.obj_vector()
    sign = 1.0
    if prog.sense == "max":
        sign = -1.0
        q = -q
    P = sparse.csc_matrix((prog.n_vars, prog.n_vars))

    solver = clarabel.DefaultSolver(P, q, A, b, all_cones, _settings(cfg))
    sol = solver.solve()
    raw = str(sol.status)
    status = _STATUS.get(raw, FAILED)
    wall = time.perf_counter() - t0

    if status != OPTIMAL:
        return ContinuousResult(
            status=status, objective=None, x=None, eq_duals=None, ineq_duals=None,
            soc_duals=None, solve_time=wall, iterations=sol.iterations, status_raw=raw,
            r_prim=sol.r_prim, r_dual=sol.r_dual,
        )

    x = np.asarray(sol.x)
    z = np.asarray(sol.z)
    eq_duals = z[:m_eq]
    n_node = len(extra_labels)
    in_z = z[m_eq : m_eq + n_base_in + n_node]
    ineq_duals = {}
    for k, (label, _t, _r) in enumerate(prog.all_ineq()):
        ineq_duals[label] = float(in_z[k])
    for k, label in enumerate(extra_labels):
        ineq_duals[label] = float(in_z[n_base_in + k])
    soc_duals = []
    off = m_eq + n_base_in + n_node
    for blk in prog.socs:
        k = len(blk.entries)
        soc_duals.append(z[off : off + k].copy())
        off += k

    # duals follow the minimization convention: q_solved + A'z = 0 where
    # q_solved = -q for max-sense programs
    objective = sign * float(sol.obj_val) + prog.obj_const
    return ContinuousResult(
        status=OPTIMAL,
        objective=objective,
        x=x,
        eq_duals=eq_duals,
        ineq_duals=ineq_duals,
        soc_duals=soc_duals,
        solve_time=wall,
        iterations=sol.iterations,
        status_raw=raw,
        r_prim=sol.r_prim,
        r_dual=sol.r_dual,
    )


def invalidate_cache(prog: ConicProgram):
    if hasattr(prog, "_backend_cache"):
        del prog._backend_cache
