"""Explicit dual of the relaxed market clearing program, plus duality certificates.

The dual is generated by transposing the exact row/column tables of the primal
program (one source of truth for every coefficient): one free multiplier per
equality row, one nonnegative multiplier per inequality row, and one dual cone
block per second-order cone. For a minimization primal

    min c'x  s.t.  A_eq x = b_eq,  A_in x <= b_in,  F_k x in SOC_k,

the generated dual is

    max  -b_eq' lam - b_in' mu   s.t.   c + A_eq' lam + A_in' mu - sum_k F_k' u_k = 0,
         mu >= 0,  u_k in SOC_k,

so the stationarity row of each primal variable is that variable's dual
constraint, and solver multipliers of the primal coincide with (lam, mu, u)
at any optimal pair.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from . import backend
from .program import ConicProgram, label_str


class DualError(ValueError):
    pass


@dataclass
class DualInfo:
    """Bookkeeping produced while transposing a primal program."""

    eq_dual_names: list = field(default_factory=list)  # per primal eq row
    ineq_dual_names: list = field(default_factory=list)  # per primal ineq row (incl bounds)
    cone_dual_names: list = field(default_factory=list)  # per soc block: [head, tails...]
    stat_labels: dict = field(default_factory=dict)  # primal var name -> stat row label
    obj_terms: list = field(default_factory=list)  # [(dual var name, coef)] of the max objective


def dualize(prog: ConicProgram, into: ConicProgram | None = None) -> tuple[ConicProgram, DualInfo]:
    """Transpose a minimization program into its explicit dual.

    With `into` given, dual variables/rows are emitted into that program
    (shared variable space for the primal-dual closed form) instead of a
    fresh maximization program.
    """
    if prog.sense != "min":
        raise DualError("dualize expects a minimization program")
    if prog.has_finite_bounds():
        raise DualError("primal program must carry bounds as explicit rows to be dualized")
    if prog.binaries():
        raise DualError("cannot dualize a program with binaries")

    target = into if into is not None else ConicProgram("max")
    info = DualInfo()
    stat_terms: dict[int, list] = defaultdict(list)  # primal var idx -> terms

    for k, lab in enumerate(prog.eq_labels):
        name = ("lam",) + lab
        lam = target.var(name)
        info.eq_dual_names.append(name)
        if prog.eq_rhs[k] != 0.0:
            info.obj_terms.append((name, -prog.eq_rhs[k]))
        for col, v in prog.eq_terms[k]:
            stat_terms[col].append((lam, v))
    for lab, terms, rhs in zip(prog.ineq_labels, prog.ineq_terms, prog.ineq_rhs):
        name = ("mu",) + lab
        mu = target.var(name, lb=0.0)
        info.ineq_dual_names.append(name)
        if rhs != 0.0:
            info.obj_terms.append((name, -rhs))
        for col, v in terms:
            stat_terms[col].append((mu, v))
    for blk in prog.socs:
        names = [("coneh",) + blk.label] + [
            ("conet",) + blk.label + (e,) for e in range(1, len(blk.entries))
        ]
        idxs = [target.var(n) for n in names]
        info.cone_dual_names.append(names)
        for e, (terms, const) in enumerate(blk.entries):
            if const != 0.0:
                info.obj_terms.append((names[e], -const))
            for col, v in terms:
                stat_terms[col].append((idxs[e], -v))
        target.add_soc(("dcone",) + blk.label, [[(i, 1.0)] for i in idxs])

    obj = prog.obj_vector()
    for col in range(prog.n_vars):
        lab = ("stat",) + prog.var_names[col]
        target.add_eq(lab, stat_terms.get(col, []), -obj[col])
        info.stat_labels[prog.var_names[col]] = lab

    if into is None:
        for name, coef in info.obj_terms:
            target.add_obj(target[name], coef)
        target.obj_const = prog.obj_const
    return target, info


def build_dual(case, bids=None, flags=None) -> ConicProgram:
    """Explicit dual of the relaxed market clearing problem for the same inputs."""
    from .mcp_primal import build_mcp

    primal = build_mcp(case, bids, flags)
    dual, info = dualize(primal)
    if len(info.eq_dual_names) != len(primal.eq_labels) or len(info.ineq_dual_names) != len(
        list(primal.all_ineq())
    ):
        raise DualError("dual/primal dimension mismatch")
    dual.meta = {"kind": "mcp_dual", "case": case, "flags": flags, "bids": bids, "info": info}
    return dual


@dataclass
class DualVector:
    status: str
    objective: float | None
    values: dict = field(default_factory=dict)  # dual var name -> value
    solver: dict = field(default_factory=dict)

    def value(self, name) -> float:
        return self.values[name]

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "objective": self.objective,
            "solver": self.solver,
            "values": {label_str(k): v for k, v in sorted(self.values.items(), key=str)},
        }


def solve_dual(dual_prog: ConicProgram, config=None) -> DualVector:
    res = backend.solve_continuous(dual_prog, config=config)
    vec = DualVector(
        status=res.status,
        objective=res.objective,
        solver={"status_raw": res.status_raw, "iterations": res.iterations, "solve_time_s": res.solve_time},
    )
    if res.status == backend.OPTIMAL:
        vec.values = {name: float(res.x[i]) for name, i in dual_prog.var_index.items()}
    return vec


def duality_gap(primal_objective: float, dual_objective: float) -> float:
    """Relative strong-duality gap |obj_P - obj_D| / (1 + |obj_P|)."""
    if primal_objective is None or dual_objective is None:
        raise DualError("duality_gap needs optimal objectives on both sides")
    return abs(primal_objective - dual_objective) / (1.0 + abs(primal_objective))


def crosscheck_solver_duals(
    primal_prog: ConicProgram,
    primal_result: backend.ContinuousResult,
    dual_vector: DualVector,
    tol: float = 1e-5,
) -> dict:
    """Per-family max |hand-built dual optimum - solver-reported multiplier|.

    Families with deviations above tol are flagged (duals of degenerate
    programs are nonunique), never failed here.
    """
    if primal_result.status != backend.OPTIMAL or dual_vector.status != backend.OPTIMAL:
        raise DualError("crosscheck needs an optimal primal result and dual vector")
    fams: dict[str, dict] = {}

    def feed(family, ours, theirs):
        # deviation relative to multiplier magnitude; absolute near zero
        dev = abs(ours - theirs) / (1.0 + max(abs(ours), abs(theirs)))
        f = fams.setdefault(family, {"max_dev": 0.0, "count": 0, "flagged": False})
        f["max_dev"] = max(f["max_dev"], dev)
        f["count"] += 1

    for k, lab in enumerate(primal_prog.eq_labels):
        name = ("lam",) + lab
        if name in dual_vector.values:
            feed(lab[0], float(primal_result.eq_duals[k]), dual_vector.values[name])
    for lab, _t, _r in primal_prog.all_ineq():
        name = ("mu",) + lab
        if name in dual_vector.values:
            feed(lab[0], primal_result.ineq_duals[lab], dual_vector.values[name])
    for f in fams.values():
        f["flagged"] = f["max_dev"] > tol
    return fams
