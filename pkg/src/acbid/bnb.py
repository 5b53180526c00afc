"""Branch-and-bound over conic relaxations for mixed-binary conic programs.

The driver is generic: binaries are relaxed to their boxes and re-bounded per
node; declared one-hot groups get SOS-style branching (fixing a member to 1
zeroes its siblings). The continuous subproblem solver is pluggable and
defaults to the interior-point backend.
"""

from __future__ import annotations

import heapq
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import backend
from .backend import SolverConfig
from .program import ConicProgram

log = logging.getLogger("acbid.bnb")


@dataclass
class BnBConfig:
    rel_gap: float = 1e-6
    abs_gap: float = 1e-8
    max_nodes: int = 20000
    time_limit_s: float | None = None
    node_order: str = "best"  # "best" | "dfs"
    branching: str = "pseudo"  # "pseudo" | "most_fractional"
    int_tol: float = 1e-6
    solver: SolverConfig = field(default_factory=SolverConfig)

    def validate(self):
        if self.rel_gap < 0 or self.abs_gap < 0:
            raise ValueError("gaps must be nonnegative")


@dataclass
class SolveResult:
    status: str  # optimal | feasible | infeasible | unbounded | failed
    objective: float | None
    bound: float | None
    x: np.ndarray | None
    gap: float | None
    node_count: int
    wall_time: float
    log_lines: list = field(default_factory=list)

    def value(self, prog: ConicProgram, name) -> float:
        return float(self.x[prog.var_index[name]])


def _groups_of(prog: ConicProgram):
    grouped = set()
    groups = []
    for g in prog.onehot_groups:
        groups.append(list(g))
        grouped.update(g)
    for i in prog.binaries():
        if i not in grouped:
            groups.append([i])
    return groups


def _fractionals(x, binaries, tol):
    out = {}
    for i in binaries:
        v = x[i]
        f = min(abs(v), abs(1.0 - v))
        if f > tol:
            out[i] = f
    return out


def warm_hint(prog: ConicProgram, fixings: dict[int, float], config: BnBConfig | None = None):
    """Evaluate a candidate binary assignment by one continuous solve.

    Returns (objective, x) if the fixing is feasible, else None (hint ignored).
    """
    cfg = config or BnBConfig()
    bounds = {i: (v, v) for i, v in fixings.items()}
    res = backend.solve_continuous(prog, node_bounds=bounds, config=cfg.solver)
    if res.status != backend.OPTIMAL:
        return None
    return res.objective, res.x


def branch_and_bound(
    prog: ConicProgram,
    config: BnBConfig | None = None,
    warm: tuple[float, np.ndarray] | None = None,
) -> SolveResult:
    """Solve the mixed-binary conic program to the configured gap.

    Returns an incumbent with certified gap <= rel_gap, or the best found
    solution with the achieved gap when node/time limits are hit. All keys are
    handled in minimization form internally; max programs are negated.
    """
    cfg = config or BnBConfig()
    cfg.validate()
    t0 = time.perf_counter()
    sign = 1.0 if prog.sense == "min" else -1.0
    binaries = prog.binaries()
    groups = _groups_of(prog)
    group_of = {i: gi for gi, g in enumerate(groups) for i in g}
    pseudo = [1.0] * len(groups)
    pseudo_n = [0] * len(groups)

    incumbent_key = np.inf
    incumbent_x = None
    if warm is not None:
        incumbent_key = sign * warm[0]
        incumbent_x = np.array(warm[1])

    lines = []
    node_count = 0
    counter = 0
    heap = []  # (order_key, counter, key, depth, bounds, group, var)

    def push(key, depth, bounds, gi, var):
        nonlocal counter
        counter += 1
        order_key = key if cfg.node_order == "best" else (-depth, key)
        heapq.heappush(heap, (order_key, counter, key, depth, bounds, gi, var))

    def open_bound(extra=None):
        keys = [e[2] for e in heap]
        if extra is not None:
            keys.append(extra)
        return min(keys) if keys else incumbent_key

    def gap_of(bound_key):
        if not np.isfinite(incumbent_key):
            return np.inf
        return abs(incumbent_key - bound_key) / (1.0 + abs(incumbent_key))

    def note(depth, bound_key):
        inc = sign * incumbent_key if np.isfinite(incumbent_key) else None
        g = gap_of(bound_key)
        line = (
            f"node={node_count} depth={depth} bound={sign * bound_key:.6f} "
            f"incumbent={'-' if inc is None else format(inc, '.6f')} "
            f"gap={'inf' if not np.isfinite(g) else format(g, '.3e')}"
        )
        lines.append(line)
        log.debug(line)

    def handle(res, depth, bounds, parent_key):
        """Incumbent update or enqueue for branching after a relaxation solve."""
        nonlocal incumbent_key, incumbent_x
        key = max(sign * res.objective, parent_key)  # bounds are monotone down the tree
        if key >= incumbent_key - cfg.abs_gap:
            return None
        fracs = _fractionals(res.x, binaries, cfg.int_tol)
        if not fracs:
            incumbent_key = key
            incumbent_x = np.array(res.x)
            return key
        gi = _pick_group(fracs, groups, group_of, pseudo, cfg.branching)
        members = [i for i in groups[gi] if i in fracs]
        var = max(members, key=lambda i: (fracs[i], -i))
        push(key, depth, bounds, gi, var)
        return key

    root = backend.solve_continuous(prog, config=cfg.solver)
    node_count = 1
    if root.status in (backend.INFEASIBLE, backend.UNBOUNDED):
        return SolveResult(root.status, None, None, None, None, 1, time.perf_counter() - t0, lines)
    if root.status != backend.OPTIMAL:
        return SolveResult("failed", None, None, None, None, 1, time.perf_counter() - t0, lines)
    handle(root, 0, {}, -np.inf)
    note(0, sign * root.objective)

    hit_limit = False
    while heap:
        if node_count >= cfg.max_nodes or (
            cfg.time_limit_s is not None and time.perf_counter() - t0 > cfg.time_limit_s
        ):
            hit_limit = True
            break
        _ok, _cnt, parent_key, depth, bounds, gi, var = heapq.heappop(heap)
        if parent_key >= incumbent_key - cfg.abs_gap:
            continue  # fathomed by a newer incumbent
        if gap_of(open_bound(parent_key)) <= cfg.rel_gap:
            push(parent_key, depth, bounds, gi, var)  # certified close enough
            break
        for fix in (1.0, 0.0):
            child = dict(bounds)
            child[var] = (fix, fix)
            if fix == 1.0 and len(groups[gi]) > 1:
                for j in groups[gi]:
                    if j != var:
                        child[j] = (0.0, 0.0)
            res = backend.solve_continuous(prog, node_bounds=child, config=cfg.solver)
            node_count += 1
            if res.status == backend.OPTIMAL:
                handle(res, depth + 1, child, parent_key)
                k = group_of[var]
                pseudo_n[k] += 1
                degr = max(sign * res.objective - parent_key, 0.0)
                pseudo[k] += (degr - pseudo[k]) / pseudo_n[k]
            elif res.status == backend.FAILED:
                raise RuntimeError(
                    f"continuous subproblem failed at node {node_count}: {res.status_raw} "
                    f"(r_prim={res.r_prim:.2e}, r_dual={res.r_dual:.2e})"
                )
            # infeasible children are fathomed
        note(depth, open_bound())

    wall = time.perf_counter() - t0
    bound_key = open_bound()
    if incumbent_x is None:
        status = "feasible" if hit_limit else "infeasible"
        return SolveResult(status, None, sign * bound_key if heap else None, None, None, node_count, wall, lines)
    gap = gap_of(bound_key)
    status = "feasible" if (hit_limit and gap > cfg.rel_gap) else "optimal"
    check = _fractionals(incumbent_x, binaries, cfg.int_tol)
    if check:
        raise RuntimeError(f"incumbent violates integrality at {sorted(check)}")
    return SolveResult(
        status=status,
        objective=sign * incumbent_key,
        bound=sign * bound_key,
        x=incumbent_x,
        gap=gap,
        node_count=node_count,
        wall_time=wall,
        log_lines=lines,
    )


def _pick_group(fracs, groups, group_of, pseudo, rule):
    cands = sorted({group_of[i] for i in fracs})
    if rule == "most_fractional":
        return max(cands, key=lambda gi: (max(fracs[i] for i in groups[gi] if i in fracs), -gi))
    return max(cands, key=lambda gi: (pseudo[gi], -gi))
