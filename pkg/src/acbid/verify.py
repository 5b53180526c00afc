"""Solution certification: cone tightness, voltage recovery, AC residuals,
complementarity, the lossless DC baseline, schedule cross-evaluation, and the
exhaustive bidding oracle.

The relaxed market clearing stands in for the nonconvex AC clearing when the
cone blocks are tight; recovered voltages plus AC residual evaluation certify
that substitution case by case.
"""

from __future__ import annotations

import itertools
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import backend
from .bidding import BidSchedule, ProfitBreakdown, breakdown_for
from .closedform import BidLevels, load_levels
from .mcp_primal import (
    Bids,
    BuildError,
    MarketOutcome,
    ScenarioFlags,
    _emit_gen_rows,
    _emit_load_rows,
    build_mcp,
    solve_mcp,
)
from .netcase import NetworkCase
from .program import ConicProgram, label_str


class VerifyError(ValueError):
    pass


# ---------------------------------------------------------------------------
# cone tightness and voltage recovery
# ---------------------------------------------------------------------------


@dataclass
class TightnessReport:
    tau: dict  # (bp, t) -> ratio
    min_tau: float
    mean_tau: float
    tight_tol: float = 1e-5

    def tight(self, bp, t) -> bool:
        return 1.0 - self.tau[(bp, t)] <= self.tight_tol

    def all_tight(self) -> bool:
        return 1.0 - self.min_tau <= self.tight_tol

    def to_dict(self):
        worst = min(self.tau, key=self.tau.get) if self.tau else None
        return {
            "min_tau": self.min_tau,
            "mean_tau": self.mean_tau,
            "tight_tol": self.tight_tol,
            "worst_pair": label_str(worst[0]) + f"@t{worst[1]}" if worst else None,
        }


def tightness_report(outcome: MarketOutcome, tight_tol: float = 1e-5) -> TightnessReport:
    """Ratio (c_ij^2 + s_ij^2) / (c_ii c_jj) per buspair and hour; 1 = exact."""
    case: NetworkCase = outcome.prog.meta["case"]
    prog, x = outcome.prog, outcome.result.x

    def val(name):
        return float(x[prog.var_index[name]])

    tau = {}
    for bp in case.buspairs():
        for t in range(case.horizon):
            num = val(("cij", bp, t)) ** 2 + val(("sij", bp, t)) ** 2
            den = val(("cii", bp[0], t)) * val(("cii", bp[1], t))
            tau[(bp, t)] = num / den
    vals = list(tau.values())
    return TightnessReport(tau, min(vals), float(np.mean(vals)), tight_tol)


def recover_voltages(outcome: MarketOutcome, tight_tol: float = 1e-5):
    """Bus voltage phasors (e, f) per hour from the lifted solution.

    Magnitudes come from sqrt(c_ii); angles propagate along a BFS spanning
    tree of tight buspairs using atan2(s_ij, c_ij), reference angle 0 at the
    first bus. Non-tight pairs are used only when the tight set does not span
    the network (best effort, with a warning).
    """
    case: NetworkCase = outcome.prog.meta["case"]
    prog, x = outcome.prog, outcome.result.x

    def val(name):
        return float(x[prog.var_index[name]])

    rep = tightness_report(outcome, tight_tol)
    volts = {b.id: [] for b in case.buses}
    warnings = []
    pairs = case.buspairs()
    for t in range(case.horizon):
        adj = {b.id: [] for b in case.buses}
        slack_adj = {b.id: [] for b in case.buses}
        for bp in pairs:
            i, j = bp
            target = adj if rep.tight(bp, t) else slack_adj
            target[i].append((j, bp, +1))
            target[j].append((i, bp, -1))
        theta = {case.buses[0].id: 0.0}
        queue = [case.buses[0].id]
        used_slack = False
        while queue:
            nxt = []
            for i in queue:
                for neighbors in (adj, slack_adj):
                    for j, bp, direction in neighbors[i]:
                        if j in theta:
                            continue
                        if neighbors is slack_adj:
                            used_slack = True
                        ang = math.atan2(val(("sij", bp, t)), val(("cij", bp, t)))
                        # theta_i - theta_j = atan2(s_ij, c_ij) along the pair orientation
                        theta[j] = theta[i] - direction * ang
                        nxt.append(j)
            queue = nxt
        missing = [b.id for b in case.buses if b.id not in theta]
        if missing:
            raise VerifyError(f"voltage recovery tree disconnected at hour {t}: {missing}")
        if used_slack:
            warnings.append(f"hour {t}: spanning tree required non-tight pairs")
        for b in case.buses:
            mag = math.sqrt(max(val(("cii", b.id, t)), 0.0))
            volts[b.id].append((mag * math.cos(theta[b.id]), mag * math.sin(theta[b.id])))
    return volts, warnings


def ac_residuals(outcome: MarketOutcome, volts) -> dict:
    """Nodal power mismatch (MW/MVAr) of the nonconvex flow equations at the
    recovered voltages, against the outcome's dispatches and demands."""
    case: NetworkCase = outcome.prog.meta["case"]
    base = case.base_mva
    prof = case.profile
    dp = {b.id: [] for b in case.buses}
    dq = {b.id: [] for b in case.buses}
    for t in range(case.horizon):
        inj_p = {b.id: 0.0 for b in case.buses}
        inj_q = {b.id: 0.0 for b in case.buses}
        for g in case.generators:
            inj_p[g.bus] += outcome.gen_p[g.id][t] / base
            inj_q[g.bus] += outcome.gen_q[g.id][t] / base
        for d in case.loads:
            inj_p[d.bus] -= sum(seg[t] for seg in outcome.load_p[d.id]) / base
            inj_q[d.bus] -= d.base_q * prof[t] / base
        for l in case.lines:
            ei, fi = volts[l.from_bus][t]
            ej, fj = volts[l.to_bus][t]
            g, b, bsh = l.g, l.b, l.b_sh
            cii = ei * ei + fi * fi
            cjj = ej * ej + fj * fj
            cij = ei * ej + fi * fj
            sij = ej * fi - fj * ei
            ps = g * cii - g * cij - b * sij
            pr = -g * cjj + g * cij - b * sij
            qs = -(b + bsh / 2.0) * cii + b * cij - g * sij
            qr = (b + bsh / 2.0) * cjj - b * cij - g * sij
            inj_p[l.from_bus] -= ps
            inj_q[l.from_bus] -= qs
            inj_p[l.to_bus] += pr
            inj_q[l.to_bus] += qr
        for bus in case.buses:
            dp[bus.id].append(inj_p[bus.id] * base)
            dq[bus.id].append(inj_q[bus.id] * base)
    max_p = max(abs(v) for series in dp.values() for v in series)
    max_q = max(abs(v) for series in dq.values() for v in series)
    return {"dp": dp, "dq": dq, "max_p_mw": max_p, "max_q_mvar": max_q}


# ---------------------------------------------------------------------------
# complementarity / KKT
# ---------------------------------------------------------------------------


def kkt_report(prog: ConicProgram, result: backend.ContinuousResult, tol: float = 1e-5) -> dict:
    """Scaled complementarity residual per inequality family plus cone blocks.

    Residual of row (a'x <= b, mu): |mu * (b - a'x)| / (1 + |b|); cones use
    |u'e| for the dual block u against the primal entries e.
    """
    if result.status != backend.OPTIMAL:
        raise VerifyError("kkt_report needs an optimal primal result")
    x = result.x
    fams: dict[str, dict] = {}

    def feed(name, val):
        f = fams.setdefault(name, {"max_residual": 0.0, "count": 0})
        f["max_residual"] = max(f["max_residual"], abs(val))
        f["count"] += 1

    for lab, terms, rhs in prog.all_ineq():
        mu = result.ineq_duals[lab]
        slack = rhs - sum(c * x[i] for i, c in terms)
        feed(lab[0], mu * slack / (1.0 + abs(rhs)))
    for k, blk in enumerate(prog.socs):
        u = result.soc_duals[k]
        e = [sum(c * x[i] for i, c in terms) + const for terms, const in blk.entries]
        feed("soc", float(np.dot(u, e)))
    for f in fams.values():
        f["pass"] = f["max_residual"] <= tol
    fams["_overall_pass"] = all(v["pass"] for k, v in fams.items() if not k.startswith("_"))
    return fams


# ---------------------------------------------------------------------------
# lossless DC baseline
# ---------------------------------------------------------------------------


def build_dcopf(case: NetworkCase, bids: Bids | None = None, flags: ScenarioFlags | None = None) -> ConicProgram:
    """Angle-based lossless clearing: same bids, segments, demand model and
    ramping as the relaxed AC program, no reactive power or voltages."""
    bids = bids or Bids()
    flags = flags or ScenarioFlags()
    bids.validate(case)
    base = case.base_mva
    T = case.horizon
    prof = case.profile
    prog = ConicProgram("min")

    for t in range(T):
        for g in case.generators:
            prog.var(("Pg", g.id, t))
            for u in range(len(g.segments)):
                prog.var(("Pgu", g.id, u, t))
        for d in case.loads:
            for z in range(len(d.segments)):
                prog.var(("Pd", d.id, z, t))
        for bus in case.buses:
            prog.var(("theta", bus.id, t))
        for l in case.lines:
            prog.var(("Fdc", l.id, t))
            prog.var(("Sdc", l.id, "+", t))
            prog.var(("Sdc", l.id, "-", t))

    for t in range(T):
        for g in case.generators:
            for u in range(len(g.segments)):
                prog.add_obj(prog[("Pgu", g.id, u, t)], bids.gen_price(g, u, t) * base)
        for d in case.loads:
            for z in range(len(d.segments)):
                prog.add_obj(prog[("Pd", d.id, z, t)], -bids.load_price(d, z, t) * base)

    _emit_gen_rows(prog, case, flags, base, T, include_q=False)
    _emit_load_rows(prog, case, flags, base, T, prof)

    for t in range(T):
        for l in case.lines:
            f = prog[("Fdc", l.id, t)]
            prog.add_eq(
                ("dcflow", l.id, t),
                [(f, 1.0), (prog[("theta", l.from_bus, t)], -1.0 / l.x), (prog[("theta", l.to_bus, t)], 1.0 / l.x)],
                0.0,
            )
            sp, sm = prog[("Sdc", l.id, "+", t)], prog[("Sdc", l.id, "-", t)]
            prog.add_eq(("split_dc", l.id, t), [(sp, 1.0), (sm, -1.0), (f, -1.0)], 0.0)
            prog.add_le(("split_nn_dc", l.id, "+", t), [(sp, -1.0)], 0.0)
            prog.add_le(("split_nn_dc", l.id, "-", t), [(sm, -1.0)], 0.0)
            prog.add_le(("thermal_dc", l.id, t), [(sp, 1.0), (sm, 1.0)], l.s_max / base)
        prog.add_eq(("ref", t), [(prog[("theta", case.buses[0].id, t)], 1.0)], 0.0)
        for bus in case.buses:
            terms = [(prog[("Pg", g.id, t)], 1.0) for g in case.generators if g.bus == bus.id]
            for d in case.loads:
                if d.bus == bus.id:
                    for z in range(len(d.segments)):
                        terms.append((prog[("Pd", d.id, z, t)], -1.0))
            for l in case.lines:
                if l.to_bus == bus.id:
                    terms.append((prog[("Fdc", l.id, t)], 1.0))
                if l.from_bus == bus.id:
                    terms.append((prog[("Fdc", l.id, t)], -1.0))
            prog.add_eq(("bal_p", bus.id, t), terms, 0.0)

    prog.meta = {"kind": "dcopf", "case": case, "flags": flags, "bids": bids}
    return prog


def dcopf_baseline(case: NetworkCase, bids: Bids | None = None, flags: ScenarioFlags | None = None,
                   config: backend.SolverConfig | None = None) -> MarketOutcome:
    return solve_mcp(build_dcopf(case, bids, flags), config=config)


# ---------------------------------------------------------------------------
# schedule evaluation and the exhaustive oracle
# ---------------------------------------------------------------------------


def profit_from_outcome(case: NetworkCase, outcome: MarketOutcome, actor, flags=None) -> ProfitBreakdown:
    """Participant profit at the cleared prices of a market outcome (real units)."""
    kind, actor_id = actor
    T = case.horizon
    rp, rq, cp, cq = [0.0] * T, [0.0] * T, [0.0] * T, [0.0] * T
    if kind == "genco":
        for g in case.generators:
            if g.owner != actor_id:
                continue
            for t in range(T):
                rp[t] += outcome.lmp_p[g.bus][t] * outcome.gen_p[g.id][t]
                if outcome.lmp_q:
                    rq[t] += outcome.lmp_q[g.bus][t] * outcome.gen_q[g.id][t]
                cq[t] += g.q_cost * outcome.gen_q[g.id][t]
                for u, s in enumerate(g.segments):
                    cp[t] += s.marginal_cost * outcome.gen_p_seg[g.id][u][t]
    elif kind == "lse":
        for d in case.loads:
            if d.owner != actor_id or d.kind != "curtailable":
                continue
            for t in range(T):
                lam = outcome.lmp_p[d.bus][t]
                for z, s in enumerate(d.segments):
                    served = outcome.load_p[d.id][z][t]
                    rp[t] += s.wtp * served
                    cp[t] += lam * served
                if outcome.lmp_q:
                    rq[t] += outcome.lmp_q[d.bus][t] * d.base_q * case.profile[t]
    else:
        raise VerifyError(f"unknown actor kind '{kind}'")
    return ProfitBreakdown(rp, rq, cp, cq)


def cross_evaluate(
    schedule: BidSchedule,
    case: NetworkCase,
    flags: ScenarioFlags | None = None,
    market: str = "rlxac",
    config: backend.SolverConfig | None = None,
) -> tuple[ProfitBreakdown, MarketOutcome]:
    """Fix a bid schedule, re-clear the chosen market, and price the profit.

    With tightness certification of the relaxed clearing, this is the plug-in
    evaluation of a strategy against the AC market.
    """
    bids = schedule.to_bids(case)
    builder = build_mcp if market == "rlxac" else build_dcopf
    outcome = solve_mcp(builder(case, bids, flags), config=config)
    if outcome.status != backend.OPTIMAL:
        raise VerifyError(f"market infeasible under schedule (status {outcome.status})")
    return profit_from_outcome(case, outcome, schedule.actor, flags), outcome


@dataclass
class OracleGroup:
    kind: str
    entity: str
    seg: int
    hours: list
    base_price: float


def oracle_groups(case: NetworkCase, actor, levels: BidLevels, flags: ScenarioFlags) -> list[OracleGroup]:
    kind, actor_id = actor
    T = case.horizon
    hgroups = [list(range(T))] if levels.tie_hours else [[t] for t in range(T)]
    groups = []
    if kind == "genco":
        owned = [g for g in case.generators if g.owner == actor_id]
        if not owned:
            raise BuildError(f"GENCO '{actor_id}' owns no generators")
        for g in owned:
            for u, s in enumerate(g.segments):
                for hours in hgroups:
                    groups.append(OracleGroup("gen", g.id, u, hours, s.marginal_cost))
    else:
        owned = [d for d in case.loads if d.owner == actor_id and d.kind == "curtailable"]
        if not owned:
            raise BuildError(f"LSE '{actor_id}' owns no curtailable loads")
        for d in owned:
            for z, s in enumerate(d.segments):
                for hours in hgroups:
                    groups.append(OracleGroup("load", d.id, z, hours, s.wtp))
    return groups


def _apply_combo(prog: ConicProgram, case, groups, levels, combo):
    base = case.base_mva
    for grp, c in zip(groups, combo):
        price = levels.alphas[c] * grp.base_price
        for t in grp.hours:
            if grp.kind == "gen":
                idx = prog[("Pgu", grp.entity, grp.seg, t)]
                prog.obj[idx] = price * base
            else:
                idx = prog[("Pd", grp.entity, grp.seg, t)]
                prog.obj[idx] = -price * base


def _combo_profit(prog, case, actor, flags, groups, levels, combo, config):
    _apply_combo(prog, case, groups, levels, combo)
    out = solve_mcp(prog, config=config)
    if out.status != backend.OPTIMAL:
        return None
    return profit_from_outcome(case, out, actor, flags).profit


def oracle_enumerate(
    case: NetworkCase,
    actor,
    levels: BidLevels | None = None,
    flags: ScenarioFlags | None = None,
    market: str = "rlxac",
    max_combos: int = 100_000,
    config: backend.SolverConfig | None = None,
):
    """Exhaustively clear the market for every bid combination on the level grid.

    Returns (BidSchedule, profit). Ties take the lexicographically smallest
    level vector. The inner clearing solver is the same one the closed form
    embeds, so this is the independent optimality oracle for the MISOCP.
    """
    kind, _ = actor
    levels = levels or (BidLevels() if kind == "genco" else load_levels())
    flags = flags or ScenarioFlags()
    levels.validate()
    groups = oracle_groups(case, actor, levels, flags)
    n_combos = len(levels.alphas) ** len(groups)
    if n_combos > max_combos:
        raise VerifyError(f"oracle search space {n_combos} exceeds limit {max_combos}")

    builder = build_mcp if market == "rlxac" else build_dcopf
    combos = list(itertools.product(range(len(levels.alphas)), repeat=len(groups)))
    threads = int(os.environ.get("ACBID_THREADS", "1"))
    profits: list
    if threads > 1 and len(combos) > 1:
        chunks = [combos[i::threads] for i in range(threads)]
        args = [(case, actor, levels, flags, market, chunk, config) for chunk in chunks]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(_oracle_worker, args))
        merged = {}
        for part in parts:
            merged.update(part)
        profits = [merged[c] for c in combos]
    else:
        prog = builder(case, Bids(), flags)
        profits = [_combo_profit(prog, case, actor, flags, groups, levels, c, config) for c in combos]

    best, best_profit = None, -np.inf
    for combo, profit in zip(combos, profits):
        if profit is not None and profit > best_profit:
            best, best_profit = combo, profit
    if best is None:
        raise VerifyError("every bid combination left the market infeasible")

    schedule = BidSchedule(actor=actor)
    for grp, c in zip(groups, best):
        for t in grp.hours:
            schedule.entries.append(
                {
                    "kind": grp.kind,
                    "entity": grp.entity,
                    "seg": grp.seg,
                    "hour": t,
                    "level": int(c),
                    "alpha": levels.alphas[c],
                    "price": levels.alphas[c] * grp.base_price,
                }
            )
    schedule.expected_profit = float(best_profit)
    return schedule, float(best_profit)


def _oracle_worker(args):
    case, actor, levels, flags, market, combos, config = args
    builder = build_mcp if market == "rlxac" else build_dcopf
    groups = oracle_groups(case, actor, levels, flags)
    prog = builder(case, Bids(), flags)
    return {c: _combo_profit(prog, case, actor, flags, groups, levels, c, config) for c in combos}


# ---------------------------------------------------------------------------
# aggregate report
# ---------------------------------------------------------------------------


@dataclass
class VerificationReport:
    duality_gap: float | None = None
    kkt: dict = field(default_factory=dict)
    tightness: dict = field(default_factory=dict)
    ac_residual: dict = field(default_factory=dict)
    crosscheck: dict = field(default_factory=dict)
    oracle: dict = field(default_factory=dict)
    equivalence_residual: float | None = None
    balance_residual_pu: float | None = None
    checks: dict = field(default_factory=dict)

    def passed(self) -> bool:
        return all(self.checks.values()) if self.checks else True

    def to_dict(self) -> dict:
        return {
            "passed": self.passed(),
            "checks": self.checks,
            "duality_gap": self.duality_gap,
            "equivalence_residual": self.equivalence_residual,
            "balance_residual_pu": self.balance_residual_pu,
            "kkt": {k: v for k, v in self.kkt.items()},
            "tightness": self.tightness,
            "ac_residual": {
                k: self.ac_residual[k] for k in ("max_p_mw", "max_q_mvar") if k in self.ac_residual
            },
            "crosscheck": self.crosscheck,
            "oracle": self.oracle,
        }
