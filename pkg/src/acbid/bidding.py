"""Single-level strategic bidding MISOCPs for GENCOs and load-serving entities.

The upper-level profit is written without bilinear price*dispatch terms:
complementary slackness turns the revenue of the bidding participant into
multiplier-weighted bound/ramp constants plus the level-weighted linearization
variables, so the whole problem is mixed-binary conic. Profits are always
re-computed afterwards from the embedded primal/dual blocks; the linearized
objective is checked against that recomputation, never trusted.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from . import backend, bnb
from .closedform import GEN_OWNED_ROW_KINDS, BidLevels, assemble_closed_form, load_levels
from .mcp_primal import Bids, BuildError, ScenarioFlags
from .netcase import NetworkCase
from .program import ConicProgram


class BiddingError(ValueError):
    pass


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------


def build_bidding_misocp(
    case: NetworkCase,
    genco_id: str,
    levels: BidLevels | None = None,
    flags: ScenarioFlags | None = None,
) -> ConicProgram:
    """Profit-maximization MISOCP for one GENCO over the closed-form market."""
    prog = assemble_closed_form(case, levels, flags, actor=("genco", genco_id))
    primal = prog.meta["primal"]
    base = case.base_mva
    owned = [g for g in case.generators if g.owner == genco_id]
    owned_ids = {g.id for g in owned}

    for lab, _terms, rhs in zip(primal.ineq_labels, primal.ineq_terms, primal.ineq_rhs):
        if lab[0] in GEN_OWNED_ROW_KINDS and lab[1] in owned_ids:
            prog.add_obj(prog[("mu",) + lab], rhs)
    for grp in prog.meta["groups"]:
        for t in grp.hours:
            for phi, coef in zip(grp.phi_names[t], grp.coefs):
                prog.add_obj(prog[phi], coef)
    for g in owned:
        for u, s in enumerate(g.segments):
            for t in range(case.horizon):
                prog.add_obj(prog[("Pgu", g.id, u, t)], -s.marginal_cost * base)

    prog.meta["kind"] = "bidding"
    return prog


def build_demand_bidding(
    case: NetworkCase,
    lse_id: str,
    levels: BidLevels | None = None,
    flags: ScenarioFlags | None = None,
) -> ConicProgram:
    """Profit-maximization MISOCP for an LSE bidding the WTP of its curtailable loads."""
    levels = levels or load_levels()
    flags = flags or ScenarioFlags()
    prog = assemble_closed_form(case, levels, flags, actor=("lse", lse_id))
    primal = prog.meta["primal"]
    base = case.base_mva
    prof = case.profile
    owned = [d for d in case.loads if d.owner == lse_id and d.kind == "curtailable"]
    rhs_of = {lab: rhs for lab, rhs in zip(primal.ineq_labels, primal.ineq_rhs)}
    eq_rhs_of = {lab: rhs for lab, rhs in zip(primal.eq_labels, primal.eq_rhs)}

    for d in owned:
        for z, s in enumerate(d.segments):
            shift = flags.shiftable and s.shiftable
            for t in range(case.horizon):
                prog.add_obj(prog[("Pd", d.id, z, t)], s.wtp * base)
                if not shift:
                    lab = ("load_ub", d.id, z, t)
                    prog.add_obj(prog[("mu",) + lab], rhs_of[lab])
            if shift:
                lab = ("shift_sum", d.id, z)
                prog.add_obj(prog[("lam",) + lab], eq_rhs_of[lab])
        for t in range(case.horizon):
            qd = d.base_q * prof[t] / base
            prog.add_obj(prog[("lam", "bal_q", d.bus, t)], -qd)
    for grp in prog.meta["groups"]:
        for t in grp.hours:
            for phi, coef in zip(grp.phi_names[t], grp.coefs):
                prog.add_obj(prog[phi], coef)

    prog.meta["kind"] = "demand_bidding"
    return prog


# ---------------------------------------------------------------------------
# solving
# ---------------------------------------------------------------------------


def marginal_fixings(prog: ConicProgram) -> dict[int, float]:
    """Binary assignment selecting the level closest to alpha = 1 in every group."""
    levels: BidLevels = prog.meta["levels"]
    c_star = min(range(len(levels.alphas)), key=lambda c: (abs(levels.alphas[c] - 1.0), c))
    fix = {}
    for grp in prog.meta["groups"]:
        for c, name in enumerate(grp.i_names):
            fix[prog[name]] = 1.0 if c == c_star else 0.0
    return fix


def solve_bidding(prog: ConicProgram, config: bnb.BnBConfig | None = None) -> bnb.SolveResult:
    """Branch-and-bound solve seeded with the marginal-bid incumbent."""
    cfg = config or bnb.BnBConfig()
    warm = bnb.warm_hint(prog, marginal_fixings(prog), cfg)
    return bnb.branch_and_bound(prog, cfg, warm=warm)


# ---------------------------------------------------------------------------
# extraction
# ---------------------------------------------------------------------------


@dataclass
class BidSchedule:
    actor: tuple
    entries: list = field(default_factory=list)  # dicts: kind, entity, seg, hour, level, alpha, price
    expected_profit: float = 0.0

    def to_bids(self, case: NetworkCase) -> Bids:
        levels = {}
        bids = Bids()
        for e in self.entries:
            key = (e["entity"], e["seg"], e["hour"])
            if e["kind"] == "gen":
                bids.gen_prices[key] = e["price"]
            else:
                bids.load_prices[key] = e["price"]
        alphas = [e["alpha"] for e in self.entries]
        if alphas:
            if self.actor[0] == "genco":
                bids.alpha_lo, bids.alpha_hi = min(1.0, min(alphas)), max(1.0, max(alphas))
            else:
                bids.load_alpha_lo, bids.load_alpha_hi = min(1.0, min(alphas)), max(1.0, max(alphas))
        return bids

    def to_rows(self):
        head = ["kind", "entity", "segment", "hour", "level", "alpha", "price"]
        rows = [
            [e["kind"], e["entity"], e["seg"], e["hour"] + 1, e["level"], e["alpha"], e["price"]]
            for e in sorted(self.entries, key=lambda e: (e["entity"], e["seg"], e["hour"]))
        ]
        return head, rows


@dataclass
class ProfitBreakdown:
    revenue_p: list
    revenue_q: list
    cost_p: list
    cost_q: list

    @property
    def profit_hourly(self):
        return [rp + rq - cp - cq for rp, rq, cp, cq in zip(self.revenue_p, self.revenue_q, self.cost_p, self.cost_q)]

    @property
    def profit(self) -> float:
        return float(sum(self.profit_hourly))

    def to_rows(self):
        head = ["hour", "revenue_p", "revenue_q", "cost_p", "cost_q", "profit"]
        rows = [
            [t + 1, self.revenue_p[t], self.revenue_q[t], self.cost_p[t], self.cost_q[t], self.profit_hourly[t]]
            for t in range(len(self.revenue_p))
        ]
        rows.append(["total", sum(self.revenue_p), sum(self.revenue_q), sum(self.cost_p), sum(self.cost_q), self.profit])
        return head, rows


def _genco_breakdown(case, genco_id, val) -> ProfitBreakdown:
    """Profit from lambda*P products of the embedded primal/dual blocks."""
    T = case.horizon
    owned = [g for g in case.generators if g.owner == genco_id]
    rp, rq, cp, cq = [0.0] * T, [0.0] * T, [0.0] * T, [0.0] * T
    for t in range(T):
        for g in owned:
            lam_p = -val(("lam", "bal_p", g.bus, t))
            lam_q = -val(("lam", "bal_q", g.bus, t))
            rp[t] += lam_p * val(("Pg", g.id, t))
            rq[t] += lam_q * val(("Qg", g.id, t))
            cq[t] += g.q_cost * case.base_mva * val(("Qg", g.id, t))
            for u, s in enumerate(g.segments):
                cp[t] += s.marginal_cost * case.base_mva * val(("Pgu", g.id, u, t))
    return ProfitBreakdown(rp, rq, cp, cq)


def _lse_breakdown(case, lse_id, val, flags) -> ProfitBreakdown:
    T = case.horizon
    base = case.base_mva
    owned = [d for d in case.loads if d.owner == lse_id and d.kind == "curtailable"]
    rp, rq, cp, cq = [0.0] * T, [0.0] * T, [0.0] * T, [0.0] * T
    for t in range(T):
        for d in owned:
            lam_p = -val(("lam", "bal_p", d.bus, t))
            lam_q = -val(("lam", "bal_q", d.bus, t))
            for z, s in enumerate(d.segments):
                served = val(("Pd", d.id, z, t))
                rp[t] += s.wtp * base * served
                cp[t] += lam_p * served
            rq[t] += lam_q * d.base_q * case.profile[t] / base
    return ProfitBreakdown(rp, rq, cp, cq)


def breakdown_for(case, actor, val, flags=None) -> ProfitBreakdown:
    kind, actor_id = actor
    if kind == "genco":
        return _genco_breakdown(case, actor_id, val)
    return _lse_breakdown(case, actor_id, val, flags)


def extract_bids(prog: ConicProgram, result) -> tuple[BidSchedule, ProfitBreakdown]:
    """Decode one-hot indicators and recompute profit from the embedded blocks.

    The recomputed profit must match the solver objective to 1e-5 relative;
    a mismatch signals a branch-and-bound tolerance breach.
    """
    if result.x is None:
        raise BiddingError(f"cannot extract bids from status '{getattr(result, 'status', None)}'")
    case: NetworkCase = prog.meta["case"]
    levels: BidLevels = prog.meta["levels"]
    actor = prog.meta["actor"]
    x = result.x

    def val(name):
        return float(x[prog.var_index[name]])

    schedule = BidSchedule(actor=actor)
    for grp in prog.meta["groups"]:
        vals = [val(n) for n in grp.i_names]
        c_star = int(np.argmax(vals))
        if abs(vals[c_star] - 1.0) > 1e-6 or any(abs(v) > 1e-6 for c, v in enumerate(vals) if c != c_star):
            raise BiddingError(
                f"fractional binaries in group {grp.kind}/{grp.entity}/seg{grp.seg}: {vals}"
            )
        alpha = levels.alphas[c_star]
        for t in grp.hours:
            schedule.entries.append(
                {
                    "kind": grp.kind,
                    "entity": grp.entity,
                    "seg": grp.seg,
                    "hour": t,
                    "level": c_star,
                    "alpha": alpha,
                    "price": alpha * grp.base_price,
                }
            )

    flags = prog.meta["flags"]
    breakdown = breakdown_for(case, actor, val, flags)
    schedule.expected_profit = breakdown.profit
    obj = result.objective
    if obj is not None and abs(breakdown.profit - obj) > 1e-5 * (1.0 + abs(obj)):
        raise BiddingError(
            f"recomputed profit {breakdown.profit:.6f} deviates from solver objective {obj:.6f}"
        )
    return schedule, breakdown


def objective_equivalence_check(prog: ConicProgram, result) -> float:
    """Residual between bilinear revenue and its multiplier-form substitute.

    Checks, at the given point, that sum(lambda^P P + lambda^Q Q) of the
    bidding participant equals the complementary-slackness expansion used in
    the linear objective. Small only at KKT points.
    """
    case: NetworkCase = prog.meta["case"]
    actor = prog.meta["actor"]
    primal = prog.meta["primal"]
    base = case.base_mva
    x = result.x

    def val(name):
        return float(x[prog.var_index[name]])

    kind, actor_id = actor
    breakdown = breakdown_for(case, actor, val, prog.meta["flags"])
    if kind == "genco":
        owned = {g.id: g for g in case.generators if g.owner == actor_id}
        bilinear = 0.0
        for t in range(case.horizon):
            for g in owned.values():
                bilinear += -val(("lam", "bal_p", g.bus, t)) * val(("Pg", g.id, t))
                bilinear += -val(("lam", "bal_q", g.bus, t)) * val(("Qg", g.id, t))
        linear = 0.0
        for lab, rhs in zip(primal.ineq_labels, primal.ineq_rhs):
            if lab[0] in GEN_OWNED_ROW_KINDS and lab[1] in owned:
                linear += val(("mu",) + lab) * rhs
        for t in range(case.horizon):
            for g in owned.values():
                linear += g.q_cost * base * val(("Qg", g.id, t))
        for grp in prog.meta["groups"]:
            for t in grp.hours:
                for phi, coef in zip(grp.phi_names[t], grp.coefs):
                    linear += coef * val(phi)
    else:
        owned = [d for d in case.loads if d.owner == actor_id and d.kind == "curtailable"]
        flags = prog.meta["flags"]
        rhs_of = {lab: rhs for lab, rhs in zip(primal.ineq_labels, primal.ineq_rhs)}
        eq_rhs_of = {lab: rhs for lab, rhs in zip(primal.eq_labels, primal.eq_rhs)}
        bilinear = 0.0
        linear = 0.0
        for d in owned:
            for z, s in enumerate(d.segments):
                shift = flags.shiftable and s.shiftable
                for t in range(case.horizon):
                    bilinear += -val(("lam", "bal_p", d.bus, t)) * val(("Pd", d.id, z, t))
                    if not shift:
                        lab = ("load_ub", d.id, z, t)
                        linear -= val(("mu",) + lab) * rhs_of[lab]
                if shift:
                    lab = ("shift_sum", d.id, z)
                    linear -= val(("lam",) + lab) * eq_rhs_of[lab]
        for grp in prog.meta["groups"]:
            for t in grp.hours:
                for phi, coef in zip(grp.phi_names[t], grp.coefs):
                    linear += -coef * val(phi)
    return abs(bilinear - linear) / (1.0 + abs(breakdown.profit))


def write_csv(path, head, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(head)
        w.writerows(rows)
