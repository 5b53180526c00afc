"""SOCP-relaxed market clearing: lifted AC program builder, solver, LMP extraction.

Everything is assembled in per-unit on the case MVA base (costs scaled to
$/p.u.-h), and converted back to MW / $/MWh at extraction time. Every
constraint the market formulation prices carries an explicit labeled row so
the program can be transposed into its dual; the builder never uses variable
bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import backend
from .netcase import NetworkCase
from .program import ConicProgram, label_str


class BuildError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioFlags:
    ramping: bool = True
    capability: bool = True
    shiftable: bool = True


@dataclass
class Bids:
    """Submitted prices. Missing entries fall back to marginal cost / true WTP.

    gen_prices: (gen_id, segment index, hour) -> $/MWh
    load_prices: (load_id, segment index, hour) -> $/MWh (strategic WTP)
    """

    gen_prices: dict = field(default_factory=dict)
    load_prices: dict = field(default_factory=dict)
    alpha_lo: float = 1.0
    alpha_hi: float = 1.4
    load_alpha_lo: float = 0.5
    load_alpha_hi: float = 1.0

    def gen_price(self, gen, u, t) -> float:
        return self.gen_prices.get((gen.id, u, t), gen.segments[u].marginal_cost)

    def load_price(self, load, z, t) -> float:
        return self.load_prices.get((load.id, z, t), load.segments[z].wtp)

    def validate(self, case: NetworkCase):
        for (gid, u, t), price in self.gen_prices.items():
            g = case.generator(gid)
            c = g.segments[u].marginal_cost
            lo, hi = self.alpha_lo * c, self.alpha_hi * c
            if not lo - 1e-9 <= price <= hi + 1e-9:
                raise BuildError(
                    f"bid {price} for ({gid}, segment {u}, hour {t}) outside [{lo}, {hi}]"
                )
        for (did, z, t), price in self.load_prices.items():
            d = case.load(did)
            w = d.segments[z].wtp
            lo, hi = self.load_alpha_lo * w, self.load_alpha_hi * w
            if not lo - 1e-9 <= price <= hi + 1e-9:
                raise BuildError(
                    f"WTP bid {price} for ({did}, segment {z}, hour {t}) outside [{lo}, {hi}]"
                )


def marginal_bids() -> Bids:
    return Bids()


# ---------------------------------------------------------------------------
# builder
# ---------------------------------------------------------------------------


def _shiftable(load, seg, flags):
    return flags.shiftable and seg.shiftable


def build_mcp(case: NetworkCase, bids: Bids | None = None, flags: ScenarioFlags | None = None) -> ConicProgram:
    """Assemble the relaxed market clearing program for given bid prices."""
    bids = bids or Bids()
    flags = flags or ScenarioFlags()
    bids.validate(case)
    base = case.base_mva
    T = case.horizon
    prog = ConicProgram("min")
    prof = case.profile

    pairs = case.buspairs()
    line_pair = {l.id: case.line_pair(l) for l in case.lines}

    # variables, hour-major
    for t in range(T):
        for g in case.generators:
            prog.var(("Pg", g.id, t))
            for u in range(len(g.segments)):
                prog.var(("Pgu", g.id, u, t))
            prog.var(("Qg", g.id, t))
        for d in case.loads:
            for z in range(len(d.segments)):
                prog.var(("Pd", d.id, z, t))
        for l in case.lines:
            for f in ("Fps", "Fpr", "Fqs", "Fqr"):
                prog.var((f, l.id, t))
            for sp in ("ps+", "ps-", "pr+", "pr-", "qs+", "qs-", "qr+", "qr-"):
                prog.var(("Sp", l.id, sp, t))
        for bnode in case.buses:
            prog.var(("cii", bnode.id, t))
        for bp in pairs:
            for f in ("cij", "cji", "sij", "sji"):
                prog.var((f, bp, t))

    # objective: bid-priced strategic blocks, marginal others, reactive cost, -WTP
    for t in range(T):
        for g in case.generators:
            for u in range(len(g.segments)):
                prog.add_obj(prog[("Pgu", g.id, u, t)], bids.gen_price(g, u, t) * base)
            prog.add_obj(prog[("Qg", g.id, t)], g.q_cost * base)
        for d in case.loads:
            for z in range(len(d.segments)):
                prog.add_obj(prog[("Pd", d.id, z, t)], -bids.load_price(d, z, t) * base)

    _emit_gen_rows(prog, case, flags, base, T)
    _emit_load_rows(prog, case, flags, base, T, prof)
    _emit_network_rows(prog, case, base, T, prof, pairs, line_pair)

    prog.meta = {"kind": "mcp", "case": case, "flags": flags, "bids": bids}
    return prog


def _emit_gen_rows(prog, case, flags, base, T, include_q=True):
    for t in range(T):
        for g in case.generators:
            pg = prog[("Pg", g.id, t)]
            segs = [prog[("Pgu", g.id, u, t)] for u in range(len(g.segments))]
            prog.add_eq(("seg_agg", g.id, t), [(u_idx, 1.0) for u_idx in segs] + [(pg, -1.0)], 0.0)
            for u, s in enumerate(g.segments):
                prog.add_le(("seg_ub", g.id, u, t), [(segs[u], 1.0)], s.p_cap / base)
                prog.add_le(("seg_lb", g.id, u, t), [(segs[u], -1.0)], 0.0)
            prog.add_le(("unit_ub", g.id, t), [(pg, 1.0)], g.pmax / base)
            prog.add_le(("unit_lb", g.id, t), [(pg, -1.0)], -g.pmin / base)
            if not include_q:
                continue
            qg = prog[("Qg", g.id, t)]
            rho_m = g.rho_minus if flags.capability else (0.0,) * len(g.segments)
            rho_p = g.rho_plus if flags.capability else (0.0,) * len(g.segments)
            prog.add_le(
                ("qcap_ub", g.id, t),
                [(qg, 1.0)] + [(segs[u], -rho_m[u]) for u in range(len(segs))],
                g.qmax / base,
            )
            prog.add_le(
                ("qcap_lb", g.id, t),
                [(qg, -1.0)] + [(segs[u], rho_p[u]) for u in range(len(segs))],
                -g.qmin / base,
            )
        if flags.ramping and T > 1:
            for g in case.generators:
                pg = prog[("Pg", g.id, t)]
                prev = prog[("Pg", g.id, t - 1 if t > 0 else T - 1)]
                prog.add_le(("ramp_up", g.id, t), [(pg, 1.0), (prev, -1.0)], g.ramp_up / base)
                prog.add_le(("ramp_dn", g.id, t), [(pg, -1.0), (prev, 1.0)], g.ramp_down / base)


def _emit_load_rows(prog, case, flags, base, T, prof):
    for d in case.loads:
        for z, seg in enumerate(d.segments):
            shift = d.kind == "curtailable" and _shiftable(d, seg, flags)
            for t in range(T):
                v = prog[("Pd", d.id, z, t)]
                prog.add_le(("load_lb", d.id, z, t), [(v, -1.0)], 0.0)
                if not shift:
                    cap = seg.fraction * d.base_p * prof[t] / base
                    prog.add_le(("load_ub", d.id, z, t), [(v, 1.0)], cap)
            if shift:
                total = seg.fraction * d.base_p * sum(prof) / base
                prog.add_eq(
                    ("shift_sum", d.id, z),
                    [(prog[("Pd", d.id, z, t)], 1.0) for t in range(T)],
                    total,
                )
        if d.kind == "fixed":
            for t in range(T):
                prog.add_eq(
                    ("fix_serve", d.id, t),
                    [(prog[("Pd", d.id, z, t)], 1.0) for z in range(len(d.segments))],
                    d.base_p * prof[t] / base,
                )


def _emit_network_rows(prog, case, base, T, prof, pairs, line_pair):
    for t in range(T):
        # lifted branch flows
        for l in case.lines:
            (bp, aligned) = line_pair[l.id]
            g, b, bsh = l.g, l.b, l.b_sh
            cii_f = prog[("cii", l.from_bus, t)]
            cii_t = prog[("cii", l.to_bus, t)]
            c_ft = prog[("cij" if aligned else "cji", bp, t)]
            c_tf = prog[("cji" if aligned else "cij", bp, t)]
            s_ft = prog[("sij" if aligned else "sji", bp, t)]
            s_tf = prog[("sji" if aligned else "sij", bp, t)]
            ps, pr = prog[("Fps", l.id, t)], prog[("Fpr", l.id, t)]
            qs, qr = prog[("Fqs", l.id, t)], prog[("Fqr", l.id, t)]
            prog.add_eq(("flow_ps", l.id, t), [(ps, 1.0), (cii_f, -g), (c_ft, g), (s_ft, b)], 0.0)
            prog.add_eq(("flow_pr", l.id, t), [(pr, 1.0), (cii_t, g), (c_tf, -g), (s_tf, -b)], 0.0)
            prog.add_eq(
                ("flow_qs", l.id, t),
                [(qs, 1.0), (cii_f, b + bsh / 2.0), (c_ft, -b), (s_ft, g)],
                0.0,
            )
            prog.add_eq(
                ("flow_qr", l.id, t),
                [(qr, 1.0), (cii_t, -(b + bsh / 2.0)), (c_tf, b), (s_tf, -g)],
                0.0,
            )
            # absolute-value splits and linearized thermal limits
            sp = {k: prog[("Sp", l.id, k, t)] for k in ("ps+", "ps-", "pr+", "pr-", "qs+", "qs-", "qr+", "qr-")}
            prog.add_eq(("split_ps", l.id, t), [(sp["ps+"], 1.0), (sp["ps-"], -1.0), (ps, -1.0)], 0.0)
            prog.add_eq(("split_pr", l.id, t), [(sp["pr+"], 1.0), (sp["pr-"], -1.0), (pr, -1.0)], 0.0)
            prog.add_eq(("split_qs", l.id, t), [(sp["qs+"], 1.0), (sp["qs-"], -1.0), (qs, -1.0)], 0.0)
            prog.add_eq(("split_qr", l.id, t), [(sp["qr+"], 1.0), (sp["qr-"], -1.0), (qr, -1.0)], 0.0)
            for k, v in sp.items():
                prog.add_le(("split_nn", l.id, k, t), [(v, -1.0)], 0.0)
            eps = case.line_eps(l)
            smax = l.s_max / base
            prog.add_le(
                ("thermal_s", l.id, t),
                [(sp["ps+"], 1.0), (sp["ps-"], 1.0), (sp["qs+"], eps), (sp["qs-"], eps)],
                smax,
            )
            prog.add_le(
                ("thermal_r", l.id, t),
                [(sp["pr+"], 1.0), (sp["pr-"], 1.0), (sp["qr+"], eps), (sp["qr-"], eps)],
                smax,
            )
        # voltage box on lifted squared magnitudes
        for bus in case.buses:
            cii = prog[("cii", bus.id, t)]
            prog.add_le(("v_ub", bus.id, t), [(cii, 1.0)], bus.vmax**2)
            prog.add_le(("v_lb", bus.id, t), [(cii, -1.0)], -bus.vmin**2)
        # buspair symmetry and cone blocks
        for bp in pairs:
            cij, cji = prog[("cij", bp, t)], prog[("cji", bp, t)]
            sij, sji = prog[("sij", bp, t)], prog[("sji", bp, t)]
            prog.add_eq(("sym_c", bp, t), [(cij, 1.0), (cji, -1.0)], 0.0)
            prog.add_eq(("sym_s", bp, t), [(sij, 1.0), (sji, 1.0)], 0.0)
            cii_i = prog[("cii", bp[0], t)]
            cii_j = prog[("cii", bp[1], t)]
            prog.add_soc(
                ("soc", bp, t),
                [
                    [(cii_i, 1.0), (cii_j, 1.0)],
                    [(cij, 2.0)],
                    [(sij, 2.0)],
                    [(cii_i, 1.0), (cii_j, -1.0)],
                ],
            )
        # nodal balances
        gens_at = {bus.id: [] for bus in case.buses}
        for g in case.generators:
            gens_at[g.bus].append(g)
        loads_at = {bus.id: [] for bus in case.buses}
        for d in case.loads:
            loads_at[d.bus].append(d)
        for bus in case.buses:
            terms_p = [(prog[("Pg", g.id, t)], 1.0) for g in gens_at[bus.id]]
            terms_q = [(prog[("Qg", g.id, t)], 1.0) for g in gens_at[bus.id]]
            qd = 0.0
            for d in loads_at[bus.id]:
                for z in range(len(d.segments)):
                    terms_p.append((prog[("Pd", d.id, z, t)], -1.0))
                qd += d.base_q * prof[t] / base
            for l in case.lines:
                if l.to_bus == bus.id:
                    terms_p.append((prog[("Fpr", l.id, t)], 1.0))
                    terms_q.append((prog[("Fqr", l.id, t)], 1.0))
                if l.from_bus == bus.id:
                    terms_p.append((prog[("Fps", l.id, t)], -1.0))
                    terms_q.append((prog[("Fqs", l.id, t)], -1.0))
            prog.add_eq(("bal_p", bus.id, t), terms_p, 0.0)
            prog.add_eq(("bal_q", bus.id, t), terms_q, qd)


# ---------------------------------------------------------------------------
# outcome extraction
# ---------------------------------------------------------------------------


@dataclass
class MarketOutcome:
    status: str
    objective: float | None
    base_mva: float
    horizon: int
    gen_p: dict = field(default_factory=dict)  # gen -> [MW per hour]
    gen_p_seg: dict = field(default_factory=dict)  # gen -> [per-segment [MW per hour]]
    gen_q: dict = field(default_factory=dict)
    load_p: dict = field(default_factory=dict)  # load -> [per-segment [MW per hour]]
    flow: dict = field(default_factory=dict)  # line -> {ps, pr, qs, qr: [MW(MVAr)]}
    lifted: dict = field(default_factory=dict)
    lmp_p: dict = field(default_factory=dict)  # bus -> [$/MWh]
    lmp_q: dict = field(default_factory=dict)
    duals: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    prog: ConicProgram | None = None
    result: backend.ContinuousResult | None = None

    def to_dict(self, include_duals=True) -> dict:
        doc = {
            "status": self.status,
            "objective": self.objective,
            "base_mva": self.base_mva,
            "horizon": self.horizon,
            "gen_p": self.gen_p,
            "gen_p_seg": self.gen_p_seg,
            "gen_q": self.gen_q,
            "load_p": self.load_p,
            "flow": self.flow,
            "lifted": self.lifted,
            "lmp_p": self.lmp_p,
            "lmp_q": self.lmp_q,
            "solver": self.solver,
        }
        if include_duals:
            doc["duals"] = self.duals
        return doc


def solve_mcp(prog: ConicProgram, config: backend.SolverConfig | None = None) -> MarketOutcome:
    """Solve a built market clearing program and decode the primal-dual outcome."""
    if getattr(prog, "meta", {}).get("kind") not in ("mcp", "dcopf"):
        raise BuildError("solve_mcp expects a program built by build_mcp or build_dcopf")
    case: NetworkCase = prog.meta["case"]
    res = backend.solve_continuous(prog, config=config)
    out = MarketOutcome(
        status=res.status,
        objective=res.objective,
        base_mva=case.base_mva,
        horizon=case.horizon,
        prog=prog,
        result=res,
        solver={
            "status_raw": res.status_raw,
            "iterations": res.iterations,
            "solve_time_s": res.solve_time,
            "r_prim": res.r_prim,
            "r_dual": res.r_dual,
        },
    )
    if res.status != backend.OPTIMAL:
        return out
    base = case.base_mva
    T = case.horizon
    x = res.x

    def val(name):
        return float(x[prog.var_index[name]])

    for g in case.generators:
        out.gen_p[g.id] = [val(("Pg", g.id, t)) * base for t in range(T)]
        has_q = ("Qg", g.id, 0) in prog
        out.gen_q[g.id] = [val(("Qg", g.id, t)) * base if has_q else 0.0 for t in range(T)]
        out.gen_p_seg[g.id] = [
            [val(("Pgu", g.id, u, t)) * base for t in range(T)] for u in range(len(g.segments))
        ]
    for d in case.loads:
        out.load_p[d.id] = [
            [val(("Pd", d.id, z, t)) * base for t in range(T)] for z in range(len(d.segments))
        ]
    if prog.meta["kind"] == "mcp":
        for l in case.lines:
            out.flow[l.id] = {
                "ps": [val(("Fps", l.id, t)) * base for t in range(T)],
                "pr": [val(("Fpr", l.id, t)) * base for t in range(T)],
                "qs": [val(("Fqs", l.id, t)) * base for t in range(T)],
                "qr": [val(("Fqr", l.id, t)) * base for t in range(T)],
            }
        out.lifted["cii"] = {b.id: [val(("cii", b.id, t)) for t in range(T)] for b in case.buses}
        for f in ("cij", "cji", "sij", "sji"):
            out.lifted[f] = {
                label_str(bp): [val((f, bp, t)) for t in range(T)] for bp in case.buspairs()
            }
    else:
        for l in case.lines:
            out.flow[l.id] = {"ps": [val(("Fdc", l.id, t)) * base for t in range(T)]}

    eq_idx = {lab: k for k, lab in enumerate(prog.eq_labels)}
    for bus in case.buses:
        out.lmp_p[bus.id] = [float(-res.eq_duals[eq_idx[("bal_p", bus.id, t)]]) / base for t in range(T)]
        if prog.meta["kind"] == "mcp":
            out.lmp_q[bus.id] = [float(-res.eq_duals[eq_idx[("bal_q", bus.id, t)]]) / base for t in range(T)]
    out.duals = {
        "eq": {label_str(lab): float(res.eq_duals[k]) for k, lab in enumerate(prog.eq_labels)},
        "ineq": {label_str(lab): float(v) for lab, v in res.ineq_duals.items()},
        "soc": {label_str(blk.label): [float(v) for v in res.soc_duals[k]] for k, blk in enumerate(prog.socs)},
    }
    return out


def lmp_report(outcome: MarketOutcome):
    """Rows (bus, hour, lmp_p, lmp_q) sorted by bus then hour. Hours are 1-based."""
    if outcome.status != backend.OPTIMAL:
        raise BuildError(f"lmp_report needs an optimal outcome, got status '{outcome.status}'")
    rows = []
    for bus in sorted(outcome.lmp_p):
        for t in range(outcome.horizon):
            lq = outcome.lmp_q.get(bus)
            rows.append((bus, t + 1, outcome.lmp_p[bus][t], lq[t] if lq else None))
    return rows


def nodal_balance_residual(outcome: MarketOutcome) -> float:
    """Max |balance row residual| in per-unit over all (bus, hour)."""
    prog, res = outcome.prog, outcome.result
    worst = 0.0
    for k, lab in enumerate(prog.eq_labels):
        if lab[0] not in ("bal_p", "bal_q"):
            continue
        lhs = sum(c * res.x[i] for i, c in prog.eq_terms[k])
        worst = max(worst, abs(lhs - prog.eq_rhs[k]))
    return worst
