"""Primal-dual closed form of the market clearing problem with level-indexed bids.

The lower-level clearing problem is replaced by the set: primal feasibility,
dual feasibility, and one strong-duality row equating both objectives. Bid
prices become one-hot selections over a multiplier grid, and every
binary-times-dispatch product is replaced exactly by the auxiliary pair
(phi, psi) with phi = I * P enforced through bounds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mcp_primal import Bids, BuildError, ScenarioFlags, build_mcp
from .mcp_dual import dualize
from .netcase import NetworkCase
from .program import ConicProgram

GEN_OWNED_ROW_KINDS = (
    "seg_ub",
    "seg_lb",
    "unit_ub",
    "unit_lb",
    "qcap_ub",
    "qcap_lb",
    "ramp_up",
    "ramp_dn",
)


@dataclass(frozen=True)
class BidLevels:
    """Multiplier grid for strategic bids; exactly one level is active per
    (entity, segment, hour) unless `additive` is set."""

    alphas: tuple = (1.0, 1.1, 1.2, 1.3, 1.4)
    alpha_lo: float = 1.0
    alpha_hi: float = 1.4
    tie_hours: bool = False
    additive: bool = False

    def validate(self):
        if self.alpha_lo > self.alpha_hi:
            raise BuildError(f"infeasible bid bounds: alpha_lo {self.alpha_lo} > alpha_hi {self.alpha_hi}")
        if not self.alphas:
            raise BuildError("need at least one bid level")
        for a in self.alphas:
            if not self.alpha_lo - 1e-12 <= a <= self.alpha_hi + 1e-12:
                raise BuildError(f"bid level {a} outside [{self.alpha_lo}, {self.alpha_hi}]")


def load_levels(alphas=(1.0, 0.9, 0.8, 0.7, 0.6)) -> BidLevels:
    """Default grid for load-side WTP bids (an LSE profits by lowering them)."""
    return BidLevels(alphas=tuple(alphas), alpha_lo=min(alphas), alpha_hi=max(alphas))


@dataclass
class BidGroup:
    """One strategic one-hot decision: a segment of an entity over tied hours."""

    kind: str  # "gen" | "load"
    entity: str
    seg: int
    hours: list
    base_price: float  # $/MWh marginal cost (gen) or WTP (load)
    i_names: list = field(default_factory=list)  # per level
    phi_names: dict = field(default_factory=dict)  # hour -> [per level]
    coefs: list = field(default_factory=list)  # per level: substituted obj coefficient ($/p.u.-h)


def linearize_bid_product(prog: ConicProgram, i_names, p_name, cap, tag):
    """Emit the exact linearization phi = I*P for each level indicator.

    Rows per level: 0 <= phi <= cap*I, phi + psi = P, 0 <= psi <= cap*(1-I).
    Returns the phi variable names.
    """
    if not np.isfinite(cap):
        raise BuildError(f"unbounded segment cap for {tag}; linearization needs a finite bound")
    p_idx = prog[p_name]
    phis = []
    for c, i_name in enumerate(i_names):
        i_idx = prog[i_name]
        phi = ("phi",) + tag + (c,)
        psi = ("psi",) + tag + (c,)
        phi_idx = prog.var(phi, lb=0.0)
        psi_idx = prog.var(psi, lb=0.0)
        prog.add_le(("lin_phi_ub",) + tag + (c,), [(phi_idx, 1.0), (i_idx, -cap)], 0.0)
        prog.add_eq(("lin_link",) + tag + (c,), [(phi_idx, 1.0), (psi_idx, 1.0), (p_idx, -1.0)], 0.0)
        prog.add_le(("lin_psi_ub",) + tag + (c,), [(psi_idx, 1.0), (i_idx, cap)], cap)
        phis.append(phi)
    return phis


def build_strong_duality_row(prog: ConicProgram, primal_obj_terms, dual_obj_terms):
    """Single equality: primal objective expression minus dual objective expression."""
    seen = {}
    for name, coef in primal_obj_terms:
        seen[prog[name]] = seen.get(prog[name], 0.0) + coef
    for name, coef in dual_obj_terms:
        seen[prog[name]] = seen.get(prog[name], 0.0) - coef
    terms = sorted(seen.items())
    if not terms:
        raise BuildError("strong-duality row is empty; primal/dual term sets do not overlap the program")
    return prog.add_eq(("strong_duality",), terms, 0.0)


def _copy_primal(primal: ConicProgram, target: ConicProgram):
    # indices are preserved: primal variable k keeps index k in the target
    for k, name in enumerate(primal.var_names):
        target.var(name)
    for lab, terms, rhs in zip(primal.eq_labels, primal.eq_terms, primal.eq_rhs):
        target.add_eq(lab, list(terms), rhs)
    for lab, terms, rhs in zip(primal.ineq_labels, primal.ineq_terms, primal.ineq_rhs):
        target.add_le(lab, list(terms), rhs)
    for blk in primal.socs:
        target.add_soc(blk.label, [(list(t), g) for t, g in blk.entries])


def _hour_groups(T, tie_hours):
    return [list(range(T))] if tie_hours else [[t] for t in range(T)]


def assemble_closed_form(
    case: NetworkCase,
    levels: BidLevels | None = None,
    flags: ScenarioFlags | None = None,
    actor: tuple[str, str] | None = None,
) -> ConicProgram:
    """Constraint set replacing the lower level: primal + dual + linearized bids
    + strong duality. `actor` is ("genco", id) or ("lse", id); None builds the
    marginal closed form with no binaries."""
    levels = levels or BidLevels()
    flags = flags or ScenarioFlags()
    levels.validate()
    base = case.base_mva
    T = case.horizon

    primal = build_mcp(case, Bids(), flags)
    combined = ConicProgram("max")
    _copy_primal(primal, combined)
    _, info = dualize(primal, into=combined)

    eq_index = {lab: k for k, lab in enumerate(combined.eq_labels)}
    primal_obj_terms = [(primal.var_names[i], c) for i, c in sorted(primal.obj.items())]
    groups: list[BidGroup] = []

    def make_group(kind, entity, seg, hours, base_price, coef_of, p_name_of, cap_of):
        hkey = hours[0] if len(hours) == 1 else "all"
        grp = BidGroup(kind=kind, entity=entity, seg=seg, hours=list(hours), base_price=base_price)
        for c, a in enumerate(levels.alphas):
            name = ("I", kind, entity, seg, hkey, c)
            combined.var(name, lb=0.0, ub=1.0, binary=True)
            grp.i_names.append(name)
            grp.coefs.append(coef_of(a))
        if levels.additive:
            idxs = [(combined[n], a) for n, a in zip(grp.i_names, levels.alphas)]
            combined.add_le(("bid_ub", kind, entity, seg, hkey), idxs, levels.alpha_hi)
            combined.add_le(
                ("bid_lb", kind, entity, seg, hkey), [(i, -a) for i, a in idxs], -levels.alpha_lo
            )
        else:
            combined.add_eq(
                ("onehot", kind, entity, seg, hkey),
                [(combined[n], 1.0) for n in grp.i_names],
                1.0,
            )
        combined.add_onehot([combined[n] for n in grp.i_names])
        for t in hours:
            tag = (kind, entity, seg, t)
            phis = linearize_bid_product(combined, grp.i_names, p_name_of(t), cap_of(t), tag)
            grp.phi_names[t] = phis
            # the bid constant in this variable's dual row becomes level-dependent
            row = eq_index[("stat",) + p_name_of(t)]
            combined.eq_terms[row] = list(combined.eq_terms[row]) + [
                (combined[n], coef) for n, coef in zip(grp.i_names, grp.coefs)
            ]
            combined.eq_rhs[row] = 0.0
        groups.append(grp)

    if actor is not None:
        kind, actor_id = actor
        if kind == "genco":
            owned = [g for g in case.generators if g.owner == actor_id]
            if not owned:
                raise BuildError(f"GENCO '{actor_id}' owns no generators")
            for g in owned:
                for u, s in enumerate(g.segments):
                    cap = s.p_cap / base
                    cpu = s.marginal_cost * base
                    for hours in _hour_groups(T, levels.tie_hours):
                        make_group(
                            "gen", g.id, u, hours, s.marginal_cost,
                            coef_of=lambda a, cpu=cpu: a * cpu,
                            p_name_of=lambda t, gid=g.id, u=u: ("Pgu", gid, u, t),
                            cap_of=lambda t, cap=cap: cap,
                        )
        elif kind == "lse":
            owned = [d for d in case.loads if d.owner == actor_id and d.kind == "curtailable"]
            if not owned:
                raise BuildError(f"LSE '{actor_id}' owns no curtailable loads")
            prof = case.profile
            for d in owned:
                for z, s in enumerate(d.segments):
                    wpu = s.wtp * base
                    shift = flags.shiftable and s.shiftable
                    if shift:
                        total_cap = s.fraction * d.base_p * sum(prof) / base
                    for hours in _hour_groups(T, levels.tie_hours):
                        make_group(
                            "load", d.id, z, hours, s.wtp,
                            coef_of=lambda a, wpu=wpu: -a * wpu,
                            p_name_of=lambda t, did=d.id, z=z: ("Pd", did, z, t),
                            cap_of=(
                                (lambda t, cap=total_cap: cap)
                                if shift
                                else (lambda t, d=d, s=s: s.fraction * d.base_p * prof[t] / base)
                            ),
                        )
        else:
            raise BuildError(f"unknown actor kind '{kind}'")

    # substitute level-dependent bid terms into the primal objective expression
    substituted = {}
    for grp in groups:
        for t in grp.hours:
            key = ("Pgu", grp.entity, grp.seg, t) if grp.kind == "gen" else ("Pd", grp.entity, grp.seg, t)
            substituted[key] = [(phi, coef) for phi, coef in zip(grp.phi_names[t], grp.coefs)]
    sd_primal_terms = []
    for name, coef in primal_obj_terms:
        if name in substituted:
            sd_primal_terms.extend(substituted[name])
        else:
            sd_primal_terms.append((name, coef))
    build_strong_duality_row(combined, sd_primal_terms, info.obj_terms)

    combined.meta = {
        "kind": "closed_form",
        "case": case,
        "flags": flags,
        "levels": levels,
        "actor": actor,
        "groups": groups,
        "primal": primal,
        "dual_info": info,
    }
    return combined
