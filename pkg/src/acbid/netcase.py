"""Network/market case model: parsing, validation, cost segmentation, demand profiles.

Cases live in a small JSON schema (see docs/case-format.md). All powers are MW/MVAr,
impedances and voltages per-unit on ``base_mva``. Values are normalized to per-unit
only inside the program builders, never here.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np


class CaseError(ValueError):
    """Schema or invariant violation in a case file."""


def _req(obj, key, where):
    if key not in obj:
        raise CaseError(f"{where}: missing field '{key}'")
    return obj[key]


@dataclass(frozen=True)
class Bus:
    id: str
    vmin: float
    vmax: float

    def validate(self, where):
        if not 0.0 < self.vmin <= self.vmax:
            raise CaseError(f"{where}: need 0 < vmin <= vmax, got [{self.vmin}, {self.vmax}]")


@dataclass(frozen=True)
class Line:
    id: str
    from_bus: str
    to_bus: str
    r: float
    x: float
    b_sh: float
    s_max: float
    eps: float | None = None  # thermal linearization coefficient; None = case default

    @property
    def g(self) -> float:
        return self.r / (self.r**2 + self.x**2)

    @property
    def b(self) -> float:
        return -self.x / (self.r**2 + self.x**2)

    def validate(self, where):
        if self.x == 0.0:
            raise CaseError(f"{where}: reactance x must be nonzero")
        if self.r < 0.0:
            raise CaseError(f"{where}: resistance r must be nonnegative")
        if self.s_max <= 0.0:
            raise CaseError(f"{where}: s_max must be positive")
        if self.eps is not None and self.eps < 0.0:
            raise CaseError(f"{where}: eps must be nonnegative")
        if self.from_bus == self.to_bus:
            raise CaseError(f"{where}: self-loop {self.from_bus}")


@dataclass(frozen=True)
class Segment:
    p_cap: float  # MW width of the block
    marginal_cost: float  # $/MWh


def segment_cost(cost_quad, pmin, pmax, n_segments) -> list[Segment]:
    """Split a quadratic cost (a, b, c) into equal-width blocks priced at the
    midpoint derivative b + 2*a*mid. Nondecreasing for a >= 0."""
    if n_segments < 1:
        raise CaseError(f"n_segments must be >= 1, got {n_segments}")
    if pmax <= pmin:
        raise CaseError(f"need pmax > pmin, got [{pmin}, {pmax}]")
    a, b, _c = cost_quad
    if a < 0.0:
        raise CaseError(f"quadratic coefficient must be nonnegative for a convex curve, got {a}")
    width = (pmax - pmin) / n_segments
    out = []
    for u in range(n_segments):
        mid = pmin + (u + 0.5) * width
        out.append(Segment(p_cap=width, marginal_cost=b + 2.0 * a * mid))
    return out


@dataclass(frozen=True)
class Generator:
    id: str
    bus: str
    pmin: float
    pmax: float
    qmin: float
    qmax: float
    ramp_up: float
    ramp_down: float
    q_cost: float
    segments: tuple[Segment, ...]
    rho_minus: tuple[float, ...]  # per segment, <= 0
    rho_plus: tuple[float, ...]  # per segment, >= 0
    owner: str = ""
    cost_quad: tuple[float, float, float] | None = None

    def validate(self, where):
        if self.pmin > self.pmax:
            raise CaseError(f"{where}: pmin > pmax")
        if self.qmin > self.qmax:
            raise CaseError(f"{where}: qmin > qmax")
        if self.ramp_up < 0 or self.ramp_down < 0:
            raise CaseError(f"{where}: ramp rates must be nonnegative")
        if not self.segments:
            raise CaseError(f"{where}: at least one cost segment required")
        cap = sum(s.p_cap for s in self.segments)
        span = self.pmax - self.pmin
        if abs(cap - span) > 1e-6 * max(1.0, abs(span)):
            raise CaseError(f"{where}: segment caps sum to {cap}, expected pmax-pmin = {span}")
        mcs = [s.marginal_cost for s in self.segments]
        if any(m2 < m1 - 1e-9 for m1, m2 in zip(mcs, mcs[1:])):
            raise CaseError(f"{where}: segment marginal costs must be nondecreasing, got {mcs}")
        if len(self.rho_minus) != len(self.segments) or len(self.rho_plus) != len(self.segments):
            raise CaseError(f"{where}: capability slope count must match segment count")
        if any(r > 0 for r in self.rho_minus):
            raise CaseError(f"{where}: rho_minus entries must be <= 0")
        if any(r < 0 for r in self.rho_plus):
            raise CaseError(f"{where}: rho_plus entries must be >= 0")


@dataclass(frozen=True)
class LoadSegment:
    fraction: float  # chi, share of the load's demand
    wtp: float  # $/MWh willingness to pay
    shiftable: bool = False


@dataclass(frozen=True)
class Load:
    id: str
    bus: str
    kind: str  # "fixed" | "curtailable"
    base_p: float
    base_q: float
    segments: tuple[LoadSegment, ...]
    owner: str = ""  # load-serving entity, for demand-side bidding

    def validate(self, where):
        if self.kind not in ("fixed", "curtailable"):
            raise CaseError(f"{where}: kind must be 'fixed' or 'curtailable', got '{self.kind}'")
        if self.base_p < 0:
            raise CaseError(f"{where}: base_p must be nonnegative")
        if not self.segments:
            raise CaseError(f"{where}: at least one segment required")
        fr = sum(s.fraction for s in self.segments)
        if any(not 0.0 <= s.fraction <= 1.0 for s in self.segments):
            raise CaseError(f"{where}: segment fractions must lie in [0, 1]")
        if self.kind == "fixed":
            if abs(fr - 1.0) > 1e-9:
                raise CaseError(f"{where}: fixed-load segment fractions must sum to 1, got {fr}")
            if any(s.shiftable for s in self.segments):
                raise CaseError(f"{where}: shiftable flags are only allowed on curtailable loads")
        else:
            if fr > 1.0 + 1e-9:
                raise CaseError(f"{where}: curtailable segment fractions must sum to <= 1, got {fr}")


@dataclass(frozen=True)
class NetworkCase:
    base_mva: float
    horizon: int
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    generators: tuple[Generator, ...]
    loads: tuple[Load, ...]
    profile: tuple[float, ...]

    def __post_init__(self):
        self.validate()

    # -- lookups ---------------------------------------------------------

    def bus_ids(self):
        return [b.id for b in self.buses]

    def bus(self, bus_id) -> Bus:
        for b in self.buses:
            if b.id == bus_id:
                return b
        raise KeyError(bus_id)

    def generator(self, gen_id) -> Generator:
        for g in self.generators:
            if g.id == gen_id:
                return g
        raise KeyError(gen_id)

    def load(self, load_id) -> Load:
        for d in self.loads:
            if d.id == load_id:
                return d
        raise KeyError(load_id)

    def line(self, line_id) -> Line:
        for l in self.lines:
            if l.id == line_id:
                return l
        raise KeyError(line_id)

    def owners(self):
        return sorted({g.owner for g in self.generators if g.owner})

    def default_eps(self) -> float:
        """Aggregate |Q|/|P| ratio of the load, used when a line carries no eps."""
        p = sum(abs(d.base_p) for d in self.loads)
        q = sum(abs(d.base_q) for d in self.loads)
        return q / p if p > 0 else 0.0

    def line_eps(self, line: Line) -> float:
        return line.eps if line.eps is not None else self.default_eps()

    def buspairs(self):
        """Distinct (from, to) pairs carrying lines, duplicates and reversals merged.

        Returns an ordered list of (i, j) pairs; parallel/reversed lines map onto the
        pair of their first-seen orientation.
        """
        pairs: list[tuple[str, str]] = []
        seen: dict[frozenset, tuple[str, str]] = {}
        for l in self.lines:
            key = frozenset((l.from_bus, l.to_bus))
            if key not in seen:
                seen[key] = (l.from_bus, l.to_bus)
                pairs.append((l.from_bus, l.to_bus))
        return pairs

    def line_pair(self, line: Line):
        """Map a line to its buspair and whether it is aligned with the pair orientation."""
        for (i, j) in self.buspairs():
            if (line.from_bus, line.to_bus) == (i, j):
                return (i, j), True
            if (line.from_bus, line.to_bus) == (j, i):
                return (i, j), False
        raise KeyError(line.id)

    # -- validation ------------------------------------------------------

    def validate(self):
        if self.base_mva <= 0:
            raise CaseError("base_mva must be positive")
        if self.horizon < 1:
            raise CaseError("horizon must be >= 1")
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise CaseError("duplicate bus ids")
        for k, b in enumerate(self.buses):
            b.validate(f"buses[{k}] ({b.id})")
        known = set(ids)
        lids = [l.id for l in self.lines]
        if len(set(lids)) != len(lids):
            raise CaseError("duplicate line ids")
        for k, l in enumerate(self.lines):
            l.validate(f"lines[{k}] ({l.id})")
            for end in (l.from_bus, l.to_bus):
                if end not in known:
                    raise CaseError(f"lines[{k}] ({l.id}): unknown bus '{end}'")
        gids = [g.id for g in self.generators]
        if len(set(gids)) != len(gids):
            raise CaseError("duplicate generator ids")
        for k, g in enumerate(self.generators):
            g.validate(f"generators[{k}] ({g.id})")
            if g.bus not in known:
                raise CaseError(f"generators[{k}] ({g.id}): unknown bus '{g.bus}'")
        dids = [d.id for d in self.loads]
        if len(set(dids)) != len(dids):
            raise CaseError("duplicate load ids")
        for k, d in enumerate(self.loads):
            d.validate(f"loads[{k}] ({d.id})")
            if d.bus not in known:
                raise CaseError(f"loads[{k}] ({d.id}): unknown bus '{d.bus}'")
        if len(self.profile) != self.horizon:
            raise CaseError(f"profile length {len(self.profile)} != horizon {self.horizon}")
        if any(not 0.0 <= m <= 1.0 for m in self.profile):
            raise CaseError("profile multipliers must lie in [0, 1]")
        self._check_connected()

    def _check_connected(self):
        if len(self.buses) <= 1:
            return
        adj: dict[str, list[str]] = {b.id: [] for b in self.buses}
        for l in self.lines:
            adj[l.from_bus].append(l.to_bus)
            adj[l.to_bus].append(l.from_bus)
        seen = {self.buses[0].id}
        stack = [self.buses[0].id]
        while stack:
            for nb in adj[stack.pop()]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        missing = [b.id for b in self.buses if b.id not in seen]
        if missing:
            raise CaseError(f"network graph is not connected; unreachable buses: {missing}")

    # -- serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "base_mva": self.base_mva,
            "horizon": self.horizon,
            "buses": [{"id": b.id, "vmin": b.vmin, "vmax": b.vmax} for b in self.buses],
            "lines": [
                {
                    "id": l.id,
                    "from": l.from_bus,
                    "to": l.to_bus,
                    "r": l.r,
                    "x": l.x,
                    "b_sh": l.b_sh,
                    "s_max": l.s_max,
                    **({"eps": l.eps} if l.eps is not None else {}),
                }
                for l in self.lines
            ],
            "generators": [
                {
                    "id": g.id,
                    "bus": g.bus,
                    "owner": g.owner,
                    "pmin": g.pmin,
                    "pmax": g.pmax,
                    "qmin": g.qmin,
                    "qmax": g.qmax,
                    "ramp_up": g.ramp_up,
                    "ramp_down": g.ramp_down,
                    "q_cost": g.q_cost,
                    **(
                        {"cost": {"quad": list(g.cost_quad), "n_segments": len(g.segments)}}
                        if g.cost_quad is not None
                        else {"segments": [[s.p_cap, s.marginal_cost] for s in g.segments]}
                    ),
                    "rho_minus": list(g.rho_minus),
                    "rho_plus": list(g.rho_plus),
                }
                for g in self.generators
            ],
            "loads": [
                {
                    "id": d.id,
                    "bus": d.bus,
                    "kind": d.kind,
                    "owner": d.owner,
                    "base_p": d.base_p,
                    "base_q": d.base_q,
                    "segments": [
                        {"fraction": s.fraction, "wtp": s.wtp, "shiftable": s.shiftable}
                        for s in d.segments
                    ],
                }
                for d in self.loads
            ],
            "profile": list(self.profile),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


DEFAULT_N_SEGMENTS = 3


def _parse_generator(obj, k) -> Generator:
    where = f"generators[{k}]"
    gid = _req(obj, "id", where)
    where = f"{where} ({gid})"
    pmin = float(_req(obj, "pmin", where))
    pmax = float(_req(obj, "pmax", where))
    cost_quad = None
    if "segments" in obj:
        segs = tuple(Segment(float(c), float(m)) for c, m in obj["segments"])
    elif "cost" in obj:
        cost = obj["cost"]
        quad = _req(cost, "quad", f"{where}.cost")
        if len(quad) != 3:
            raise CaseError(f"{where}.cost.quad: expected [a, b, c]")
        cost_quad = (float(quad[0]), float(quad[1]), float(quad[2]))
        n = int(cost.get("n_segments", DEFAULT_N_SEGMENTS))
        segs = tuple(segment_cost(cost_quad, pmin, pmax, n))
    else:
        raise CaseError(f"{where}: needs either 'segments' or 'cost'")
    nu = len(segs)
    rho_minus = tuple(float(v) for v in obj.get("rho_minus", [0.0] * nu))
    rho_plus = tuple(float(v) for v in obj.get("rho_plus", [0.0] * nu))
    return Generator(
        id=gid,
        bus=_req(obj, "bus", where),
        pmin=pmin,
        pmax=pmax,
        qmin=float(_req(obj, "qmin", where)),
        qmax=float(_req(obj, "qmax", where)),
        ramp_up=float(obj.get("ramp_up", pmax)),
        ramp_down=float(obj.get("ramp_down", pmax)),
        q_cost=float(obj.get("q_cost", 0.0)),
        segments=segs,
        rho_minus=rho_minus,
        rho_plus=rho_plus,
        owner=str(obj.get("owner", "")),
        cost_quad=cost_quad,
    )


def case_from_dict(doc: dict) -> NetworkCase:
    horizon = int(doc.get("horizon", 24))
    buses = tuple(
        Bus(_req(b, "id", f"buses[{k}]"), float(_req(b, "vmin", f"buses[{k}]")), float(_req(b, "vmax", f"buses[{k}]")))
        for k, b in enumerate(_req(doc, "buses", "case"))
    )
    lines = tuple(
        Line(
            id=_req(l, "id", f"lines[{k}]"),
            from_bus=_req(l, "from", f"lines[{k}]"),
            to_bus=_req(l, "to", f"lines[{k}]"),
            r=float(_req(l, "r", f"lines[{k}]")),
            x=float(_req(l, "x", f"lines[{k}]")),
            b_sh=float(l.get("b_sh", 0.0)),
            s_max=float(_req(l, "s_max", f"lines[{k}]")),
            eps=(float(l["eps"]) if l.get("eps") is not None else None),
        )
        for k, l in enumerate(_req(doc, "lines", "case"))
    )
    gens = tuple(_parse_generator(g, k) for k, g in enumerate(_req(doc, "generators", "case")))
    loads = tuple(
        Load(
            id=_req(d, "id", f"loads[{k}]"),
            bus=_req(d, "bus", f"loads[{k}]"),
            kind=str(d.get("kind", "fixed")),
            owner=str(d.get("owner", "")),
            base_p=float(_req(d, "base_p", f"loads[{k}]")),
            base_q=float(d.get("base_q", 0.0)),
            segments=tuple(
                LoadSegment(float(_req(s, "fraction", f"loads[{k}].segments[{z}]")),
                            float(_req(s, "wtp", f"loads[{k}].segments[{z}]")),
                            bool(s.get("shiftable", False)))
                for z, s in enumerate(_req(d, "segments", f"loads[{k}]"))
            ),
        )
        for k, d in enumerate(_req(doc, "loads", "case"))
    )
    profile = tuple(float(m) for m in doc.get("profile", [1.0] * horizon))
    return NetworkCase(
        base_mva=float(doc.get("base_mva", 100.0)),
        horizon=horizon,
        buses=buses,
        lines=lines,
        generators=gens,
        loads=loads,
        profile=profile,
    )


def parse_case(path) -> NetworkCase:
    """Read and validate a case file. Raises CaseError naming field and location."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as e:
            raise CaseError(f"{path}: not valid JSON: {e}") from e
    return case_from_dict(doc)


def hourly_demand(case: NetworkCase):
    """Per-load, per-hour (p, q) in MW/MVAr: base scaled by the profile multiplier.

    Returns two (n_loads, horizon) arrays ordered like case.loads.
    """
    prof = np.asarray(case.profile, dtype=float)
    p = np.array([d.base_p for d in case.loads], dtype=float)[:, None] * prof[None, :]
    q = np.array([d.base_q for d in case.loads], dtype=float)[:, None] * prof[None, :]
    return p, q


def scale_line(case: NetworkCase, line_id: str, s_max: float) -> NetworkCase:
    """Copy of the case with one line's thermal limit replaced (congestion studies)."""
    lines = tuple(replace(l, s_max=s_max) if l.id == line_id else l for l in case.lines)
    if all(l.id != line_id for l in case.lines):
        raise CaseError(f"unknown line '{line_id}'")
    return replace(case, lines=lines)


def scale_voltage_bounds(case: NetworkCase, vmin: float, vmax: float) -> NetworkCase:
    """Copy of the case with every bus voltage band replaced."""
    return replace(case, buses=tuple(replace(b, vmin=vmin, vmax=vmax) for b in case.buses))


def cap_reactive(case: NetworkCase, caps: dict[str, float]) -> NetworkCase:
    """Copy of the case with generator qmax capped (limited reactive support studies)."""
    for gid in caps:
        case.generator(gid)
    gens = tuple(
        replace(g, qmax=min(g.qmax, caps[g.id]), qmin=min(g.qmin, caps[g.id])) if g.id in caps else g
        for g in case.generators
    )
    return replace(case, generators=gens)


def set_shiftable_fraction(case: NetworkCase, fraction: float, load_ids=None) -> NetworkCase:
    """Copy of the case where each selected curtailable load gets a shiftable slice.

    The load's segments are rebuilt as one non-shiftable segment of weight
    (1 - fraction) and one shiftable segment of weight `fraction`, both at the
    load's first-segment WTP.
    """
    if not 0.0 <= fraction < 1.0:
        raise CaseError(f"shiftable fraction must lie in [0, 1), got {fraction}")
    out = []
    for d in case.loads:
        if d.kind != "curtailable" or (load_ids is not None and d.id not in load_ids):
            out.append(d)
            continue
        wtp = d.segments[0].wtp
        if fraction == 0.0:
            segs = (LoadSegment(1.0, wtp, False),)
        else:
            segs = (LoadSegment(1.0 - fraction, wtp, False), LoadSegment(fraction, wtp, True))
        out.append(replace(d, segments=segs))
    return replace(case, loads=tuple(out))
