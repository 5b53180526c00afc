"""Regenerate the case files shipped under src/acbid/cases/.

Deterministic: the 3-bus cases carry the published network data, the 14-bus
case standard IEEE data (transformer taps dropped; the line model has none),
and the 118-bus case is synthesized to the usual dimension signature
(118 buses, 186 lines, 54 units, 99 loads) with a seeded RNG since the true
branch data is not redistributable here. Thermal ratings for the synthetic
case are sized from a lossless clearing of its own peak hour.

Run from the repo root:  python3 tools/build_cases.py
"""

import json
import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from acbid.netcase import case_from_dict  # noqa: E402

OUT = os.path.join(os.path.dirname(__file__), "..", "src", "acbid", "cases")

# normalized daily shape, evening peak at hours 19-21 (1-based)
PROFILE = [
    0.65, 0.62, 0.60, 0.60, 0.61, 0.63, 0.66, 0.70, 0.73, 0.76, 0.80, 0.84,
    0.87, 0.90, 0.93, 0.95, 0.97, 0.98, 0.99, 1.00, 1.00, 0.97, 0.88, 0.75,
]

# sharper evening ramp for the ramping-limit studies
PROFILE_RAMP = [
    0.62, 0.60, 0.59, 0.59, 0.60, 0.62, 0.64, 0.66, 0.68, 0.70, 0.71, 0.72,
    0.73, 0.74, 0.75, 0.76, 0.80, 0.92, 1.00, 1.00, 0.97, 0.88, 0.74, 0.65,
]


def three_bus_lines(scale_smax=1.0):
    return [
        {"id": "L1", "from": "B2", "to": "B1", "r": 0.00281, "x": 0.0281, "b_sh": 0.00712, "s_max": 120.0 * scale_smax},
        {"id": "L2", "from": "B3", "to": "B2", "r": 0.00108, "x": 0.0108, "b_sh": 0.01852, "s_max": 190.0 * scale_smax},
        {"id": "L3", "from": "B1", "to": "B3", "r": 0.00297, "x": 0.0297, "b_sh": 0.00674, "s_max": 170.0 * scale_smax},
    ]


def build_3bus():
    """Published 3-bus data: quadratic curves as printed, moderate reactive load."""
    return {
        "base_mva": 100.0,
        "horizon": 24,
        "buses": [
            {"id": "B1", "vmin": 0.94, "vmax": 1.06},
            {"id": "B2", "vmin": 0.94, "vmax": 1.06},
            {"id": "B3", "vmin": 0.94, "vmax": 1.06},
        ],
        "lines": three_bus_lines(),
        "generators": [
            {
                "id": "G1", "bus": "B1", "owner": "GENCO1",
                "pmin": 0.0, "pmax": 200.0, "qmin": -60.0, "qmax": 150.0,
                "ramp_up": 10.0, "ramp_down": 10.0,
                "cost": {"quad": [2.2, 7.5, 4.07], "n_segments": 3}, "q_cost": 1.0,
            },
            {
                "id": "G2", "bus": "B2", "owner": "GENCO2",
                "pmin": 0.0, "pmax": 250.0, "qmin": -60.0, "qmax": 180.0,
                "ramp_up": 10.0, "ramp_down": 10.0,
                "cost": {"quad": [1.16, 6.7, 6.02], "n_segments": 3}, "q_cost": 1.0,
            },
        ],
        "loads": [
            {
                "id": "D1", "bus": "B3", "kind": "curtailable", "owner": "LSE1",
                "base_p": 255.0, "base_q": 40.0,
                "segments": [{"fraction": 1.0, "wtp": 2000.0}],
            }
        ],
        "profile": PROFILE,
    }


def build_3bus_calibrated():
    """Explicit segment costs and a reactive-limited competitor, tuned so the
    strategic runs land on the published 9 p.m. shape (dispatch ~(66.7, 190),
    cleared prices ~27 lossless / ~30.3 at the load bus)."""
    return {
        "base_mva": 100.0,
        "horizon": 24,
        "buses": [
            {"id": "B1", "vmin": 0.94, "vmax": 1.06},
            {"id": "B2", "vmin": 0.94, "vmax": 1.06},
            {"id": "B3", "vmin": 0.94, "vmax": 1.06},
        ],
        "lines": three_bus_lines(),
        "generators": [
            {
                "id": "G1", "bus": "B1", "owner": "GENCO1",
                "pmin": 0.0, "pmax": 200.0, "qmin": -10.0, "qmax": 30.0,
                "ramp_up": 200.0, "ramp_down": 200.0,
                "segments": [[66.6667, 19.0], [66.6667, 21.43], [66.6666, 34.0]],
                "q_cost": 1.0,
            },
            {
                "id": "G2", "bus": "B2", "owner": "GENCO2",
                "pmin": 0.0, "pmax": 250.0, "qmin": -60.0, "qmax": 120.0,
                "ramp_up": 250.0, "ramp_down": 250.0,
                "segments": [[83.3334, 22.0], [83.3333, 24.0], [83.3333, 28.5]],
                "q_cost": 1.0,
                "rho_minus": [-0.4, -0.4, -0.4],
                "rho_plus": [0.0, 0.0, 0.0],
            },
        ],
        "loads": [
            {
                "id": "D1", "bus": "B3", "kind": "fixed",
                "base_p": 256.0, "base_q": 73.0,
                "segments": [{"fraction": 1.0, "wtp": 500.0}],
            }
        ],
        "profile": PROFILE,
    }


def build_3bus_dr():
    """Curtailable load variant with finite WTP for the ramping / shifting studies."""
    doc = build_3bus()
    doc["generators"][0]["ramp_up"] = doc["generators"][0]["ramp_down"] = 10.0
    doc["generators"][1]["ramp_up"] = doc["generators"][1]["ramp_down"] = 10.0
    doc["loads"] = [
        {
            "id": "D1", "bus": "B3", "kind": "curtailable", "owner": "LSE1",
            "base_p": 255.0, "base_q": 40.0,
            "segments": [{"fraction": 1.0, "wtp": 2000.0}],
        }
    ]
    doc["profile"] = PROFILE_RAMP
    return doc


IEEE14_LINES = [
    # from, to, r, x, b (taps of the three transformers dropped)
    (1, 2, 0.01938, 0.05917, 0.0528),
    (1, 5, 0.05403, 0.22304, 0.0492),
    (2, 3, 0.04699, 0.19797, 0.0438),
    (2, 4, 0.05811, 0.17632, 0.0340),
    (2, 5, 0.05695, 0.17388, 0.0346),
    (3, 4, 0.06701, 0.17103, 0.0128),
    (4, 5, 0.01335, 0.04211, 0.0),
    (4, 7, 0.0, 0.20912, 0.0),
    (4, 9, 0.0, 0.55618, 0.0),
    (5, 6, 0.0, 0.25202, 0.0),
    (6, 11, 0.09498, 0.19890, 0.0),
    (6, 12, 0.12291, 0.25581, 0.0),
    (6, 13, 0.06615, 0.13027, 0.0),
    (7, 8, 0.0, 0.17615, 0.0),
    (7, 9, 0.0, 0.11001, 0.0),
    (9, 10, 0.03181, 0.08450, 0.0),
    (9, 14, 0.12711, 0.27038, 0.0),
    (10, 11, 0.08205, 0.19207, 0.0),
    (12, 13, 0.22092, 0.19988, 0.0),
    (13, 14, 0.17093, 0.34802, 0.0),
]

IEEE14_LOADS = [
    (2, 21.7, 12.7), (3, 94.2, 19.0), (4, 47.8, -3.9), (5, 7.6, 1.6),
    (6, 11.2, 7.5), (9, 29.5, 16.6), (10, 9.0, 5.8), (11, 3.5, 1.8),
    (12, 6.1, 1.6), (13, 13.5, 5.8), (14, 14.9, 5.0),
]

IEEE14_GENS = [
    # bus, pmax, qmin, qmax, quad(a, b, c), owner
    (1, 332.4, -30.0, 100.0, (0.0430, 20.0, 0.0), "GENCO1"),
    (2, 140.0, -40.0, 50.0, (0.2500, 20.0, 0.0), "GENCO2"),
    (3, 100.0, -20.0, 40.0, (0.0100, 40.0, 0.0), "GENCO1"),
    (6, 100.0, -6.0, 24.0, (0.0100, 40.0, 0.0), "GENCO3"),
    (8, 100.0, -6.0, 24.0, (0.0100, 40.0, 0.0), "GENCO4"),
]


def build_ieee14():
    buses = [{"id": f"B{i}", "vmin": 0.94, "vmax": 1.06} for i in range(1, 15)]
    lines = [
        {
            "id": f"L{k+1}", "from": f"B{f}", "to": f"B{t}",
            "r": r, "x": x, "b_sh": b, "s_max": 250.0 if k < 2 else 120.0,
        }
        for k, (f, t, r, x, b) in enumerate(IEEE14_LINES)
    ]
    gens = [
        {
            "id": f"G{k+1}", "bus": f"B{b}", "owner": owner,
            "pmin": 0.0, "pmax": pmax, "qmin": qmin, "qmax": qmax,
            "ramp_up": pmax / 3.0, "ramp_down": pmax / 3.0,
            "cost": {"quad": list(quad), "n_segments": 3}, "q_cost": 1.0,
        }
        for k, (b, pmax, qmin, qmax, quad, owner) in enumerate(IEEE14_GENS)
    ]
    loads = [
        {
            "id": f"D{k+1}", "bus": f"B{b}", "kind": "fixed",
            "base_p": p, "base_q": q,
            "segments": [{"fraction": 0.6, "wtp": 900.0}, {"fraction": 0.4, "wtp": 700.0}],
        }
        for k, (b, p, q) in enumerate(IEEE14_LOADS)
    ]
    return {
        "base_mva": 100.0,
        "horizon": 24,
        "buses": buses,
        "lines": lines,
        "generators": gens,
        "loads": loads,
        "profile": PROFILE,
    }


GEN_BUSES_118 = [
    1, 4, 6, 8, 10, 12, 15, 18, 19, 24, 25, 26, 27, 31, 32, 34, 36, 40, 42, 46,
    49, 54, 55, 56, 59, 61, 62, 65, 66, 69, 70, 72, 73, 74, 76, 77, 80, 85, 87,
    89, 90, 91, 92, 99, 100, 103, 104, 105, 107, 110, 111, 112, 113, 116,
]


def build_ieee118():
    rng = np.random.default_rng(20200818)
    n = 118
    buses = [{"id": f"B{i}", "vmin": 0.94, "vmax": 1.06} for i in range(1, n + 1)]

    edges = []
    seen = set()

    def add_edge(a, b):
        key = (min(a, b), max(a, b))
        if a != b and key not in seen:
            seen.add(key)
            edges.append((a, b))

    for i in range(1, n + 1):  # backbone ring keeps the graph connected
        add_edge(i, i % n + 1)
    hops = [2, 3, 5, 7, 11, 17, 29]
    k = 0
    while len(edges) < 186:
        h = hops[k % len(hops)]
        a = int(rng.integers(1, n + 1))
        add_edge(a, (a + h - 1) % n + 1)
        k += 1

    lines = []
    for k, (f, t) in enumerate(edges):
        x = float(rng.uniform(0.03, 0.20))
        r = x * float(rng.uniform(0.08, 0.30))
        b = float(rng.uniform(0.01, 0.08))
        lines.append(
            {"id": f"L{k+1}", "from": f"B{f}", "to": f"B{t}", "r": round(r, 5),
             "x": round(x, 5), "b_sh": round(b, 5), "s_max": 9999.0}
        )

    gens = []
    for k, b in enumerate(GEN_BUSES_118):
        size = float(rng.choice([60.0, 100.0, 150.0, 220.0, 320.0], p=[0.25, 0.3, 0.2, 0.15, 0.1]))
        beta = float(rng.uniform(16.0, 42.0))
        alpha = float(rng.uniform(0.002, 0.02))
        owner = "GENCO1" if b in (1, 25) else f"GENCO{2 + k % 7}"
        gens.append(
            {
                "id": f"G{b}", "bus": f"B{b}", "owner": owner,
                "pmin": 0.0, "pmax": size, "qmin": round(-0.45 * size, 1), "qmax": round(0.55 * size, 1),
                "ramp_up": round(size / 2.5, 1), "ramp_down": round(size / 2.5, 1),
                "cost": {"quad": [round(alpha, 5), round(beta, 3), 0.0], "n_segments": 3},
                "q_cost": 1.0,
            }
        )
    # the strategic units mirror the published study: moderate size, cheap energy
    for g in gens:
        if g["id"] == "G1":
            g.update(pmax=100.0, qmin=-40.0, qmax=55.0, ramp_up=40.0, ramp_down=40.0,
                     cost={"quad": [0.012, 18.0, 0.0], "n_segments": 3})
        if g["id"] == "G25":
            g.update(pmax=85.0, qmin=-35.0, qmax=45.0, ramp_up=34.0, ramp_down=34.0,
                     cost={"quad": [0.010, 17.0, 0.0], "n_segments": 3})

    total_cap = sum(g["pmax"] for g in gens)
    load_buses = [i for i in range(1, n + 1) if i not in (8, 10, 26, 65, 69, 87, 89, 100, 103, 111)]
    load_buses = sorted(rng.choice(load_buses, size=99, replace=False).tolist())
    weights = rng.uniform(0.4, 2.2, size=99)
    weights /= weights.sum()
    peak_total = 0.58 * total_cap
    loads = []
    for k, (b, w) in enumerate(zip(load_buses, weights)):
        p = round(float(w * peak_total), 1)
        q = round(float(p * rng.uniform(0.22, 0.34)), 1)
        loads.append(
            {
                "id": f"D{k+1}", "bus": f"B{b}", "kind": "fixed",
                "base_p": p, "base_q": q,
                "segments": [{"fraction": 1.0, "wtp": 1000.0}],
            }
        )

    return {
        "base_mva": 100.0,
        "horizon": 24,
        "buses": buses,
        "lines": lines,
        "generators": gens,
        "loads": loads,
        "profile": PROFILE,
    }


def size_line_ratings(doc, margin=1.9, floor=60.0):
    """Rate synthetic lines off a lossless clearing of the case peak hour."""
    from acbid.mcp_primal import ScenarioFlags
    from acbid.verify import dcopf_baseline

    snap = dict(doc)
    snap["horizon"] = 1
    snap["profile"] = [1.0]
    case = case_from_dict(snap)
    out = dcopf_baseline(case, flags=ScenarioFlags(ramping=False))
    if out.status != "optimal":
        raise RuntimeError(f"rating solve failed: {out.status}")
    for l in doc["lines"]:
        flow = abs(out.flow[l["id"]]["ps"][0])
        l["s_max"] = round(max(margin * flow, floor), 1)
    return doc


def main():
    os.makedirs(OUT, exist_ok=True)
    cases = {
        "3bus.json": build_3bus(),
        "3bus_calibrated.json": build_3bus_calibrated(),
        "3bus_dr.json": build_3bus_dr(),
        "ieee14.json": build_ieee14(),
        "ieee118.json": size_line_ratings(build_ieee118()),
    }
    for name, doc in cases.items():
        case_from_dict(doc)  # validate before writing
        path = os.path.join(OUT, name)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=1, sort_keys=True)
            fh.write("\n")
        print("wrote", path)


if __name__ == "__main__":
    main()
