"""Sparse conic program container shared by every builder.

A program is: named variables (optionally bounded / binary / grouped one-hot),
sparse linear equalities and <=-inequalities, second-order cone blocks over
affine expressions, and a linear objective. Names are tuples, e.g.
('Pg', 'G1', 0); rows carry tuple labels the same way so duals can be
extracted per constraint family.

Market-clearing builders emit every constraint the formulation attaches a
multiplier to as an explicit row (no variable bounds), so the program can be
transposed into its explicit dual. Variable bounds are reserved for auxiliary
variables of the mixed-integer layers, which are never dualized.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

Terms = list  # list[(var_index, coefficient)]


class ProgramError(ValueError):
    pass


@dataclass
class SocBlock:
    label: tuple
    # entries[0] is the cone head: ||entries[1:]|| <= entries[0];
    # each entry is (terms, constant)
    entries: list


class ConicProgram:
    def __init__(self, sense: str = "min"):
        if sense not in ("min", "max"):
            raise ProgramError(f"sense must be 'min' or 'max', got {sense!r}")
        self.sense = sense
        self.var_names: list[tuple] = []
        self.var_index: dict[tuple, int] = {}
        self.lb: list[float] = []
        self.ub: list[float] = []
        self.binary: list[bool] = []
        self.onehot_groups: list[list[int]] = []
        self.eq_labels: list[tuple] = []
        self.eq_terms: list[Terms] = []
        self.eq_rhs: list[float] = []
        self.ineq_labels: list[tuple] = []
        self.ineq_terms: list[Terms] = []
        self.ineq_rhs: list[float] = []
        self.socs: list[SocBlock] = []
        self.obj: dict[int, float] = {}
        self.obj_const: float = 0.0

    # -- variables ---------------------------------------------------------

    def var(self, name: tuple, lb=-np.inf, ub=np.inf, binary=False) -> int:
        if name in self.var_index:
            raise ProgramError(f"duplicate variable {name}")
        if binary and not (lb >= 0.0 and ub <= 1.0):
            raise ProgramError(f"binary variable {name} must be bounded in [0, 1]")
        idx = len(self.var_names)
        self.var_names.append(name)
        self.var_index[name] = idx
        self.lb.append(float(lb))
        self.ub.append(float(ub))
        self.binary.append(bool(binary))
        return idx

    def __getitem__(self, name: tuple) -> int:
        return self.var_index[name]

    def __contains__(self, name: tuple) -> bool:
        return name in self.var_index

    @property
    def n_vars(self) -> int:
        return len(self.var_names)

    def binaries(self) -> list[int]:
        return [i for i, b in enumerate(self.binary) if b]

    def add_onehot(self, members: list[int]):
        for i in members:
            if not self.binary[i]:
                raise ProgramError(f"one-hot member {self.var_names[i]} is not binary")
        self.onehot_groups.append(list(members))

    # -- rows ----------------------------------------------------------------

    def add_eq(self, label: tuple, terms: Terms, rhs: float = 0.0) -> int:
        self.eq_labels.append(label)
        self.eq_terms.append(terms)
        self.eq_rhs.append(float(rhs))
        return len(self.eq_labels) - 1

    def add_le(self, label: tuple, terms: Terms, rhs: float = 0.0) -> int:
        self.ineq_labels.append(label)
        self.ineq_terms.append(terms)
        self.ineq_rhs.append(float(rhs))
        return len(self.ineq_labels) - 1

    def add_soc(self, label: tuple, entries) -> int:
        if len(entries) < 2:
            raise ProgramError(f"SOC block {label} needs >= 2 entries")
        norm = []
        for e in entries:
            if isinstance(e, tuple) and len(e) == 2 and isinstance(e[0], list):
                norm.append((e[0], float(e[1])))
            else:
                norm.append((list(e), 0.0))
        self.socs.append(SocBlock(label, norm))
        return len(self.socs) - 1

    # -- objective -----------------------------------------------------------

    def add_obj(self, idx: int, coef: float):
        if coef != 0.0:
            self.obj[idx] = self.obj.get(idx, 0.0) + coef

    def obj_vector(self) -> np.ndarray:
        q = np.zeros(self.n_vars)
        for i, c in self.obj.items():
            q[i] = c
        return q

    def obj_value(self, x: np.ndarray) -> float:
        return float(sum(c * x[i] for i, c in self.obj.items()) + self.obj_const)

    # -- assembly ------------------------------------------------------------

    def bound_rows(self):
        """Finite variable bounds as (label, terms, rhs) <=-rows, lb first."""
        rows = []
        for i, lo in enumerate(self.lb):
            if np.isfinite(lo):
                rows.append((("lb", self.var_names[i]), [(i, -1.0)], -lo))
        for i, hi in enumerate(self.ub):
            if np.isfinite(hi):
                rows.append((("ub", self.var_names[i]), [(i, 1.0)], hi))
        return rows

    def has_finite_bounds(self) -> bool:
        return any(np.isfinite(v) for v in self.lb) or any(np.isfinite(v) for v in self.ub)

    def _stack(self, rows_terms, rows_rhs, extra=()):
        data, ri, ci, rhs = [], [], [], []
        r = 0
        for terms, b in zip(rows_terms, rows_rhs):
            for col, v in terms:
                if v != 0.0:
                    ri.append(r)
                    ci.append(col)
                    data.append(v)
            rhs.append(b)
            r += 1
        for _label, terms, b in extra:
            for col, v in terms:
                if v != 0.0:
                    ri.append(r)
                    ci.append(col)
                    data.append(v)
            rhs.append(b)
            r += 1
        A = sparse.csc_matrix((data, (ri, ci)), shape=(r, self.n_vars))
        return A, np.array(rhs)

    def matrices(self, node_bounds: dict[int, tuple[float, float]] | None = None):
        """(A_eq, b_eq, A_in, b_in, soc_mats) with bounds and node overrides as rows.

        soc_mats is a list of (F, g) with the cone read as Fx + g in SOC (head first).
        """
        A_eq, b_eq = self._stack(self.eq_terms, self.eq_rhs)
        extra = self.bound_rows()
        if node_bounds:
            for i, (lo, hi) in sorted(node_bounds.items()):
                if np.isfinite(lo):
                    extra.append((("node_lb", self.var_names[i]), [(i, -1.0)], -lo))
                if np.isfinite(hi):
                    extra.append((("node_ub", self.var_names[i]), [(i, 1.0)], hi))
        A_in, b_in = self._stack(self.ineq_terms, self.ineq_rhs, extra)
        soc_mats = []
        for blk in self.socs:
            data, ri, ci = [], [], []
            g = np.zeros(len(blk.entries))
            for k, (terms, const) in enumerate(blk.entries):
                g[k] = const
                for col, v in terms:
                    if v != 0.0:
                        ri.append(k)
                        ci.append(col)
                        data.append(v)
            F = sparse.csc_matrix((data, (ri, ci)), shape=(len(blk.entries), self.n_vars))
            soc_mats.append((F, g))
        return A_eq, b_eq, A_in, b_in, soc_mats

    def all_ineq(self):
        """All inequality rows (explicit, then bounds) as (label, terms, rhs)."""
        for label, terms, rhs in zip(self.ineq_labels, self.ineq_terms, self.ineq_rhs):
            yield label, terms, rhs
        yield from self.bound_rows()

    def validate(self):
        for blk in self.socs:
            if len(blk.entries) < 2:
                raise ProgramError(f"SOC block {blk.label} has < 2 entries")
        for i in self.binaries():
            if not (self.lb[i] >= 0.0 and self.ub[i] <= 1.0):
                raise ProgramError(f"binary {self.var_names[i]} not bounded in [0, 1]")

    # -- debug dump/load -------------------------------------------------------

    def dumps(self) -> str:
        doc = {
            "sense": self.sense,
            "vars": [
                {"name": list(n), "lb": _num(self.lb[i]), "ub": _num(self.ub[i]), "binary": self.binary[i]}
                for i, n in enumerate(self.var_names)
            ],
            "onehot": self.onehot_groups,
            "eq": [
                {"label": list(l), "terms": t, "rhs": r}
                for l, t, r in zip(self.eq_labels, self.eq_terms, self.eq_rhs)
            ],
            "ineq": [
                {"label": list(l), "terms": t, "rhs": r}
                for l, t, r in zip(self.ineq_labels, self.ineq_terms, self.ineq_rhs)
            ],
            "soc": [
                {"label": list(b.label), "entries": [[t, c] for t, c in b.entries]}
                for b in self.socs
            ],
            "obj": sorted(self.obj.items()),
            "obj_const": self.obj_const,
        }
        return json.dumps(doc, default=_jsonable)

    @classmethod
    def loads(cls, text: str) -> "ConicProgram":
        doc = json.loads(text)
        prog = cls(sense=doc["sense"])
        for v in doc["vars"]:
            prog.var(_detuple(v["name"]), lb=_denum(v["lb"]), ub=_denum(v["ub"]), binary=v["binary"])
        for row in doc["eq"]:
            prog.add_eq(_detuple(row["label"]), [(int(i), float(c)) for i, c in row["terms"]], row["rhs"])
        for row in doc["ineq"]:
            prog.add_le(_detuple(row["label"]), [(int(i), float(c)) for i, c in row["terms"]], row["rhs"])
        for blk in doc["soc"]:
            prog.add_soc(_detuple(blk["label"]), [([(int(i), float(c)) for i, c in t], g) for t, g in blk["entries"]])
        for i, c in doc["obj"]:
            prog.add_obj(int(i), float(c))
        prog.obj_const = doc["obj_const"]
        for grp in doc["onehot"]:
            prog.add_onehot([int(i) for i in grp])
        return prog


def _num(v):
    if v == -np.inf:
        return "-inf"
    if v == np.inf:
        return "inf"
    return v


def _denum(v):
    if v == "-inf":
        return -np.inf
    if v == "inf":
        return np.inf
    return float(v)


def _jsonable(o):
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not serializable: {o!r}")


def _detuple(x):
    if isinstance(x, list):
        return tuple(_detuple(e) for e in x)
    return x


def label_str(label: tuple) -> str:
    """Stable flat string form of a tuple label for reports and CSV headers."""
    parts = []
    for p in label:
        if isinstance(p, tuple):
            parts.append("(" + ",".join(str(q) for q in p) + ")")
        else:
            parts.append(str(p))
    return ":".join(parts)
