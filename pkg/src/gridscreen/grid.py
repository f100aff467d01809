"""MATPOWER case parsing and bus admittance matrix construction.

A :class:`GridCase` keeps the raw MATPOWER tables (in-service rows only, in
file order) and exposes per-unit views with buses renumbered to dense 0-based
indices. Angles are radians everywhere except inside the raw tables.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import scipy.sparse as sp

# MATPOWER column indices (0-based)
BUS_I, BUS_TYPE, PD, QD, GS, BS, BUS_AREA, VM, VA, BASE_KV, ZONE, VMAX, VMIN = range(13)
GEN_BUS, PG, QG, QMAX, QMIN, VG, MBASE, GEN_STATUS, PMAX, PMIN = range(10)
F_BUS, T_BUS, BR_R, BR_X, BR_B, RATE_A, RATE_B, RATE_C, TAP, SHIFT, BR_STATUS = range(11)

PQ, PV, REF, NONE = 1, 2, 3, 4

BUILTIN_CASES = {
    "case14": "pglib_opf_case14_ieee.m",
    "case30": "pglib_opf_case30_ieee.m",
    "case57": "pglib_opf_case57_ieee.m",
    "case118": "pglib_opf_case118_ieee.m",
}


class CaseError(ValueError):
    """Structurally invalid case data."""


class ParseError(CaseError):
    def __init__(self, msg, lineno=None):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {msg}" if lineno is not None else msg)


@dataclass(frozen=True, eq=False)
class GridCase:
    """Static network description parsed from a MATPOWER case.

    ``bus``, ``gen`` and ``branch`` are the raw MATPOWER tables restricted to
    in-service rows. Everything else is derived in per-unit on ``base_mva``.
    """

    name: str
    base_mva: float
    bus: np.ndarray
    gen: np.ndarray
    branch: np.ndarray
    _index: dict = field(init=False, repr=False)

    def __post_init__(self):
        for tab in (self.bus, self.gen, self.branch):
            tab.setflags(write=False)
        ids = self.bus[:, BUS_I].astype(int)
        index = {}
        for i, b in enumerate(ids):
            if b in index:
                raise CaseError(f"duplicate bus id {b}")
            index[b] = i
        object.__setattr__(self, "_index", index)
        for col in (F_BUS, T_BUS):
            for b in self.branch[:, col].astype(int):
                if b not in index:
                    raise CaseError(f"branch endpoint {b} is not a bus id")
        for b in self.gen[:, GEN_BUS].astype(int):
            if b not in index:
                raise CaseError(f"generator bus {b} is not a bus id")
        z2 = self.branch[:, BR_R] ** 2 + self.branch[:, BR_X] ** 2
        if np.any(z2 <= 0):
            raise CaseError(f"zero series impedance on branch {int(np.argmin(z2))}")
        nslack = int(np.sum(self.bus[:, BUS_TYPE] == REF))
        if nslack != 1:
            raise CaseError(f"expected exactly one slack bus, found {nslack}")

    # -- sizes -------------------------------------------------------------
    @property
    def n_bus(self) -> int:
        return len(self.bus)

    @property
    def n_branch(self) -> int:
        return len(self.branch)

    @property
    def n_gen(self) -> int:
        return len(self.gen)

    # -- buses -------------------------------------------------------------
    @property
    def bus_ids(self) -> np.ndarray:
        return self.bus[:, BUS_I].astype(int)

    def bus_index(self, bus_id: int) -> int:
        return self._index[int(bus_id)]

    @property
    def bus_type(self) -> np.ndarray:
        return self.bus[:, BUS_TYPE].astype(int)

    @property
    def Pd(self):
        return self.bus[:, PD] / self.base_mva

    @property
    def Qd(self):
        return self.bus[:, QD] / self.base_mva

    @property
    def Gs(self):
        return self.bus[:, GS] / self.base_mva

    @property
    def Bs(self):
        return self.bus[:, BS] / self.base_mva

    @property
    def Vmax(self):
        return self.bus[:, VMAX].copy()

    @property
    def Vmin(self):
        return self.bus[:, VMIN].copy()

    @property
    def Vm_set(self) -> np.ndarray:
        """Voltage setpoint per bus: generator Vg where a generator sits, else the bus Vm."""
        vm = self.bus[:, VM].copy()
        vm[self.gen_bus] = self.gen[:, VG]
        return vm

    # -- generators --------------------------------------------------------
    @property
    def gen_bus(self) -> np.ndarray:
        return np.array([self._index[b] for b in self.gen[:, GEN_BUS].astype(int)], dtype=int)

    @property
    def Pg(self):
        return self.gen[:, PG] / self.base_mva

    @property
    def Qg(self):
        return self.gen[:, QG] / self.base_mva

    @property
    def Qmax(self):
        return self.gen[:, QMAX] / self.base_mva

    @property
    def Qmin(self):
        return self.gen[:, QMIN] / self.base_mva

    @property
    def Vg(self):
        return self.gen[:, VG].copy()

    def gen_incidence(self) -> np.ndarray:
        """Dense (n_bus, n_gen) 0/1 matrix mapping generators onto their buses."""
        cg = np.zeros((self.n_bus, self.n_gen))
        cg[self.gen_bus, np.arange(self.n_gen)] = 1.0
        return cg

    # -- branches ----------------------------------------------------------
    @property
    def f(self) -> np.ndarray:
        return np.array([self._index[b] for b in self.branch[:, F_BUS].astype(int)], dtype=int)

    @property
    def t(self) -> np.ndarray:
        return np.array([self._index[b] for b in self.branch[:, T_BUS].astype(int)], dtype=int)

    @property
    def r(self):
        return self.branch[:, BR_R].copy()

    @property
    def x(self):
        return self.branch[:, BR_X].copy()

    @property
    def b_ch(self):
        return self.branch[:, BR_B].copy()

    @property
    def tap(self) -> np.ndarray:
        # MATPOWER convention: ratio 0 means a line (ratio 1)
        tap = self.branch[:, TAP].copy()
        tap[tap == 0] = 1.0
        return tap

    @property
    def shift(self):
        return np.deg2rad(self.branch[:, SHIFT])

    @property
    def rate_a(self):
        return self.branch[:, RATE_A] / self.base_mva

    @property
    def is_transformer(self) -> np.ndarray:
        return (self.branch[:, TAP] != 0) | (self.branch[:, SHIFT] != 0)

    def summary(self) -> dict:
        slack, pv, pq = bus_partition(self)
        return {
            "name": self.name,
            "base_mva": self.base_mva,
            "buses": self.n_bus,
            "branches": self.n_branch,
            "transformers": int(self.is_transformer.sum()),
            "lines": int((~self.is_transformer).sum()),
            "generators": self.n_gen,
            "non_slack_generators": int(np.sum(self.gen_bus != slack[0])),
            "slack": int(self.bus_ids[slack[0]]),
            "pv_buses": len(pv),
            "pq_buses": len(pq),
            "load_buses": int(np.sum((self.bus[:, PD] != 0) | (self.bus[:, QD] != 0))),
        }

    def __eq__(self, other):
        if not isinstance(other, GridCase):
            return NotImplemented
        return (
            self.name == other.name
            and self.base_mva == other.base_mva
            and all(
                a.shape == b.shape and np.array_equal(a, b)
                for a, b in ((self.bus, other.bus), (self.gen, other.gen), (self.branch, other.branch))
            )
        )

    __hash__ = None


def bus_partition(case: GridCase):
    """Return ``(slack, pv, pq)`` index arrays.

    A non-slack bus hosting an in-service generator is PV regardless of the
    type column; every other non-slack bus is PQ.
    """
    slack = np.flatnonzero(case.bus_type == REF)
    if len(slack) != 1:
        raise CaseError(f"expected exactly one slack bus, found {len(slack)}")
    has_gen = np.zeros(case.n_bus, dtype=bool)
    has_gen[case.gen_bus] = True
    has_gen[slack] = False
    pv = np.flatnonzero(has_gen)
    pq = np.flatnonzero(~has_gen & (case.bus_type != REF))
    return slack, pv, pq


# -- parsing ---------------------------------------------------------------

_ASSIGN = re.compile(r"^\s*mpc\.(\w+)\s*=\s*(.*)$")
_FUNC = re.compile(r"^\s*function\s+\w+\s*=\s*(\w+)")


def _strip_comment(line: str) -> str:
    i = line.find("%")
    return line if i < 0 else line[:i]


def _parse_matrix(lines, start, first_rest):
    """Parse a ``[ ... ];`` numeric block beginning at ``lines[start]``.

    Returns (rows, index of the line holding the closing bracket).
    """
    rows, current = [], []
    body = first_rest.split("[", 1)[1]
    i = start
    while True:
        text = _strip_comment(body)
        closed = "]" in text
        if closed:
            text = text.split("]", 1)[0]
        for chunk_no, chunk in enumerate(text.split(";")):
            if chunk_no > 0 and current:
                rows.append((current, i + 1))
                current = []
            for tok in chunk.replace(",", " ").split():
                try:
                    current.append(float(tok))
                except ValueError:
                    raise ParseError(f"bad number {tok!r}", i + 1) from None
        if current and not closed:
            # newline also terminates a row
            rows.append((current, i + 1))
            current = []
        if closed:
            if current:
                rows.append((current, i + 1))
            return rows, i
        i += 1
        if i >= len(lines):
            raise ParseError("unterminated matrix", start + 1)
        body = lines[i]


def _to_table(rows, ncols, label):
    out = []
    for vals, lineno in rows:
        if len(vals) < ncols:
            raise ParseError(f"{label} row has {len(vals)} columns, need {ncols}", lineno)
        out.append(vals)
    if not out:
        return np.zeros((0, ncols))
    width = max(len(v) for v in out)
    tab = np.zeros((len(out), width))
    for k, v in enumerate(out):
        tab[k, : len(v)] = v
    return tab


def parse_matpower(text: str, name: str | None = None) -> GridCase:
    """Parse the text of a MATPOWER ``.m`` case file.

    Only ``mpc.baseMVA``, ``mpc.bus``, ``mpc.gen`` and ``mpc.branch`` are read;
    other blocks are skipped. Out-of-service generators and branches are
    dropped.
    """
    lines = text.splitlines()
    blocks, base_mva = {}, None
    i = 0
    while i < len(lines):
        raw = lines[i]
        m = _FUNC.match(_strip_comment(raw))
        if m and name is None:
            name = m.group(1)
        m = _ASSIGN.match(_strip_comment(raw))
        if m:
            key, rest = m.group(1), m.group(2)
            if key == "baseMVA":
                try:
                    base_mva = float(rest.strip().rstrip(";").strip())
                except ValueError:
                    raise ParseError("bad baseMVA", i + 1) from None
            elif key in ("bus", "gen", "branch"):
                if "[" not in rest:
                    raise ParseError(f"expected '[' after mpc.{key}", i + 1)
                rows, i = _parse_matrix(lines, i, rest)
                blocks[key] = rows
            elif "[" in rest or "{" in rest:
                # skip other matrix / cell blocks
                closer = "]" if "[" in rest else "}"
                while closer not in _strip_comment(lines[i]):
                    i += 1
                    if i >= len(lines):
                        raise ParseError(f"unterminated block mpc.{key}", i)
        i += 1

    if base_mva is None:
        raise ParseError("missing mpc.baseMVA")
    for key in ("bus", "gen", "branch"):
        if key not in blocks:
            raise ParseError(f"missing mpc.{key}")
    bus = _to_table(blocks["bus"], 13, "bus")
    gen = _to_table(blocks["gen"], 10, "gen")
    branch = _to_table(blocks["branch"], 11, "branch")
    if len(gen):
        gen = gen[gen[:, GEN_STATUS] > 0]
    if len(branch):
        branch = branch[branch[:, BR_STATUS] != 0]
    if len(branch) == 0:
        raise CaseError("no branches")
    return GridCase(name or "case", base_mva, bus, gen, branch)


def load_case(path_or_name) -> GridCase:
    """Load a case from a file path or one of the bundled names (``case14`` ...)."""
    key = str(path_or_name)
    if not Path(key).exists() and key.endswith(".m") and key[:-2] in BUILTIN_CASES:
        key = key[:-2]
    if key in BUILTIN_CASES:
        fname = BUILTIN_CASES[key]
        text = resources.files("gridscreen.data").joinpath(fname).read_text()
        return parse_matpower(text, name=Path(fname).stem)
    path = Path(key)
    return parse_matpower(path.read_text(), name=path.stem)


def _fmt_row(row):
    return "\t" + "\t".join(repr(float(v)) for v in row) + ";"


def write_matpower(case: GridCase) -> str:
    """Serialize a case back to MATPOWER text (exact float round-trip)."""
    out = [f"function mpc = {case.name}", "mpc.version = '2';", f"mpc.baseMVA = {case.base_mva!r};", ""]
    for key, tab in (("bus", case.bus), ("gen", case.gen), ("branch", case.branch)):
        out.append(f"mpc.{key} = [")
        out.extend(_fmt_row(r) for r in tab)
        out.append("];")
        out.append("")
    return "\n".join(out)


# -- admittance ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class AdmittanceMatrix:
    """Sparse bus admittance matrix plus per-branch terminal admittances.

    The terminal arrays have one entry per case branch; out-of-service
    branches hold zeros and ``in_service`` is False for them.
    """

    Y: sp.csr_matrix
    yff: np.ndarray
    yft: np.ndarray
    ytf: np.ndarray
    ytt: np.ndarray
    f: np.ndarray
    t: np.ndarray
    in_service: np.ndarray

    @property
    def G(self):
        return self.Y.real

    @property
    def B(self):
        return self.Y.imag

    def dense(self) -> np.ndarray:
        return self.Y.toarray()


def branch_admittances(case: GridCase):
    """Terminal admittances ``(yff, yft, ytf, ytt)`` for every branch (pi model)."""
    ys = 1.0 / (case.r + 1j * case.x)
    ych = 1j * case.b_ch / 2
    tap = case.tap * np.exp(1j * case.shift)
    ytt = ys + ych
    yff = ytt / (tap * np.conj(tap))
    yft = -ys / np.conj(tap)
    ytf = -ys / tap
    return yff, yft, ytf, ytt


def _out_mask(case, out_branches):
    mask = np.ones(case.n_branch, dtype=bool)
    out = np.asarray(list(out_branches), dtype=int)
    if out.size and (out.min() < 0 or out.max() >= case.n_branch):
        raise IndexError(f"branch index out of range in {sorted(out.tolist())}")
    mask[out] = False
    return mask


def build_ybus(case: GridCase, topo=()) -> AdmittanceMatrix:
    """Bus admittance matrix with the branches in ``topo`` taken out of service.

    ``topo`` is a :class:`~gridscreen.topology.Topology` or any iterable of
    branch indices.
    """
    out = getattr(topo, "out_branches", topo)
    on = _out_mask(case, out)
    yff, yft, ytf, ytt = branch_admittances(case)
    yff, yft, ytf, ytt = (np.where(on, a, 0) for a in (yff, yft, ytf, ytt))
    f, t, nb = case.f, case.t, case.n_bus
    rows = np.concatenate([f, f, t, t, np.arange(nb)])
    cols = np.concatenate([f, t, f, t, np.arange(nb)])
    vals = np.concatenate([yff, yft, ytf, ytt, case.Gs + 1j * case.Bs])
    keep = np.concatenate([on, on, on, on, np.ones(nb, dtype=bool)])
    Y = sp.csr_matrix((vals[keep], (rows[keep], cols[keep])), shape=(nb, nb))
    Y.sum_duplicates()
    return AdmittanceMatrix(Y, yff, yft, ytf, ytt, f, t, on)
