"""Network data model, case-file ingestion and scenario transformations.

All quantities are per-unit on ``Network.base_mva``.  Sign conventions:

* ``Bus.demand`` is the base absolute net injection (generation minus local
  load), so load buses carry negative values.
* The adjustable-injection variable ``d`` is the amount of power a bus
  *absorbs* relative to its base injection: ``d > 0`` means generation is
  backed off (or load picks up), ``d < 0`` means extra power is injected
  (generation ramps up, or load is shed).  ``[d_min, d_max]`` brackets that
  response, hence ``d_min <= 0 <= d_max``.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, replace

import numpy as np

KIND_GENERATOR = "generator"
KIND_LOAD = "load"

#: matpower rate of 0 means "unlimited"; mapped to this finite capacity (p.u.)
UNLIMITED_CAPACITY = 1e9


class CaseFormatError(ValueError):
    """Raised when a case file cannot be parsed or violates model invariants."""


@dataclass(frozen=True)
class Bus:
    """A network bus with its base injection and frequency-response data."""

    id: int
    kind: str  # "generator" or "load"
    demand: float  # base absolute injection, negative for load
    d_min: float = 0.0
    d_max: float = 0.0
    droop_K: float = 0.0  # participation factor (power / frequency)
    damping_D: float = 0.0  # frequency-sensitive response (power / frequency)
    inertia: float | None = None  # unused at equilibrium, carried through
    gen_cost: float | None = None  # quadratic dispatch cost coefficient
    local_load: float | None = None  # physical load served at the bus (p.u.)

    def __post_init__(self) -> None:
        object.__setattr__(self, "id", int(self.id))
        for name in ("demand", "d_min", "d_max", "droop_K", "damping_D"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if self.inertia is not None:
            object.__setattr__(self, "inertia", float(self.inertia))
        if self.gen_cost is not None:
            object.__setattr__(self, "gen_cost", float(self.gen_cost))
        if self.kind not in (KIND_GENERATOR, KIND_LOAD):
            raise CaseFormatError(f"bus {self.id}: unknown kind {self.kind!r}")
        if self.local_load is None:
            default = max(0.0, -self.demand) if self.kind == KIND_LOAD else 0.0
            object.__setattr__(self, "local_load", default)
        else:
            object.__setattr__(self, "local_load", float(self.local_load))
        if not (self.d_min <= 0.0 <= self.d_max):
            raise CaseFormatError(
                f"bus {self.id}: box [{self.d_min}, {self.d_max}] must contain 0"
            )
        if self.droop_K < 0 or self.damping_D < 0:
            raise CaseFormatError(f"bus {self.id}: K and D must be nonnegative")


@dataclass(frozen=True)
class Line:
    """A transmission line with a fixed (but arbitrary) orientation."""

    id: int
    from_bus: int
    to_bus: int
    susceptance: float
    capacity: float  # symmetric rating: flow must stay within [-capacity, capacity]

    def __post_init__(self) -> None:
        object.__setattr__(self, "id", int(self.id))
        object.__setattr__(self, "from_bus", int(self.from_bus))
        object.__setattr__(self, "to_bus", int(self.to_bus))
        object.__setattr__(self, "susceptance", float(self.susceptance))
        object.__setattr__(self, "capacity", float(self.capacity))
        if self.from_bus == self.to_bus:
            raise CaseFormatError(f"line {self.id}: self-loop at bus {self.from_bus}")
        if self.susceptance <= 0:
            raise CaseFormatError(f"line {self.id}: susceptance must be positive")
        if self.capacity <= 0:
            raise CaseFormatError(f"line {self.id}: capacity must be positive")

    @property
    def pair(self) -> tuple[int, int]:
        """Unordered endpoint pair, normalised."""
        a, b = self.from_bus, self.to_bus
        return (a, b) if a < b else (b, a)


@dataclass(frozen=True)
class Network:
    """An immutable grid model: buses, lines and control areas."""

    base_mva: float
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    areas: tuple[frozenset[int], ...]

    def __post_init__(self) -> None:
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise CaseFormatError("duplicate bus ids")
        id_set = set(ids)
        seen_pairs: set[tuple[int, int]] = set()
        for ln in self.lines:
            if ln.from_bus not in id_set or ln.to_bus not in id_set:
                raise CaseFormatError(f"line {ln.id}: unknown endpoint")
            if ln.pair in seen_pairs:
                raise CaseFormatError(f"parallel line on pair {ln.pair}; merge first")
            seen_pairs.add(ln.pair)
        line_ids = [ln.id for ln in self.lines]
        if len(set(line_ids)) != len(line_ids):
            raise CaseFormatError("duplicate line ids")
        covered: set[int] = set()
        for area in self.areas:
            if covered & area:
                raise CaseFormatError("areas overlap")
            covered |= area
        if covered != id_set:
            raise CaseFormatError("areas must partition the bus set")

    # -- index helpers -------------------------------------------------------

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    @property
    def n_lines(self) -> int:
        return len(self.lines)

    def bus_index(self) -> dict[int, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    def line_index(self) -> dict[int, int]:
        return {ln.id: i for i, ln in enumerate(self.lines)}

    def line_by_pair(self, a: int, b: int) -> Line:
        key = (a, b) if a < b else (b, a)
        for ln in self.lines:
            if ln.pair == key:
                return ln
        raise KeyError(f"no line between buses {a} and {b}")

    def base_injections(self) -> np.ndarray:
        return np.array([b.demand for b in self.buses], dtype=float)

    def capacities(self) -> np.ndarray:
        return np.array([ln.capacity for ln in self.lines], dtype=float)

    def generator_positions(self) -> list[int]:
        return [i for i, b in enumerate(self.buses) if b.kind == KIND_GENERATOR]

    def load_positions(self) -> list[int]:
        return [i for i, b in enumerate(self.buses) if b.kind == KIND_LOAD]

    def is_connected(self) -> bool:
        if not self.buses:
            return True
        idx = self.bus_index()
        adj: list[list[int]] = [[] for _ in self.buses]
        for ln in self.lines:
            u, v = idx[ln.from_bus], idx[ln.to_bus]
            adj[u].append(v)
            adj[v].append(u)
        seen = {0}
        stack = [0]
        while stack:
            u = stack.pop()
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        return len(seen) == self.n_buses


@dataclass(frozen=True)
class Scenario:
    """A dispatched operating point ready for cascade simulation."""

    network: Network
    injections: np.ndarray  # absolute post-dispatch injections, balanced
    seed: int = 0
    alpha_line: float = 1.0
    alpha_gen: float = 1.0

    def total_demand(self) -> float:
        """Total served load at the operating point (positive number)."""
        return float(np.sum(np.maximum(0.0, -np.asarray(self.injections))))


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


def parse_case(text: str, fmt: str = "native-json") -> Network:
    """Parse a case file in ``native-json`` or ``matpower-m`` format."""
    if fmt == "native-json":
        return _parse_native_json(text)
    if fmt == "matpower-m":
        return _parse_matpower(text)
    raise CaseFormatError(f"unknown case format {fmt!r}")


def _parse_native_json(text: str) -> Network:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CaseFormatError(
            f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    try:
        buses = tuple(
            Bus(
                id=int(b["id"]),
                kind=str(b["kind"]),
                demand=float(b["demand"]),
                d_min=float(b.get("d_min", 0.0)),
                d_max=float(b.get("d_max", 0.0)),
                droop_K=float(b.get("droop_K", 0.0)),
                damping_D=float(b.get("damping_D", 0.0)),
                inertia=(None if b.get("inertia") is None else float(b["inertia"])),
                gen_cost=(None if b.get("gen_cost") is None else float(b["gen_cost"])),
                local_load=(None if b.get("local_load") is None else float(b["local_load"])),
            )
            for b in doc["buses"]
        )
        lines = tuple(
            Line(
                id=int(ln["id"]),
                from_bus=int(ln["from"]),
                to_bus=int(ln["to"]),
                susceptance=float(ln["susceptance"]),
                capacity=float(ln["capacity"]),
            )
            for ln in doc["lines"]
        )
        areas_doc = doc.get("areas") or [[b.id for b in buses]]
        areas = tuple(frozenset(int(i) for i in a) for a in areas_doc)
        net = Network(
            base_mva=float(doc.get("base_mva", 100.0)),
            buses=buses,
            lines=lines,
            areas=areas,
        )
    except (KeyError, TypeError) as exc:
        raise CaseFormatError(f"malformed case document: {exc}") from exc
    if not net.is_connected():
        raise CaseFormatError("network graph is disconnected")
    return net


def network_to_json(network: Network) -> str:
    """Serialise to the native JSON schema (round-trips through parse_case)."""
    doc = {
        "base_mva": network.base_mva,
        "buses": [
            {
                "id": b.id,
                "kind": b.kind,
                "demand": b.demand,
                "d_min": b.d_min,
                "d_max": b.d_max,
                "droop_K": b.droop_K,
                "damping_D": b.damping_D,
                **({"inertia": b.inertia} if b.inertia is not None else {}),
                **({"gen_cost": b.gen_cost} if b.gen_cost is not None else {}),
                "local_load": b.local_load,
            }
            for b in network.buses
        ],
        "lines": [
            {
                "id": ln.id,
                "from": ln.from_bus,
                "to": ln.to_bus,
                "susceptance": ln.susceptance,
                "capacity": ln.capacity,
            }
            for ln in network.lines
        ],
        "areas": [sorted(a) for a in network.areas],
    }
    return json.dumps(doc, indent=2)


_MATRIX_RE = re.compile(
    r"mpc\.(?P<name>\w+)\s*=\s*\[(?P<body>.*?)\];", re.DOTALL
)
_SCALAR_RE = re.compile(r"mpc\.(?P<name>\w+)\s*=\s*(?P<value>[-+0-9.eE]+)\s*;")


def _strip_matlab_comments(text: str) -> str:
    return "\n".join(line.split("%", 1)[0] for line in text.splitlines())


def _parse_matrix(body: str, name: str) -> list[list[float]]:
    rows = []
    for lineno, raw in enumerate(body.split(";"), start=1):
        tokens = raw.split()
        if not tokens:
            continue
        try:
            rows.append([float(t) for t in tokens])
        except ValueError as exc:
            raise CaseFormatError(
                f"mpc.{name}, row {lineno}: cannot parse {raw.strip()!r}"
            ) from exc
    return rows


def _parse_matpower(text: str) -> Network:
    """Tolerant reader for the numeric matrices of a matpower ``.m`` file.

    Only ``baseMVA``, ``bus``, ``gen`` and ``branch`` are consumed; AC-only
    columns (resistance, shunts, taps) are discarded.  Out-of-service
    branches and generators (status 0) are dropped; parallel branches are
    merged by summing susceptances and capacities.
    """
    clean = _strip_matlab_comments(text)
    matrices = {m.group("name"): m.group("body") for m in _MATRIX_RE.finditer(clean)}
    scalars = {m.group("name"): float(m.group("value")) for m in _SCALAR_RE.finditer(clean)}
    if "bus" not in matrices or "branch" not in matrices:
        raise CaseFormatError("matpower case must define mpc.bus and mpc.branch")
    base_mva = scalars.get("baseMVA", 100.0)

    bus_rows = _parse_matrix(matrices["bus"], "bus")
    gen_rows = _parse_matrix(matrices.get("gen", ""), "gen")
    branch_rows = _parse_matrix(matrices["branch"], "branch")
    cost_rows = _parse_matrix(matrices.get("gencost", ""), "gencost")

    # Aggregate in-service generation per bus: dispatch and absolute limits.
    gen_pg: dict[int, float] = {}
    gen_pmax: dict[int, float] = {}
    gen_pmin: dict[int, float] = {}
    gen_cost: dict[int, float] = {}
    for g, row in enumerate(gen_rows):
        if len(row) < 10:
            raise CaseFormatError("mpc.gen rows need at least 10 columns")
        status = row[7]
        if status <= 0:
            continue
        bus_id = int(row[0])
        gen_pg[bus_id] = gen_pg.get(bus_id, 0.0) + row[1] / base_mva
        gen_pmax[bus_id] = gen_pmax.get(bus_id, 0.0) + row[8] / base_mva
        gen_pmin[bus_id] = gen_pmin.get(bus_id, 0.0) + row[9] / base_mva
        # polynomial cost rows (model 2) aligned with the gen matrix; only the
        # quadratic term matters for dispatch shape
        if g < len(cost_rows):
            crow = cost_rows[g]
            if len(crow) >= 5 and crow[0] == 2 and crow[3] >= 3:
                gen_cost[bus_id] = crow[4] * base_mva * base_mva

    buses = []
    areas_by_id: dict[int, set[int]] = {}
    for row in bus_rows:
        if len(row) < 13:
            raise CaseFormatError("mpc.bus rows need at least 13 columns")
        bus_id = int(row[0])
        pd = row[2] / base_mva
        area_id = int(row[6]) if row[6] > 0 else 1
        areas_by_id.setdefault(area_id, set()).add(bus_id)
        if bus_id in gen_pg:
            pg = gen_pg[bus_id]
            demand = pg - pd
            # response box around the dispatch point: back off to Pmin,
            # ramp up to Pmax
            d_max = max(0.0, pg - gen_pmin[bus_id])
            d_min = -max(0.0, gen_pmax[bus_id] - pg)
            buses.append(
                Bus(
                    id=bus_id,
                    kind=KIND_GENERATOR,
                    demand=demand,
                    d_min=d_min,
                    d_max=d_max,
                    droop_K=max(gen_pmax[bus_id], 0.0),
                    gen_cost=gen_cost.get(bus_id),
                    local_load=max(0.0, pd),
                )
            )
        else:
            buses.append(Bus(id=bus_id, kind=KIND_LOAD, demand=-pd, local_load=max(0.0, pd)))

    merged: dict[tuple[int, int], list[float]] = {}
    n_parallel = 0
    for row in branch_rows:
        if len(row) < 11:
            raise CaseFormatError("mpc.branch rows need at least 11 columns")
        status = row[10]
        if status <= 0:
            continue
        f, t, x, rate_a = int(row[0]), int(row[1]), row[3], row[5]
        if x == 0:
            raise CaseFormatError(f"branch {f}-{t}: zero reactance unsupported in DC model")
        b_e = 1.0 / abs(x)
        cap = rate_a / base_mva if rate_a > 0 else UNLIMITED_CAPACITY
        key = (f, t) if f < t else (t, f)
        if key in merged:
            n_parallel += 1
            merged[key][0] += b_e
            merged[key][1] += cap
        else:
            merged[key] = [b_e, cap, f, t]
    if n_parallel:
        import warnings

        warnings.warn(
            f"merged {n_parallel} parallel branch(es) by summing susceptances",
            stacklevel=2,
        )

    lines = tuple(
        Line(id=i + 1, from_bus=v[2], to_bus=v[3], susceptance=v[0],
             capacity=min(v[1], UNLIMITED_CAPACITY))
        for i, v in enumerate(merged[k] for k in merged)
    )
    areas = tuple(
        frozenset(areas_by_id[a]) for a in sorted(areas_by_id)
    )
    net = Network(base_mva=base_mva, buses=tuple(buses), lines=lines, areas=areas)
    if not net.is_connected():
        raise CaseFormatError("network graph is disconnected")
    return net


# ---------------------------------------------------------------------------
# Scenario transformations
# ---------------------------------------------------------------------------


def perturb_loads(
    network: Network,
    base: np.ndarray,
    magnitude: float,
    seed: int,
) -> np.ndarray:
    """Randomly scale each load bus injection by a factor in [1-m, 1+m].

    Generator buses are left untouched (they are re-dispatched afterwards).
    The draw is reproducible: one uniform sample per load bus, in bus order.
    """
    if not 0.0 <= magnitude < 1.0:
        raise ValueError("perturbation magnitude must be in [0, 1)")
    base = np.asarray(base, dtype=float)
    if base.shape != (network.n_buses,):
        raise ValueError("base injections must have one entry per bus")
    rng = np.random.default_rng(seed)
    out = base.copy()
    for i, bus in enumerate(network.buses):
        if bus.kind == KIND_LOAD:
            u = rng.uniform(-magnitude, magnitude)
            out[i] = base[i] * (1.0 + u)
    return out


def scale_capacities(network: Network, alpha_line: float, alpha_gen: float) -> Network:
    """Scale line ratings and generator response boxes multiplicatively."""
    if not (0.0 < alpha_line <= 1.0 and 0.0 < alpha_gen <= 1.0):
        raise ValueError("scaling factors must be in (0, 1]")
    buses = tuple(
        replace(b, d_min=b.d_min * alpha_gen, d_max=b.d_max * alpha_gen)
        if b.kind == KIND_GENERATOR
        else b
        for b in network.buses
    )
    lines = tuple(replace(ln, capacity=ln.capacity * alpha_line) for ln in network.lines)
    return Network(base_mva=network.base_mva, buses=buses, lines=lines, areas=network.areas)


def effective_box(network: Network, injections: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Response box shifted to an operating point other than the base demand.

    A generator's absolute output range is pinned to the base point, so
    re-dispatching by ``delta = injections - demand`` consumes headroom on one
    side and frees it on the other.  Load buses keep their box as-is: a
    perturbed demand redefines the base point rather than spending control
    range.
    """
    injections = np.asarray(injections, dtype=float)
    d_min = np.array([b.d_min for b in network.buses])
    d_max = np.array([b.d_max for b in network.buses])
    delta = injections - network.base_injections()
    gen = np.array([b.kind == KIND_GENERATOR for b in network.buses])
    d_min[gen] += delta[gen]
    d_max[gen] += delta[gen]
    return d_min, d_max
