"""Gas pipeline network model: nodes, pipes with compressors, scaling and incidence matrices.

All quantities inside :class:`GasNetwork` are nondimensional:

* density      rho~ = rho / rho0
* mass flux    phi~ = phi / (rho0 c)
* length       x~   = x / ell
* time         t~   = t c / ell
* withdrawal   d~   = d / (rho0 c A_ref)
* area         X~   = A / A_ref

Pressure is recovered from density with the isothermal closure ``p = c^2 rho``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_GAMMA = 1.4
DEFAULT_EFFICIENCY = 0.9


@dataclass(frozen=True)
class Scaling:
    rho0: float      # kg/m^3
    c: float         # m/s
    length: float    # m, the length scale ell
    area: float = 1.0  # m^2, reference area for withdrawals

    def __post_init__(self):
        for name in ("rho0", "c", "length", "area"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"scaling constant {name} must be positive, got {v}")

    @property
    def flux(self) -> float:
        return self.rho0 * self.c

    @property
    def mass_flow(self) -> float:
        """kg/s represented by one nondimensional withdrawal unit."""
        return self.rho0 * self.c * self.area

    @property
    def time_s(self) -> float:
        return self.length / self.c

    @property
    def hours_per_unit(self) -> float:
        return self.length / self.c / 3600.0

    def to_nd_time(self, hours):
        return np.asarray(hours, dtype=float) * 3600.0 * self.c / self.length

    def pressure(self, rho_nd):
        """SI pressure (Pa) from nondimensional density."""
        return self.c ** 2 * self.rho0 * np.asarray(rho_nd, dtype=float)

    def density_from_pressure(self, p_pa):
        """Nondimensional density from SI pressure (Pa)."""
        return np.asarray(p_pa, dtype=float) / (self.c ** 2 * self.rho0)


@dataclass(frozen=True)
class GasNode:
    """Node in SI units: densities kg/m^3, withdrawals kg/s (positive = offtake)."""

    id: str
    rho_min: float
    rho_max: float
    d_min: float = -math.inf
    d_max: float = math.inf
    slack: bool = False
    slack_density: float | None = None
    withdrawal: float = 0.0  # non-power offtake, kg/s


@dataclass(frozen=True)
class Pipe:
    id: str
    from_node: str
    to_node: str
    length: float      # m
    diameter: float    # m
    friction: float    # Darcy friction factor
    compressor: bool = False
    alpha_max: float = 1.0
    efficiency: float = DEFAULT_EFFICIENCY

    @property
    def area(self) -> float:
        return math.pi * self.diameter ** 2 / 4.0


@dataclass(frozen=True)
class Defect:
    kind: str
    item: str
    message: str

    def __str__(self):
        return f"{self.kind} [{self.item}]: {self.message}"


@dataclass(frozen=True)
class RawGasNetwork:
    nodes: tuple[GasNode, ...]
    pipes: tuple[Pipe, ...]
    scaling: Scaling
    gamma: float = DEFAULT_GAMMA


@dataclass(eq=False)
class GasNetwork:
    """Nondimensional network with assembled incidence and diagonal matrices."""

    node_ids: list[str]
    pipes: list[Pipe]
    scaling: Scaling
    gamma: float
    rho_min: np.ndarray
    rho_max: np.ndarray
    d_min: np.ndarray
    d_max: np.ndarray
    base_withdrawal: np.ndarray
    slack_density: np.ndarray       # per slack node, in slack order
    slack_idx: np.ndarray
    demand_idx: np.ndarray
    A: np.ndarray = field(repr=False)
    Lam: np.ndarray = field(repr=False)   # L_e / ell
    K: np.ndarray = field(repr=False)     # ell * lambda_e / D_e
    X: np.ndarray = field(repr=False)     # A_e / A_ref
    eta: np.ndarray = field(repr=False)
    alpha_max: np.ndarray = field(repr=False)
    from_idx: np.ndarray = field(repr=False)
    to_idx: np.ndarray = field(repr=False)
    comp_idx: np.ndarray = field(repr=False)  # pipe indices that carry a compressor

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def n_pipes(self) -> int:
        return len(self.pipes)

    @property
    def n_demand(self) -> int:
        return len(self.demand_idx)

    @property
    def n_slack(self) -> int:
        return len(self.slack_idx)

    @property
    def compressor_ids(self) -> list[str]:
        return [self.pipes[e].id for e in self.comp_idx]

    @property
    def n_compressors(self) -> int:
        return len(self.comp_idx)

    @property
    def A_s(self) -> np.ndarray:
        return self.A[self.slack_idx]

    @property
    def A_d(self) -> np.ndarray:
        return self.A[self.demand_idx]

    def node_index(self, node_id: str) -> int:
        return self.node_ids.index(node_id)

    def compressor_index(self, comp_id: str) -> int:
        ids = self.compressor_ids
        if comp_id not in ids:
            raise KeyError(f"unknown compressor {comp_id!r}")
        return ids.index(comp_id)

    def alpha_per_pipe(self, alpha_comp) -> np.ndarray:
        """Expand per-compressor ratios to a per-pipe vector (1 on plain pipes)."""
        a = np.ones(self.n_pipes)
        if self.n_compressors:
            a[self.comp_idx] = alpha_comp
        return a

    def weighted_incidence(self, alpha):
        """``B(alpha)`` and its slack/demand row splits.

        ``alpha`` is per pipe (length P) or per compressor (length E).
        """
        alpha = np.asarray(alpha, dtype=float)
        if alpha.shape == (self.n_compressors,) and self.n_compressors != self.n_pipes:
            alpha = self.alpha_per_pipe(alpha)
        if alpha.shape != (self.n_pipes,):
            raise ValueError(f"alpha must have length {self.n_pipes} (pipes) or {self.n_compressors} (compressors)")
        tol = 1e-12
        if (alpha < 1 - tol).any() or (alpha > self.alpha_max + tol).any():
            bad = [self.pipes[e].id for e in np.flatnonzero((alpha < 1 - tol) | (alpha > self.alpha_max + tol))]
            raise ValueError(f"compressor ratio out of bounds on pipes {bad}")
        B = np.zeros((self.n_nodes, self.n_pipes))
        cols = np.arange(self.n_pipes)
        B[self.to_idx, cols] = 1.0
        B[self.from_idx, cols] = -alpha
        return B, B[self.slack_idx], B[self.demand_idx]

    def pressure_pa(self, rho_nd):
        return self.scaling.pressure(rho_nd)

    def downstream_nodes(self, node_id: str) -> list[str]:
        """Nodes reachable from ``node_id`` along pipe direction, excluding itself."""
        start = self.node_index(node_id)
        seen = {start}
        stack = [start]
        while stack:
            i = stack.pop()
            for e in np.flatnonzero(self.from_idx == i):
                j = int(self.to_idx[e])
                if j not in seen:
                    seen.add(j)
                    stack.append(j)
        seen.discard(start)
        return [self.node_ids[i] for i in sorted(seen)]

    def depth_order(self) -> list[str]:
        """Node ids ordered by directed distance from the slack nodes."""
        depth = {int(i): 0 for i in self.slack_idx}
        frontier = list(depth)
        while frontier:
            nxt = []
            for i in frontier:
                for e in np.flatnonzero(self.from_idx == i):
                    j = int(self.to_idx[e])
                    if j not in depth:
                        depth[j] = depth[i] + 1
                        nxt.append(j)
            frontier = nxt
        big = len(self.node_ids) + 1
        return [self.node_ids[i] for i in sorted(range(self.n_nodes), key=lambda i: (depth.get(i, big), self.node_ids[i]))]

    def to_raw(self) -> RawGasNetwork:
        sc = self.scaling
        slack_pos = {int(i): k for k, i in enumerate(self.slack_idx)}
        nodes = []
        for i, nid in enumerate(self.node_ids):
            s = slack_pos.get(i)
            nodes.append(GasNode(
                nid,
                float(self.rho_min[i] * sc.rho0), float(self.rho_max[i] * sc.rho0),
                float(self.d_min[i] * sc.mass_flow), float(self.d_max[i] * sc.mass_flow),
                slack=s is not None,
                slack_density=None if s is None else float(self.slack_density[s] * sc.rho0),
                withdrawal=float(self.base_withdrawal[i] * sc.mass_flow),
            ))
        return RawGasNetwork(tuple(nodes), tuple(self.pipes), sc, self.gamma)


def validate(raw: RawGasNetwork) -> list[Defect]:
    """Structural and parameter checks; an empty list means the network is usable."""
    defects: list[Defect] = []
    ids = [n.id for n in raw.nodes]
    seen = set()
    for nid in ids:
        if nid in seen:
            defects.append(Defect("duplicate", nid, "duplicate node id"))
        seen.add(nid)
    pids = set()
    for p in raw.pipes:
        if p.id in pids:
            defects.append(Defect("duplicate", p.id, "duplicate pipe id"))
        pids.add(p.id)

    for n in raw.nodes:
        if not n.rho_min < n.rho_max:
            defects.append(Defect("bounds", n.id, "density bounds require rho_min < rho_max"))
        if n.rho_min <= 0:
            defects.append(Defect("bounds", n.id, "non-positive minimum density"))
        if n.d_min > n.d_max:
            defects.append(Defect("bounds", n.id, "withdrawal bounds require d_min <= d_max"))
        if n.slack:
            if n.slack_density is None or not n.slack_density > 0:
                defects.append(Defect("slack", n.id, "slack node needs a positive slack density"))
            elif not n.rho_min <= n.slack_density <= n.rho_max:
                defects.append(Defect("slack", n.id, "slack density outside the node density bounds"))
        elif not n.d_min <= n.withdrawal <= n.d_max:
            defects.append(Defect("bounds", n.id, "nominal withdrawal outside withdrawal bounds"))

    for p in raw.pipes:
        for label, v in (("length", p.length), ("diameter", p.diameter),
                         ("friction factor", p.friction), ("efficiency", p.efficiency)):
            if not v > 0:
                defects.append(Defect("parameter", p.id, f"non-positive {label}"))
        if p.from_node not in seen or p.to_node not in seen:
            defects.append(Defect("topology", p.id, "pipe endpoint is not a known node"))
        if p.from_node == p.to_node:
            defects.append(Defect("topology", p.id, "pipe starts and ends at the same node"))
        if p.alpha_max < 1:
            defects.append(Defect("compressor", p.id, "boost limit below 1"))
        if not p.compressor and p.alpha_max != 1:
            defects.append(Defect("compressor", p.id, "boost limit differs from 1 on a pipe without compressor"))

    if not any(n.slack for n in raw.nodes):
        defects.append(Defect("slack", "*", "no pressure-specified node"))

    # each connected component needs its own slack node
    adj = {nid: set() for nid in ids}
    for p in raw.pipes:
        if p.from_node in adj and p.to_node in adj:
            adj[p.from_node].add(p.to_node)
            adj[p.to_node].add(p.from_node)
    slack_ids = {n.id for n in raw.nodes if n.slack}
    unvisited = set(ids)
    components = 0
    while unvisited:
        root = min(unvisited)
        comp = {root}
        stack = [root]
        while stack:
            for j in adj[stack.pop()]:
                if j not in comp:
                    comp.add(j)
                    stack.append(j)
        unvisited -= comp
        components += 1
        if slack_ids and not comp & slack_ids:
            defects.append(Defect("slack", root, "connected component without a pressure-specified node"))
    if components > 1:
        defects.append(Defect("topology", "*", f"network is not connected ({components} components)"))
    if not raw.gamma > 1:
        defects.append(Defect("parameter", "gamma", "specific heat ratio must exceed 1"))
    return defects


def nondimensionalize(raw: RawGasNetwork) -> GasNetwork:
    """Scale an SI network and assemble its matrices; raises on any defect."""
    defects = validate(raw)
    if defects:
        raise ValueError("invalid gas network:\n  " + "\n  ".join(map(str, defects)))
    sc = raw.scaling
    node_ids = [n.id for n in raw.nodes]
    pos = {nid: i for i, nid in enumerate(node_ids)}
    pipes = list(raw.pipes)
    P = len(pipes)
    from_idx = np.array([pos[p.from_node] for p in pipes], dtype=int)
    to_idx = np.array([pos[p.to_node] for p in pipes], dtype=int)
    A = np.zeros((len(node_ids), P))
    A[to_idx, np.arange(P)] = 1.0
    A[from_idx, np.arange(P)] = -1.0
    slack_idx = np.array([i for i, n in enumerate(raw.nodes) if n.slack], dtype=int)
    demand_idx = np.array([i for i, n in enumerate(raw.nodes) if not n.slack], dtype=int)
    return GasNetwork(
        node_ids=node_ids,
        pipes=pipes,
        scaling=sc,
        gamma=raw.gamma,
        rho_min=np.array([n.rho_min for n in raw.nodes]) / sc.rho0,
        rho_max=np.array([n.rho_max for n in raw.nodes]) / sc.rho0,
        d_min=np.array([n.d_min for n in raw.nodes]) / sc.mass_flow,
        d_max=np.array([n.d_max for n in raw.nodes]) / sc.mass_flow,
        base_withdrawal=np.array([0.0 if n.slack else n.withdrawal for n in raw.nodes]) / sc.mass_flow,
        slack_density=np.array([raw.nodes[i].slack_density for i in slack_idx], dtype=float) / sc.rho0,
        slack_idx=slack_idx,
        demand_idx=demand_idx,
        A=A,
        Lam=np.array([p.length for p in pipes]) / sc.length,
        K=np.array([sc.length * p.friction / p.diameter for p in pipes]),
        X=np.array([p.area for p in pipes]) / sc.area,
        eta=np.array([p.efficiency for p in pipes]),
        alpha_max=np.array([p.alpha_max for p in pipes]),
        from_idx=from_idx,
        to_idx=to_idx,
        comp_idx=np.array([e for e, p in enumerate(pipes) if p.compressor], dtype=int),
    )
