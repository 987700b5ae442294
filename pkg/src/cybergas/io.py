"""Input files: YAML documents for the power, gas, cyber and fuel data plus a CSV load table.

Every loader reports problems as ``InputError`` carrying the file, the field
path and the violated rule.  Numeric keys carry their unit in the name
(``p_max_mw``, ``length_m``, ``min_pressure_psi`` ...).
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np
import yaml

from .attack_chain import CyberChain, CyberZoneGraph, Zone, build_chain
from .coupling import DEFAULT_BETA, DEFAULT_RAMP_MIN, HEAT_CLASSES, FuelEntry, FuelMap
from .gas_network import GasNetwork, GasNode, Pipe, RawGasNetwork, Scaling, nondimensionalize, validate
from .power_market import Branch, Generator, PowerSystem
from .scenario import ScenarioConfig

PSI = 6894.757293168


class InputError(ValueError):
    def __init__(self, file, field, rule):
        self.file = str(file)
        self.field = field
        self.rule = rule
        super().__init__(f"{self.file}: {field}: {rule}")


def _read_yaml(path):
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    except FileNotFoundError:
        raise InputError(path, "-", "file not found") from None
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}" if mark is not None else "-"
        raise InputError(path, where, f"parse error: {getattr(exc, 'problem', exc)}") from None
    if not isinstance(doc, dict):
        raise InputError(path, "-", "top level must be a mapping")
    return doc


class _Fields:
    """Typed access to one mapping with located errors."""

    def __init__(self, path, where, data):
        if not isinstance(data, dict):
            raise InputError(path, where, "expected a mapping")
        self.path, self.where, self.data = path, where, data

    def _loc(self, key):
        return f"{self.where}.{key}" if self.where else key

    def has(self, key):
        return key in self.data and self.data[key] is not None

    def raw(self, key, default=...):
        if key not in self.data or self.data[key] is None:
            if default is ...:
                raise InputError(self.path, self._loc(key), "required field missing")
            return default
        return self.data[key]

    def num(self, key, default=..., lo=None, hi=None, strict_lo=False, integer=False):
        v = self.raw(key, default)
        if v is None:
            return None
        if isinstance(v, str) and v.strip().lower() in ("inf", "+inf", "infinity", ".inf"):
            v = math.inf
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise InputError(self.path, self._loc(key), f"expected a number, got {v!r}")
        v = float(v)
        if math.isnan(v):
            raise InputError(self.path, self._loc(key), "NaN is not allowed")
        if lo is not None and (v < lo or (strict_lo and v == lo)):
            raise InputError(self.path, self._loc(key), f"must be {'>' if strict_lo else '>='} {lo}, got {v}")
        if hi is not None and v > hi:
            raise InputError(self.path, self._loc(key), f"must be <= {hi}, got {v}")
        if integer:
            if v != int(v):
                raise InputError(self.path, self._loc(key), f"must be an integer, got {v}")
            return int(v)
        return v

    def str(self, key, default=...):
        v = self.raw(key, default)
        return v if v is None else str(v)

    def bool(self, key, default=...):
        v = self.raw(key, default)
        if not isinstance(v, bool):
            raise InputError(self.path, self._loc(key), f"expected true/false, got {v!r}")
        return v

    def list(self, key, default=...):
        v = self.raw(key, default)
        if not isinstance(v, list):
            raise InputError(self.path, self._loc(key), "expected a list")
        return v

    def sub(self, key, default=...):
        v = self.raw(key, default)
        return _Fields(self.path, self._loc(key), v)

    def items(self, key):
        for k, item in enumerate(self.list(key)):
            yield _Fields(self.path, f"{self._loc(key)}[{k}]", item)


# ---------------------------------------------------------------------------- power

def load_power(path) -> PowerSystem:
    f = _Fields(path, "", _read_yaml(path))
    buses = [str(b) for b in f.list("buses")]
    branches = []
    for b in f.items("branches"):
        pmax = b.num("p_max_mw", lo=0.0)
        branches.append(Branch(b.str("id"), b.str("from"), b.str("to"), b.num("susceptance_pu", lo=0.0, strict_lo=True),
                               b.num("p_min_mw", -pmax), pmax))
    gens = []
    for g in f.items("generators"):
        pmax = g.num("p_max_mw", lo=0.0)
        pmin = g.num("p_min_mw", 0.0, lo=0.0)
        if pmin > pmax:
            raise InputError(path, f"{g.where}.p_min_mw", "must not exceed p_max_mw")
        ramp = g.num("ramp_mw_per_h", math.inf, lo=0.0)
        gens.append(Generator(
            id=g.str("id"), bus=g.str("bus"), cost=g.num("cost_per_mwh", lo=0.0),
            no_load_cost=g.num("no_load_cost", 0.0, lo=0.0), startup_cost=g.num("startup_cost", 0.0, lo=0.0),
            shutdown_cost=g.num("shutdown_cost", 0.0, lo=0.0),
            reserve_cost=g.num("reserve_cost_per_mwh", 0.0, lo=0.0),
            p_min=pmin, p_max=pmax, ramp_hr=ramp,
            ramp_su=g.num("startup_ramp_mw_per_h", ramp, lo=0.0), ramp_sd=g.num("shutdown_ramp_mw_per_h", ramp, lo=0.0),
            min_up=g.num("min_up_h", 1, lo=1, integer=True), min_down=g.num("min_down_h", 1, lo=1, integer=True),
            reserve_cap=g.num("reserve_cap_mw", pmax, lo=0.0), fuel=g.str("fuel", "other"),
            initial_on=g.bool("initial_on", False), initial_p=g.num("initial_p_mw", 0.0, lo=0.0)))
    try:
        return PowerSystem(buses, branches, gens, f.str("reference_bus"))
    except ValueError as exc:
        raise InputError(path, "-", str(exc)) from None


def load_loads(path, buses: list[str], horizon: int | None = None) -> np.ndarray:
    """CSV with an ``hour`` column and one MW column per bus (missing buses = 0)."""
    try:
        fh = open(path, newline="")
    except FileNotFoundError:
        raise InputError(path, "-", "file not found") from None
    with fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise InputError(path, "-", "no rows")
    cols = [c for c in rows[0] if c != "hour"]
    for c in cols:
        if c not in buses:
            raise InputError(path, c, "column is not a bus of the power system")
    hours = []
    out = np.zeros((len(rows), len(buses)))
    for k, r in enumerate(rows):
        try:
            hours.append(int(r["hour"]))
            for c in cols:
                v = float(r[c])
                if not v >= 0 or not math.isfinite(v):
                    raise InputError(path, f"row {k + 2}.{c}", "load must be finite and >= 0")
                out[k, buses.index(c)] = v
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, InputError):
                raise
            raise InputError(path, f"row {k + 2}", f"unreadable value ({exc})") from None
    if hours != list(range(len(rows))):
        raise InputError(path, "hour", "hours must run 0, 1, 2, ... without gaps")
    if horizon is not None and len(rows) != horizon:
        raise InputError(path, "-", f"expected {horizon} hourly rows, found {len(rows)}")
    return out


def write_loads(load, buses, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["hour"] + list(buses))
        for t, row in enumerate(np.asarray(load)):
            wr.writerow([t] + [repr(float(x)) for x in row])


# ---------------------------------------------------------------------------- gas

def _density(n: _Fields, stem: str, c: float, default=...):
    """Density in kg/m^3 from ``<stem>_kg_m3`` or a pressure in psi/Pa."""
    if n.has(f"{stem}_density_kg_m3"):
        return n.num(f"{stem}_density_kg_m3", lo=0.0, strict_lo=True)
    if n.has(f"{stem}_pressure_psi"):
        return n.num(f"{stem}_pressure_psi", lo=0.0, strict_lo=True) * PSI / c ** 2
    if n.has(f"{stem}_pressure_pa"):
        return n.num(f"{stem}_pressure_pa", lo=0.0, strict_lo=True) / c ** 2
    if default is ...:
        raise InputError(n.path, f"{n.where}.{stem}_pressure_psi", "required field missing")
    return default


def load_gas(path) -> GasNetwork:
    f = _Fields(path, "", _read_yaml(path))
    s = f.sub("scaling")
    c = s.num("sound_speed_m_s", lo=0.0, strict_lo=True)
    sc = Scaling(s.num("rho0_kg_m3", lo=0.0, strict_lo=True), c, s.num("length_m", lo=0.0, strict_lo=True),
                 s.num("area_m2", 1.0, lo=0.0, strict_lo=True))
    nodes = []
    for n in f.items("nodes"):
        slack = n.bool("slack", False)
        nodes.append(GasNode(
            n.str("id"), _density(n, "min", c, 1e-6), _density(n, "max", c, math.inf),
            n.num("withdrawal_min_kg_s", -math.inf), n.num("withdrawal_max_kg_s", math.inf),
            slack=slack, slack_density=_density(n, "slack", c) if slack else None,
            withdrawal=n.num("withdrawal_kg_s", 0.0)))
    pipes = []
    for p in f.items("pipes"):
        comp = p.bool("compressor", False)
        pipes.append(Pipe(p.str("id"), p.str("from"), p.str("to"), p.num("length_m", lo=0.0, strict_lo=True),
                          p.num("diameter_m", lo=0.0, strict_lo=True), p.num("friction", lo=0.0, strict_lo=True),
                          compressor=comp, alpha_max=p.num("alpha_max", 1.0, lo=1.0),
                          efficiency=p.num("efficiency", 0.9, lo=0.0, strict_lo=True, hi=1.0)))
    raw = RawGasNetwork(tuple(nodes), tuple(pipes), sc, f.num("gamma", 1.4, lo=1.0, strict_lo=True))
    defects = validate(raw)
    if defects:
        raise InputError(path, defects[0].item, "; ".join(str(d) for d in defects))
    return nondimensionalize(raw)


# ---------------------------------------------------------------------------- cyber

def load_cyber(path) -> CyberChain:
    f = _Fields(path, "", _read_yaml(path))
    zones = []
    for z in f.items("zones"):
        try:
            zones.append(Zone(z.str("id"), z.str("tier"), z.str("label", "")))
        except ValueError as exc:
            raise InputError(path, z.where, str(exc)) from None
    ids = {z.id for z in zones}
    edges, scores, probs = [], {}, {}
    for e in f.items("edges"):
        a, b = e.str("from"), e.str("to")
        for end in (a, b):
            if end not in ids:
                raise InputError(path, e.where, f"unknown zone {end!r}")
        edges.append((a, b))
        if e.has("score"):
            scores[(a, b)] = e.num("score", lo=0.0, hi=10.0)
        elif e.has("probability"):
            probs[(a, b)] = e.num("probability", lo=0.0, hi=1.0)
        else:
            raise InputError(path, e.where, "edge needs a score or a probability")
    if scores and probs:
        raise InputError(path, "edges", "mix of scores and probabilities; use one kind")
    hold = {str(k): float(v) for k, v in f.sub("holding_rates_per_h").data.items()}
    det = {str(k): float(v) for k, v in f.sub("detection_rates_per_h", {}).data.items()}
    act = {str(k): str(v) for k, v in f.sub("actuators", {}).data.items()}
    for k in list(hold) + list(det) + list(act):
        if k not in ids:
            raise InputError(path, k, "unknown zone")
    initial, detection = f.str("initial", "internet"), f.str("detection", "detection")
    try:
        if scores:
            graph = CyberZoneGraph.from_scores(zones, edges, scores, hold, det, act, initial, detection)
        else:
            graph = CyberZoneGraph(zones, edges, probs, hold, det, act, initial, detection)
        return build_chain(graph)
    except ValueError as exc:
        raise InputError(path, "-", str(exc)) from None


# ---------------------------------------------------------------------------- fuel map

def load_fuel_map(path) -> FuelMap:
    f = _Fields(path, "", _read_yaml(path))
    classes = dict(HEAT_CLASSES)
    if f.has("classes"):
        for k, v in f.sub("classes").data.items():
            if not (isinstance(v, list) and len(v) == 3 and all(isinstance(x, (int, float)) for x in v)):
                raise InputError(path, f"classes.{k}", "expected [a, b, c]")
            classes[str(k)] = tuple(float(x) for x in v)
    entries = []
    for u in f.items("units"):
        klass = u.str("class")
        if klass not in classes and not u.has("a"):
            raise InputError(path, f"{u.where}.class", f"unknown turbine class {klass!r}")
        a0, b0, c0 = classes.get(klass, (None, None, None))
        a = u.num("a", a0, lo=0.0)
        entries.append(FuelEntry(u.str("generator"), u.str("node"), klass, a, u.num("b", b0), u.num("c", c0)))
    try:
        return FuelMap(entries, f.num("beta_kg_s_per_mmbtu_h", DEFAULT_BETA, lo=0.0, strict_lo=True),
                       f.str("unmapped", "warn"))
    except ValueError as exc:
        raise InputError(path, "-", str(exc)) from None


# ---------------------------------------------------------------------------- manifest

@dataclass
class StudyManifest:
    path: str
    files: dict
    params: dict


def read_manifest(path) -> StudyManifest:
    f = _Fields(path, "", _read_yaml(path))
    base = os.path.dirname(os.path.abspath(path))
    files = {}
    fs = f.sub("files")
    for key in ("power", "gas", "cyber", "fuel_map", "loads"):
        rel = fs.str(key)
        full = rel if os.path.isabs(rel) else os.path.join(base, rel)
        if not os.path.exists(full):
            raise InputError(path, f"files.{key}", f"referenced file {rel!r} does not exist")
        files[key] = full
    s = f.sub("scenario", {})
    params = dict(
        name=f.str("name", os.path.splitext(os.path.basename(path))[0]),
        horizon=s.num("horizon_h", 24, lo=1, integer=True),
        n_samples=s.num("samples", 1000, lo=1, integer=True),
        seed=s.num("seed", 0, lo=0, integer=True),
        voll=s.num("voll_per_mwh", 10_000.0, lo=0.0, strict_lo=True),
        gap_tol=s.num("gap_tol", 1e-4, lo=0.0),
        rtol=s.num("rtol", 1e-6, lo=0.0, strict_lo=True),
        atol=s.num("atol", 1e-5, lo=0.0, strict_lo=True),
        togf_points=s.num("togf_points", 25, lo=2, integer=True),
        togf_margin=s.num("togf_margin_kg_m3", 0.0, lo=0.0),
        ramp_minutes=s.num("ramp_minutes", DEFAULT_RAMP_MIN, lo=0.0, hi=60.0),
        escalate=s.bool("escalate", True),
        deploy_reserves=s.bool("deploy_reserves", False),
        cap_gas_at_baseline=s.bool("cap_gas_at_baseline", True),
        max_curtail_rounds=s.num("max_curtail_rounds", 10, lo=1, integer=True),
    )
    return StudyManifest(os.path.abspath(path), files, params)


def load_manifest(path, **overrides) -> ScenarioConfig:
    """Read and validate a study manifest and everything it references."""
    man = read_manifest(path)
    fl = man.files
    system = load_power(fl["power"])
    network = load_gas(fl["gas"])
    chain = load_cyber(fl["cyber"])
    fmap = load_fuel_map(fl["fuel_map"])
    p = dict(man.params)
    p.update({k: v for k, v in overrides.items() if v is not None})
    load = load_loads(fl["loads"], system.buses, p["horizon"])
    gids = set(system.gen_ids)
    for k, e in enumerate(fmap.entries):
        if e.generator not in gids:
            raise InputError(fl["fuel_map"], f"units[{k}].generator", f"generator {e.generator} is not in the power system")
        if e.node not in network.node_ids:
            raise InputError(fl["fuel_map"], f"units[{k}].node", f"gas node {e.node} is not in the gas network")
    for zone_state, comp in chain.actuator_map.items():
        if comp not in network.compressor_ids:
            raise InputError(fl["cyber"], f"actuators.{chain.states[zone_state]}",
                             f"compressor {comp} is not in the gas network")
    try:
        return ScenarioConfig(system, network, chain, fmap, load, **p)
    except ValueError as exc:
        raise InputError(path, "-", str(exc)) from None
