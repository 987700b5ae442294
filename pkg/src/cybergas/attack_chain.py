"""Continuous-time Markov chain model of an attacker moving through ICS firewall zones.

States mirror the zones of a Purdue-style cyber topology plus one absorbing
detection state.  The generator ``Q`` is assembled from per-zone holding rates
and embedded jump probabilities; transient distributions are evaluated with
uniformization, and attacker paths are drawn with the jump-chain construction.
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

TIERS = ("internet", "enterprise", "dmz", "manufacturing", "area", "actuator-control", "detection")

_ROW_SUM_TOL = 1e-9
_POISSON_TAIL = 1e-12
# uniformized rate * t above which P(t) is built by repeated squaring
_SQUARING_THRESHOLD = 32.0


@dataclass(frozen=True)
class Zone:
    id: str
    tier: str
    label: str = ""

    def __post_init__(self):
        if self.tier not in TIERS:
            raise ValueError(f"zone {self.id!r}: unknown tier {self.tier!r}")


@dataclass
class CyberZoneGraph:
    """Cyber topology: zones, allowed links, jump probabilities and rates.

    ``jump_probs`` is keyed by directed ``(src, dst)`` zone pairs and may
    already contain the transitions into the detection zone.  Any zone that has
    a ``detection_rates`` entry but no explicit detection transition gets
    ``p = detection_rate / holding_rate`` folded in by :func:`build_chain`.
    """

    zones: list[Zone]
    edges: list[tuple[str, str]]
    jump_probs: dict[tuple[str, str], float]
    holding_rates: dict[str, float]
    detection_rates: dict[str, float] = field(default_factory=dict)
    actuator_map: dict[str, str] = field(default_factory=dict)
    initial: str = "internet"
    detection: str = "detection"

    @classmethod
    def from_scores(cls, zones, edges, scores, holding_rates, detection_rates=None,
                    actuator_map=None, initial="internet", detection="detection"):
        """Build jump probabilities from vulnerability scores in [0, 10].

        For zone ``i`` with detection probability ``q_i = detection_rate_i /
        holding_rate_i`` the exploit probability of directed edge ``(i, j)`` is
        ``(1 - q_i) * score_ij / sum_k score_ik``.
        """
        detection_rates = dict(detection_rates or {})
        probs: dict[tuple[str, str], float] = {}
        outgoing: dict[str, list[tuple[str, float]]] = {}
        for (src, dst), s in scores.items():
            if not 0.0 <= s <= 10.0:
                raise ValueError(f"score for edge {src}->{dst} outside [0, 10]: {s}")
            outgoing.setdefault(src, []).append((dst, float(s)))
        for z in zones:
            if z.id == detection:
                continue
            lam = holding_rates.get(z.id, 0.0)
            q = 0.0
            if z.id in detection_rates and lam > 0:
                q = detection_rates[z.id] / lam
                if not 0.0 <= q <= 1.0:
                    raise ValueError(f"zone {z.id!r}: detection rate exceeds holding rate")
                probs[(z.id, detection)] = q
            out = outgoing.get(z.id, [])
            total = sum(s for _, s in out)
            if total > 0:
                for dst, s in out:
                    probs[(z.id, dst)] = (1.0 - q) * s / total
            elif q < 1.0 and lam > 0:
                raise ValueError(f"zone {z.id!r} has no scored exits and no certain detection")
        return cls(list(zones), list(edges), probs, dict(holding_rates), detection_rates,
                   dict(actuator_map or {}), initial, detection)


@dataclass(frozen=True, eq=False)
class CyberChain:
    states: tuple[str, ...]
    Q: np.ndarray
    rates: np.ndarray
    jump: np.ndarray
    absorbing_index: int
    initial_index: int
    actuator_map: dict[int, str]

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def compressors(self) -> list[str]:
        return sorted(set(self.actuator_map.values()))

    def index(self, state: str) -> int:
        return self.states.index(state)


@dataclass(frozen=True)
class AttackTrajectory:
    visits: tuple[tuple[str, float], ...]
    horizon: float

    def __post_init__(self):
        times = [t for _, t in self.visits]
        if not times or times[0] != 0.0:
            raise ValueError("trajectory must start at t=0")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("visit times must be strictly increasing")

    @property
    def states(self) -> list[str]:
        return [s for s, _ in self.visits]

    def state_at(self, t: float) -> str:
        times = [v[1] for v in self.visits]
        return self.visits[bisect.bisect_right(times, t) - 1][0]


@dataclass(frozen=True)
class ContingencyWindow:
    compressor_id: str
    t_start: float
    t_end: float

    def __post_init__(self):
        if not 0.0 <= self.t_start < self.t_end:
            raise ValueError(f"invalid window [{self.t_start}, {self.t_end}]")

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start


def build_chain(graph: CyberZoneGraph) -> CyberChain:
    """Assemble the CTMC generator ``Q_ij = lambda_i p_ij``, ``Q_ii = -lambda_i``."""
    ids = [z.id for z in graph.zones]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate zone ids")
    if graph.initial not in ids:
        raise ValueError(f"initial zone {graph.initial!r} missing")
    if graph.detection not in ids:
        raise ValueError(f"detection zone {graph.detection!r} missing")
    # detection state goes last so absorbing_index is stable
    states = [i for i in ids if i != graph.detection] + [graph.detection]
    pos = {s: k for k, s in enumerate(states)}
    n = len(states)
    allowed = {(a, b) for a, b in graph.edges} | {(b, a) for a, b in graph.edges}

    rates = np.zeros(n)
    for s, lam in graph.holding_rates.items():
        if s not in pos:
            raise ValueError(f"holding rate for unknown zone {s!r}")
        if lam < 0 or not math.isfinite(lam):
            raise ValueError(f"zone {s!r}: holding rate must be finite and >= 0, got {lam}")
        rates[pos[s]] = lam
    for s, d in graph.detection_rates.items():
        if d < 0:
            raise ValueError(f"zone {s!r}: negative detection rate {d}")
    rates[pos[graph.detection]] = 0.0

    jump = np.zeros((n, n))
    for (a, b), p in graph.jump_probs.items():
        if a not in pos or b not in pos:
            raise ValueError(f"jump probability on unknown zones {a}->{b}")
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"jump probability {a}->{b} outside [0, 1]: {p}")
        if b != graph.detection and (a, b) not in allowed and p > 0:
            raise ValueError(f"jump probability {a}->{b} on a pair with no firewall edge")
        if a == b:
            raise ValueError(f"self transition on zone {a!r}")
        jump[pos[a], pos[b]] = p
    det = pos[graph.detection]
    for s, d in graph.detection_rates.items():
        i = pos[s]
        if (s, graph.detection) not in graph.jump_probs and rates[i] > 0 and d > 0:
            jump[i, det] = d / rates[i]
    jump[det, :] = 0.0

    for s in states[:-1]:
        i = pos[s]
        if rates[i] == 0:
            raise ValueError(f"zone {s!r}: zero holding rate is only allowed for the detection state")
        total = jump[i].sum()
        if abs(total - 1.0) > _ROW_SUM_TOL:
            raise ValueError(f"zone {s!r}: outgoing jump probabilities sum to {total:.12g}, expected 1")

    Q = rates[:, None] * jump
    np.fill_diagonal(Q, -rates)
    actuators = {}
    for zone, comp in graph.actuator_map.items():
        if zone not in pos:
            raise ValueError(f"actuator map references unknown zone {zone!r}")
        actuators[pos[zone]] = comp
    return CyberChain(tuple(states), Q, rates, jump, det, pos[graph.initial], actuators)


def _poisson_weights(mean: float) -> np.ndarray:
    n_max = int(mean + 10.0 * math.sqrt(mean) + 30)
    k = np.arange(n_max + 1)
    w = np.exp(-mean + k * math.log(mean) - gammaln(k + 1)) if mean > 0 else (k == 0).astype(float)
    tail = 1.0 - np.cumsum(w)
    # first index where the remaining Poisson mass is negligible
    cut = int(np.argmax(tail < _POISSON_TAIL))
    return w[: cut + 1]


def transition_matrix(chain: CyberChain, t: float) -> np.ndarray:
    """``P(t) = exp(tQ)`` by uniformization."""
    if t < 0:
        raise ValueError("t must be non-negative")
    n = chain.n_states
    rate = float(chain.rates.max())
    if t == 0 or rate == 0:
        return np.eye(n)
    squarings = 0
    tau = t
    while rate * tau > _SQUARING_THRESHOLD:
        tau /= 2.0
        squarings += 1
    jump = np.eye(n) + chain.Q / rate
    weights = _poisson_weights(rate * tau)
    term = np.eye(n)
    P = weights[0] * term
    for w in weights[1:]:
        term = term @ jump
        P += w * term
    for _ in range(squarings):
        P = P @ P
    np.clip(P, 0.0, 1.0, out=P)
    P /= P.sum(axis=1, keepdims=True)
    return P


def state_distribution(chain: CyberChain, pi0, t: float) -> np.ndarray:
    pi0 = np.asarray(pi0, dtype=float)
    if pi0.shape != (chain.n_states,):
        raise ValueError(f"pi0 must have length {chain.n_states}")
    if (pi0 < 0).any() or abs(pi0.sum() - 1.0) > _ROW_SUM_TOL:
        raise ValueError("pi0 must be a probability vector")
    return pi0 @ transition_matrix(chain, t)


def initial_distribution(chain: CyberChain) -> np.ndarray:
    pi0 = np.zeros(chain.n_states)
    pi0[chain.initial_index] = 1.0
    return pi0


class _JumpSampler:
    def __init__(self, chain: CyberChain):
        self.chain = chain
        self.cum = [list(np.cumsum(row)) for row in chain.jump]
        self.mean_hold = [1.0 / r if r > 0 else math.inf for r in chain.rates]

    def draw(self, rng: np.random.Generator, horizon: float) -> AttackTrajectory:
        ch = self.chain
        i = ch.initial_index
        t = 0.0
        visits = [(ch.states[i], 0.0)]
        while ch.rates[i] > 0:
            t += rng.exponential(self.mean_hold[i])
            if t >= horizon:
                break
            cum = self.cum[i]
            j = min(bisect.bisect_right(cum, rng.random() * cum[-1]), len(cum) - 1)
            i = j
            visits.append((ch.states[i], t))
        return AttackTrajectory(tuple(visits), horizon)


def sample_trajectory(chain: CyberChain, horizon: float, seed: int) -> AttackTrajectory:
    """One attacker path on ``[0, horizon]``; a pure function of ``seed``."""
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    return _JumpSampler(chain).draw(np.random.default_rng(seed), horizon)


def sample_trajectories(chain: CyberChain, horizon: float, n: int, seed: int) -> list[AttackTrajectory]:
    """``n`` paths drawn from one random stream (cheaper than ``n`` seeded calls)."""
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    sampler = _JumpSampler(chain)
    rng = np.random.default_rng(seed)
    return [sampler.draw(rng, horizon) for _ in range(n)]


def extract_contingencies(traj: AttackTrajectory, chain: CyberChain) -> list[ContingencyWindow]:
    """Compressor outage windows: sojourns in actuator-control states.

    A window opens when the attacker enters an actuator zone and closes when it
    leaves (to detection or elsewhere) or at the horizon.  Overlapping or
    touching windows on the same compressor are merged.
    """
    by_state = {chain.states[i]: comp for i, comp in chain.actuator_map.items()}
    raw: list[ContingencyWindow] = []
    visits = traj.visits
    for k, (state, t0) in enumerate(visits):
        comp = by_state.get(state)
        if comp is None or t0 >= traj.horizon:
            continue
        t1 = visits[k + 1][1] if k + 1 < len(visits) else traj.horizon
        t1 = min(t1, traj.horizon)
        if t1 > t0:
            raw.append(ContingencyWindow(comp, t0, t1))
    merged: list[ContingencyWindow] = []
    for w in sorted(raw, key=lambda w: (w.compressor_id, w.t_start)):
        if merged and merged[-1].compressor_id == w.compressor_id and w.t_start <= merged[-1].t_end:
            last = merged.pop()
            w = ContingencyWindow(w.compressor_id, last.t_start, max(last.t_end, w.t_end))
        merged.append(w)
    return sorted(merged, key=lambda w: (w.t_start, w.compressor_id))


def detection_time(traj: AttackTrajectory, chain: CyberChain) -> float | None:
    det = chain.states[chain.absorbing_index]
    for state, t in traj.visits:
        if state == det:
            return t
    return None
