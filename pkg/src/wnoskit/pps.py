"""Per-node programmable protocol stack.

Each node owns a register plane (measurements and received signaling),
a decision plane (installed solver plans with per-layer execution
periods) and the layer knobs the solvers write. Nodes interact only
through signaling messages; the simulator fills registers and routes
messages between stacks.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

from . import algogen
from .errors import RoleMismatch
from .schema import Layer

log = logging.getLogger(__name__)

FEC_RATES = (0.1, 0.2, 0.3, 0.4)
TX_GAIN_RANGE = (0.0, 30.0)
DEFAULT_TX_GAIN_DB = 15.0
DEFAULT_TIMESCALE_RATIO = 30
DUAL_REPORT = "dual_report"
GRADIENT_REPORT = "gradient_report"


@dataclass(frozen=True)
class SignalingMessage:
    kind: str                 # dual_report | gradient_report
    source: tuple             # ('link', id) or ('node', id)
    dest: int                 # node id
    payload: float
    timestamp: int
    about: int                # link the payload concerns (dual: priced link;
                              # gradient: the link whose knob the slope is for)
    route: tuple              # node chain, one hop per slot; route[-1] == dest
    hop_budget: int = 0

    def __post_init__(self):
        if self.payload != self.payload or self.payload in (float("inf"), float("-inf")):
            raise ValueError("signaling payload must be finite")


@dataclass
class RegisterPlane:
    noise_plus_interference: dict = field(default_factory=dict)  # band -> mW
    queue_len: dict = field(default_factory=dict)                # link -> packets
    measured_link_rate: dict = field(default_factory=dict)       # link -> pps
    measured_sinr: dict = field(default_factory=dict)            # own link -> ratio
    received_duals: dict = field(default_factory=dict)           # link -> (value, ts)
    gradient_reports: dict = field(default_factory=dict)         # (about, source) -> (value, ts)
    neighbor_powers: dict = field(default_factory=dict)          # node -> mW
    rejected_signals: int = 0
    stale_events: int = 0

    def dual_for(self, link: int):
        return self.received_duals.get(link)

    def gradient_sum(self, about: int) -> float:
        return sum(v for (a, _), (v, _) in self.gradient_reports.items() if a == about)


@dataclass
class DecisionPlane:
    installed: dict = field(default_factory=dict)   # Layer -> SolverPlan
    timescales: dict = field(default_factory=dict)  # Layer -> period in slots

    def ratio(self) -> float:
        t = self.timescales.get(Layer.TRANSPORT)
        p = self.timescales.get(Layer.PHYSICAL)
        if t is None or p is None:
            return float("nan")
        return t / p


@dataclass
class LayerKnobs:
    transport: dict = field(default_factory=dict)  # session -> {'rate_pps', 'window_pkts', 'packet_size_bits'}
    network: dict = field(default_factory=dict)    # session -> next-hop node
    datalink: dict = field(default_factory=lambda: {"fec_rate": 0.1, "max_retx": 3})
    physical: dict = field(default_factory=dict)   # link -> {'tx_gain_db', 'band', 'modulation'}

    def validate(self):
        if self.datalink["fec_rate"] not in FEC_RATES:
            raise ValueError(f"fec_rate {self.datalink['fec_rate']} outside {FEC_RATES}")
        if self.datalink["max_retx"] < 0:
            raise ValueError("max_retx must be nonnegative")
        for link, phy in self.physical.items():
            lo, hi = TX_GAIN_RANGE
            if not (lo <= phy["tx_gain_db"] <= hi):
                raise ValueError(f"tx_gain_db for link {link} outside [{lo}, {hi}]")
        for ses, tp in self.transport.items():
            if tp["rate_pps"] < 0:
                raise ValueError(f"negative rate for session {ses}")


@dataclass
class NodeStack:
    node_id: int
    sourced_sessions: list = field(default_factory=list)   # session ids this node originates
    owned_links: list = field(default_factory=list)        # link ids this node transmits
    session_paths: dict = field(default_factory=dict)      # session -> tuple of link ids
    rate_bounds: dict = field(default_factory=dict)        # session -> (lo, hi)
    gain_bounds: dict = field(default_factory=dict)        # link -> (lo, hi)
    registers: RegisterPlane = field(default_factory=RegisterPlane)
    decision: DecisionPlane = field(default_factory=DecisionPlane)
    knobs: LayerKnobs = field(default_factory=LayerKnobs)
    staleness_slots: int = 90
    outbox: list = field(default_factory=list)
    control_transport: bool = False
    control_physical: bool = False
    # plans re-bounded per knob, prepared at install time
    rate_plans: dict = field(default_factory=dict)
    gain_plans: dict = field(default_factory=dict)


def install(stack: NodeStack, program, plans: dict, *, control_transport: bool,
            control_physical: bool, ratio: int | None = None) -> DecisionPlane:
    """Install solver plans for the roles this node plays.

    Plans swap atomically: the decision plane is replaced as one object,
    so a program change takes effect at the next tick boundary.
    """
    ratio = int(ratio or program.settings.get("timescale_ratio", DEFAULT_TIMESCALE_RATIO))
    installed = {}
    if control_transport and stack.sourced_sessions:
        if "session" not in plans:
            raise RoleMismatch(
                f"node {stack.node_id} sources sessions but the program has no session template")
        installed[Layer.TRANSPORT] = plans["session"]
    if control_physical and stack.owned_links:
        if "node" not in plans:
            raise RoleMismatch(
                f"node {stack.node_id} transmits links but the program has no node template")
        installed[Layer.PHYSICAL] = plans["node"]
    plane = DecisionPlane(installed=installed,
                          timescales={Layer.PHYSICAL: 1, Layer.TRANSPORT: ratio})
    stack.decision = plane
    stack.control_transport = control_transport
    stack.control_physical = control_physical
    stack.rate_plans = {}
    stack.gain_plans = {}
    if Layer.TRANSPORT in installed:
        for ses in stack.sourced_sessions:
            stack.rate_plans[ses] = replace(installed[Layer.TRANSPORT],
                                            bounds=stack.rate_bounds[ses])
    if Layer.PHYSICAL in installed:
        for link in stack.owned_links:
            lo, hi = stack.gain_bounds.get(link, installed[Layer.PHYSICAL].bounds)
            stack.gain_plans[link] = replace(installed[Layer.PHYSICAL], bounds=(lo, hi))
    return plane


def init_knobs(stack: NodeStack, *, bands: dict, packet_bits: dict, rng=None,
               best_response: bool = False):
    """Midpoint defaults, seeded random draws, or the always-max policy."""
    for ses in stack.sourced_sessions:
        lo, hi = stack.rate_bounds[ses]
        if best_response:
            rate = hi
        elif rng is not None:
            rate = rng.uniform(lo, hi)
        else:
            rate = (lo + hi) / 2.0
        stack.knobs.transport[ses] = {
            "rate_pps": rate, "window_pkts": 64,
            "packet_size_bits": packet_bits[ses],
        }
    for link in stack.owned_links:
        lo, hi = stack.gain_bounds.get(link, TX_GAIN_RANGE)
        if best_response:
            gain = hi
        elif rng is not None:
            gain = rng.uniform(lo, hi)
        else:
            gain = min(max(DEFAULT_TX_GAIN_DB, lo), hi)
        stack.knobs.physical[link] = {"tx_gain_db": gain, "band": bands[link],
                                      "modulation": "gmsk"}
    stack.knobs.validate()


def handle_signal(stack: NodeStack, msg: SignalingMessage, now: int):
    """Apply one delivered message to the register plane.

    Duplicate (source, timestamp) pairs are dropped; dual reports with a
    negative coefficient are rejected and counted.
    """
    if msg.kind == DUAL_REPORT:
        if msg.payload < 0:
            stack.registers.rejected_signals += 1
            return
        prev = stack.registers.received_duals.get(msg.about)
        if prev is not None and prev[1] >= msg.timestamp:
            return
        stack.registers.received_duals[msg.about] = (msg.payload, msg.timestamp)
    elif msg.kind == GRADIENT_REPORT:
        key = (msg.about, msg.source)
        prev = stack.registers.gradient_reports.get(key)
        if prev is not None and prev[1] >= msg.timestamp:
            return
        stack.registers.gradient_reports[key] = (msg.payload, msg.timestamp)
    else:
        log.debug("node %d dropped unknown signal kind %r", stack.node_id, msg.kind)


def _transport_tick(stack: NodeStack, t: int, writes: list):
    plan = stack.decision.installed.get(Layer.TRANSPORT)
    if plan is None:
        return
    for ses in stack.sourced_sessions:
        duals, newest = [], None
        for link in stack.session_paths[ses]:
            entry = stack.registers.dual_for(link)
            if entry is not None:
                duals.append(entry[0])
                newest = entry[1] if newest is None else max(newest, entry[1])
        if newest is not None and t - newest > stack.staleness_slots:
            stack.registers.stale_events += 1
            log.debug("node %d holds rate for session %d: registers stale", stack.node_id, ses)
            continue
        plan_b = stack.rate_plans[ses]
        rate = float(algogen.solve_local(plan_b, duals, {"x0": stack.knobs.transport[ses]["rate_pps"],
                                                         "k": max(t, 1)}))
        stack.knobs.transport[ses]["rate_pps"] = rate
        writes.append((t, stack.node_id, "transport", ses, "rate_pps", rate))


def _physical_tick(stack: NodeStack, t: int, writes: list):
    plan = stack.decision.installed.get(Layer.PHYSICAL)
    if plan is None:
        return
    for link in stack.owned_links:
        grad = stack.registers.gradient_sum(link)
        plan_b = stack.gain_plans[link]
        gain = stack.knobs.physical[link]["tx_gain_db"]
        new = float(algogen.solve_local(plan_b, (), {"gain_db": gain, "grad_db": grad,
                                                     "k": max(t, 1)}))
        stack.knobs.physical[link]["tx_gain_db"] = new
        writes.append((t, stack.node_id, "physical", link, "tx_gain_db", new))


def tick(stack: NodeStack, t: int):
    """Run due solver plans and flush queued signaling.

    The physical plan runs every physical period, the transport plan
    every transport period; knob writes stay within their documented
    ranges. Returns (knob writes, outgoing messages).
    """
    writes: list = []
    periods = stack.decision.timescales
    if Layer.PHYSICAL in periods and t % periods[Layer.PHYSICAL] == 0:
        _physical_tick(stack, t, writes)
    if Layer.TRANSPORT in periods and t % periods[Layer.TRANSPORT] == 0:
        _transport_tick(stack, t, writes)
    stack.knobs.validate()
    msgs, stack.outbox = stack.outbox, []
    return writes, msgs
