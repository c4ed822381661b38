"""Deterministic slotted simulator of a multi-hop wireless network.

Each slot: (1) compute link capacities from the current transmit
powers, (2) move payload through per-link queues up to capacity,
(3) measure per-link slack and update the congestion coefficients at
the link receivers, (4) advance signaling messages one hop, (5) tick
every node's protocol stack. Everything is driven by a single seed;
identical configuration gives a bit-identical metrics log.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field

import numpy as np

from . import algogen, channel
from . import expr as exmod
from . import pps
from .errors import IncompatibleProgram, RoleMismatch
from .scenario import Scenario
from .schema import Layer

EPS_PKTS = 1e-12
UTILITY_RATE_FLOOR = 1e-3

SCHEMES = ("WNOS-T-P", "WNOS-T", "WNOS-P", "NoControl", "BestResponse")
_SCHEME_ALIASES = {
    "wnos-t-p": "WNOS-T-P", "wnostp": "WNOS-T-P", "wnos_t_p": "WNOS-T-P",
    "wnos-t": "WNOS-T", "wnos_t": "WNOS-T",
    "wnos-p": "WNOS-P", "wnos_p": "WNOS-P",
    "nocontrol": "NoControl", "no-control": "NoControl", "no_control": "NoControl",
    "bestresponse": "BestResponse", "best-response": "BestResponse",
    "best_response": "BestResponse",
}

CSV_HEADER = "slot,session_id,throughput_pps,node_id,tx_power_mw,link_id,lambda,utility"


def canonical_scheme(name: str) -> str:
    key = name.strip().lower()
    if key in _SCHEME_ALIASES:
        return _SCHEME_ALIASES[key]
    raise IncompatibleProgram(f"unknown scheme {name!r}; choose from {', '.join(SCHEMES)}")


def _fmt(x) -> str:
    if x == "":
        return ""
    return "%.10g" % x


@dataclass
class MetricsLog:
    scheme: str
    n_sessions: int
    n_nodes: int
    n_links: int
    slots: list = field(default_factory=list)
    throughput: list = field(default_factory=list)   # per slot: tuple per session, pps
    power_mw: list = field(default_factory=list)     # per slot: tuple per node
    lam: list = field(default_factory=list)          # per slot: tuple per link
    utility: list = field(default_factory=list)      # per slot: float

    def append(self, slot, thr, power, lam, utility):
        if self.slots and slot <= self.slots[-1]:
            raise ValueError("metrics slots must be strictly increasing")
        self.slots.append(slot)
        self.throughput.append(tuple(thr))
        self.power_mw.append(tuple(power))
        self.lam.append(tuple(lam))
        self.utility.append(float(utility))

    def text(self) -> str:
        lines = [CSV_HEADER]
        width = max(self.n_sessions, self.n_nodes, self.n_links, 1)
        for i, slot in enumerate(self.slots):
            for row in range(width):
                cols = [str(slot)]
                if row < self.n_sessions:
                    cols += [str(row), _fmt(self.throughput[i][row])]
                else:
                    cols += ["", ""]
                if row < self.n_nodes:
                    cols += [str(row), _fmt(self.power_mw[i][row])]
                else:
                    cols += ["", ""]
                if row < self.n_links:
                    cols += [str(row), _fmt(self.lam[i][row])]
                else:
                    cols += ["", ""]
                cols.append(_fmt(self.utility[i]) if row == 0 else "")
                lines.append(",".join(cols))
        return "\n".join(lines) + "\n"

    def to_csv(self, path):
        from pathlib import Path
        Path(path).write_text(self.text(), encoding="utf-8")

    def steady_utility(self, frac: float = 0.2) -> float:
        if not self.utility:
            return float("nan")
        n = max(1, int(len(self.utility) * frac))
        return float(np.mean(self.utility[-n:]))

    def steady_throughput(self, session: int, frac: float = 0.2) -> float:
        n = max(1, int(len(self.slots) * frac))
        return float(np.mean([t[session] for t in self.throughput[-n:]]))

    def steady_total_power(self, frac: float = 0.2) -> float:
        n = max(1, int(len(self.slots) * frac))
        return float(np.mean([sum(p) for p in self.power_mw[-n:]]))


def _utility_evaluator(program):
    """Evaluate the abstract objective on measured rates and powers."""
    fam_element = {f.name: f.element for f in program.variables}

    def value(thr_pps, gain_db):
        env = {
            "sesrate": np.maximum(np.asarray(thr_pps, dtype=float), UTILITY_RATE_FLOOR),
            "lnkpwr": np.asarray(gain_db, dtype=float),
        }

        def ev(e, idx):
            if e.op == exmod.CONST:
                return e.value
            if e.op == exmod.VAR:
                element = fam_element.get(e.name, e.name)
                if element not in env:
                    raise IncompatibleProgram(f"utility reads unmeasured element {element!r}")
                return float(env[element][idx])
            if e.op == exmod.ADD:
                return sum(ev(a, idx) for a in e.args)
            if e.op == exmod.MUL:
                return math.prod(ev(a, idx) for a in e.args)
            if e.op == exmod.LOG:
                return math.log(max(ev(e.args[0], idx), UTILITY_RATE_FLOOR))
            if e.op == exmod.SQRT:
                return math.sqrt(max(ev(e.args[0], idx), 0.0))
            if e.op == exmod.SUM_OVER:
                fam = {"netses": "sesrate", "netlnk": "lnkpwr"}.get(e.over)
                if fam is None:
                    raise IncompatibleProgram(f"utility sums over unsupported set {e.over!r}")
                return sum(ev(e.args[0], i) for i in range(len(env[fam])))
            raise IncompatibleProgram(f"cannot evaluate utility node {e.op}")

        return ev(program.utility, None)

    return value


def _check_dual_rules(program):
    """The runtime prices link capacity; any other coupling is unsupported."""
    for rule in program.dual_rules:
        if rule.forall != "netlnk":
            raise IncompatibleProgram(
                f"dual rule over {rule.forall!r}; the simulator prices links only")
        caps = [v for v in exmod.var_refs(rule.c) if v.name == "lnkcap"]
        if not caps:
            raise IncompatibleProgram("dual rule limit is not the link capacity")
    if len(program.dual_rules) > 1:
        raise IncompatibleProgram("the simulator supports one priced constraint family")


class SimWorld:
    """Mutable simulation state for one (scenario, program, scheme) run."""

    def __init__(self, scenario: Scenario, program, scheme: str, seed: int | None = None):
        scheme = canonical_scheme(scheme)
        scenario.validate()
        _check_dual_rules(program)
        self.scenario = scenario
        self.program = program
        self.scheme = scheme
        self.seed = scenario.seed if seed is None else seed
        self.slot = 0

        self.layout = channel.make_layout(
            scenario.positions(), scenario.link_ends(), scenario.link_bands(),
            scenario.channel, scenario.bandwidth_hz, scenario.packet_size_bits)

        settings = program.settings
        self.dual_rule = algogen.DualUpdateRule(
            step=algogen.parse_step(settings.get("dual_step"), algogen.DEFAULT_DUAL_STEP))
        self.smooth_window = int(settings.get("smooth_window",
                                              scenario.settings.get("smooth_window", 100)))
        self.ratio = int(settings.get("timescale_ratio", pps.DEFAULT_TIMESCALE_RATIO))
        self.surrogate_grad = str(settings.get("phys_gradient", "high_snr")) != "exact"
        # links carrying traffic defend a baseline capacity even while
        # uncongested, which damps price/power limit cycles
        self.weight_floor = float(settings.get("phys_weight_floor", 0.05))

        S, N, L = len(scenario.sessions), scenario.n_nodes, scenario.n_links
        self.queues = np.zeros((L, S))
        self.duty = np.zeros(L)   # airtime share of the previous slot
        self.lam = np.zeros(L)
        self.injected = np.zeros(S)
        self.delivered = np.zeros(S)
        self._window_buf = []
        self._window_sum = np.zeros(S)
        self.messages: list = []
        self.metrics = MetricsLog(scheme=scheme, n_sessions=S, n_nodes=N, n_links=L)
        # per-slot counts of solver executions, for the timescale invariant
        self.exec_transport: list = []
        self.exec_physical: list = []
        self.due_flags: list = []  # (transport due, physical due) per slot

        # static routing tables
        self._sessions_of_link = scenario.sessions_of_link()
        self._next_link = {}       # (link, session) -> downstream link or None
        self._dual_route = {}      # (link, session) -> node chain rx .. source
        for s in scenario.sessions:
            chain = scenario.node_path(s)
            for i, lid in enumerate(s.path):
                nxt = s.path[i + 1] if i + 1 < len(s.path) else None
                self._next_link[(lid, s.id)] = nxt
                rx_pos = i + 1
                route = tuple(reversed(chain[: rx_pos + 1]))
                self._dual_route[(lid, s.id)] = route
        self._tx_node = np.array([tx for _, tx, _, _ in scenario.links])
        self._rx_node = np.array([rx for _, _, rx, _ in scenario.links])

        self._build_stacks()

    # -- construction -----------------------------------------------------

    def _plans(self):
        out = {}
        for role, template in self.program.templates.items():
            out[role] = algogen.synthesize_plan(template, self.program.settings)
        return out

    def _gain_bounds(self):
        """Per-link transmit-gain bounds after program overrides."""
        scn = self.scenario
        base = pps.TX_GAIN_RANGE
        if "node" in self.program.templates:
            for el, b in self.program.templates["node"].variables:
                if el == "lnkpwr":
                    base = b
        bounds = {lid: base for lid, *_ in scn.links}
        for rule in self.program.bound_rules:
            if rule.element != "lnkpwr":
                continue
            if rule.span == "seslnk":
                if rule.owner_index >= len(scn.sessions):
                    raise IncompatibleProgram(
                        f"bound rule pins session {rule.owner_index}, scenario has {len(scn.sessions)}")
                links = scn.sessions[rule.owner_index].path
            elif rule.span == "netlnk":
                links = [lid for lid, *_ in scn.links]
            elif rule.span == "lnknd":
                links = scn.links_of_node().get(rule.owner_index, [])
            else:
                raise IncompatibleProgram(f"bound rule over unsupported set {rule.span!r}")
            for l in links:
                lo, hi = bounds[l]
                bounds[l] = (max(lo, rule.lo), min(hi, rule.hi))
                if bounds[l][0] > bounds[l][1]:
                    raise IncompatibleProgram(f"empty gain bounds for link {l}")
        return bounds

    def _build_stacks(self):
        scn = self.scenario
        control_t = self.scheme in ("WNOS-T-P", "WNOS-T")
        control_p = self.scheme in ("WNOS-T-P", "WNOS-P")
        best = self.scheme == "BestResponse"
        plans = self._plans()
        gain_bounds = self._gain_bounds()

        rate_bounds = None
        if "session" in self.program.templates:
            for el, b in self.program.templates["session"].variables:
                if el == "sesrate":
                    rate_bounds = b
        if rate_bounds is None:
            rate_bounds = (0.01, 10.0)

        links_of_node = scn.links_of_node()
        self.stacks = []
        rng = random.Random(1_000_003 * self.seed + 97)
        staleness = int(self.program.settings.get("staleness_slots", 3 * self.ratio))
        for nid, *_ in scn.nodes:
            stack = pps.NodeStack(node_id=nid, staleness_slots=staleness)
            stack.owned_links = list(links_of_node.get(nid, []))
            for s in scn.sessions:
                if s.source == nid:
                    stack.sourced_sessions.append(s.id)
                    stack.session_paths[s.id] = tuple(s.path)
                    stack.rate_bounds[s.id] = rate_bounds
                chain = scn.node_path(s)
                if nid in chain[:-1]:
                    stack.knobs.network[s.id] = chain[chain.index(nid) + 1]
            for l in stack.owned_links:
                stack.gain_bounds[l] = gain_bounds[l]
            try:
                pps.install(stack, self.program, plans,
                            control_transport=control_t, control_physical=control_p,
                            ratio=self.ratio)
            except RoleMismatch as e:
                raise IncompatibleProgram(str(e)) from e
            pps.init_knobs(
                stack,
                bands={l: scn.links[l][3] for l in stack.owned_links},
                packet_bits={s.id: s.packet_size_bits for s in scn.sessions},
                rng=rng if not best else None,
                best_response=best,
            )
            self.stacks.append(stack)

    # -- per-slot state ----------------------------------------------------

    def _rates_pps(self) -> np.ndarray:
        out = np.zeros(len(self.scenario.sessions))
        for stack in self.stacks:
            for ses, knob in stack.knobs.transport.items():
                out[ses] = knob["rate_pps"]
        return out

    def _gains_db(self) -> np.ndarray:
        out = np.zeros(self.scenario.n_links)
        for stack in self.stacks:
            for link, knob in stack.knobs.physical.items():
                out[link] = knob["tx_gain_db"]
        return out

    def _node_power_mw(self, gains_db) -> np.ndarray:
        out = np.zeros(self.scenario.n_nodes)
        for lid, tx, _, _ in self.scenario.links:
            out[tx] += float(channel.gain_db_to_mw(gains_db[lid]))
        return out

    # -- simulation step -----------------------------------------------------

    def step(self):
        scn = self.scenario
        t = self.slot
        t_exec = t + 1
        S, L = len(scn.sessions), scn.n_links
        slot_s = scn.slot_seconds

        rates = self._rates_pps()
        gains = self._gains_db()
        powers = channel.gain_db_to_mw(gains)
        duty = self.duty

        # (1) capacities given the airtime each neighbor used last slot
        sinr_now = channel.sinr(self.layout, powers, active=duty)
        if scn.channel.high_snr_approx:
            caps = self.layout.pps_scale * np.maximum(np.log2(np.maximum(sinr_now, 1e-12)), 0.0)
        else:
            caps = self.layout.pps_scale * np.log2(1.0 + sinr_now)

        # (2) injection and store-and-forward delivery
        arrivals_now = np.zeros((L, S))
        for s in scn.sessions:
            budget = s.packet_count - self.injected[s.id]
            if budget <= EPS_PKTS:
                continue
            inj = min(rates[s.id] * slot_s, budget)
            arrivals_now[s.path[0], s.id] += inj
            self.injected[s.id] += inj
        delivered_now = np.zeros(S)
        served_pkts = np.zeros(L)
        for lid in range(L):
            total = self.queues[lid].sum()
            if total <= EPS_PKTS:
                continue
            served_total = min(total, caps[lid] * slot_s)
            served_pkts[lid] = served_total
            share = self.queues[lid] * (served_total / total)
            self.queues[lid] -= share
            for s_id in self._sessions_of_link[lid]:
                amount = share[s_id]
                if amount <= 0.0:
                    continue
                nxt = self._next_link[(lid, s_id)]
                if nxt is not None:
                    arrivals_now[nxt, s_id] += amount
                else:
                    delivered_now[s_id] += amount
        # airtime actually used this slot, the interference state for the next
        with np.errstate(divide="ignore", invalid="ignore"):
            new_duty = np.where(caps * slot_s > EPS_PKTS,
                                np.minimum(served_pkts / np.maximum(caps * slot_s, EPS_PKTS), 1.0),
                                (self.queues.sum(axis=1) > EPS_PKTS).astype(float))

        # (3) slack measurement and price update at each link receiver
        arr_rate = arrivals_now.sum(axis=1) / slot_s
        carrying = new_duty > 0.0
        weights = np.where(carrying, np.maximum(self.lam, self.weight_floor), self.lam)
        grad_m = channel.grad_components_db(self.layout, gains, weights, active=duty,
                                            surrogate=self.surrogate_grad)
        for lid in range(L):
            slack = arr_rate[lid] - caps[lid]
            new_lam = algogen.dual_update(self.lam[lid], slack, self.dual_rule, t_exec)
            self.lam[lid] = new_lam
            rx = int(self._rx_node[lid])
            rx_stack = self.stacks[rx]
            rx_stack.registers.measured_link_rate[lid] = arr_rate[lid]
            rx_stack.registers.queue_len[lid] = float(self.queues[lid].sum())
            rx_stack.registers.measured_sinr[lid] = float(sinr_now[lid])
            for s_id in self._sessions_of_link[lid]:
                route = self._dual_route[(lid, s_id)]
                rx_stack.outbox.append(pps.SignalingMessage(
                    kind=pps.DUAL_REPORT, source=("link", lid), dest=route[-1],
                    payload=float(new_lam), timestamp=t_exec, about=lid,
                    route=route, hop_budget=len(route) - 1))
            for k in range(L):
                if grad_m[k, lid] == 0.0:
                    continue
                target = int(self._tx_node[k])
                rx_stack.outbox.append(pps.SignalingMessage(
                    kind=pps.GRADIENT_REPORT, source=("link", lid), dest=target,
                    payload=float(grad_m[k, lid]), timestamp=t_exec, about=k,
                    route=(rx, target), hop_budget=1))

        # measured noise-plus-interference per receiving node and band
        denom = powers * np.diag(self.layout.gains) / np.maximum(sinr_now, 1e-300)
        for lid in range(L):
            rx = int(self._rx_node[lid])
            band = scn.links[lid][3]
            self.stacks[rx].registers.noise_plus_interference[band] = float(denom[lid])
            if duty[lid] > 0.0:
                self.stacks[rx].registers.neighbor_powers[int(self._tx_node[lid])] = float(
                    powers[lid] * duty[lid])

        # (4) advance in-flight signaling one hop; deliver at the route end
        still = []
        for msg, pos in self.messages:
            pos += 1
            if pos >= len(msg.route) - 1:
                pps.handle_signal(self.stacks[msg.dest], msg, now=t_exec)
            else:
                still.append((msg, pos))
        self.messages = still

        # (5) run every stack; collect writes and fresh signaling
        n_t = n_p = 0
        for stack in self.stacks:
            periods = stack.decision.timescales
            if Layer.PHYSICAL in stack.decision.installed and t_exec % periods[Layer.PHYSICAL] == 0:
                n_p += 1
            if Layer.TRANSPORT in stack.decision.installed and t_exec % periods[Layer.TRANSPORT] == 0:
                n_t += 1
            _, msgs = pps.tick(stack, t_exec)
            for m in msgs:
                self.messages.append((m, 0))
        self.exec_transport.append(n_t)
        self.exec_physical.append(n_p)
        self.due_flags.append((t_exec % self.ratio == 0, True))

        # merge arrivals for the next slot, account conservation
        self.queues += arrivals_now
        self.delivered += delivered_now
        self.duty = new_duty
        thr_now = delivered_now / slot_s
        self._window_buf.append(thr_now)
        self._window_sum += thr_now
        if len(self._window_buf) > self.smooth_window:
            self._window_sum -= self._window_buf.pop(0)

        residual = self.injected.sum() - self.delivered.sum() - float(self.queues.sum())
        if abs(residual) > 1e-6 * max(1.0, self.injected.sum()):
            raise AssertionError(
                f"packet conservation violated at slot {t}: residual {residual}")

        thr = self._window_sum / len(self._window_buf)
        util = self._utility(thr, gains)
        self.metrics.append(t, thr, self._node_power_mw(gains), self.lam.copy(), util)
        self.slot += 1
        return self

    def _utility(self, thr, gains):
        if not hasattr(self, "_util_fn"):
            self._util_fn = _utility_evaluator(self.program)
        return self._util_fn(thr, gains)

    def run(self):
        for _ in range(self.scenario.duration):
            self.step()
        return self.metrics


def run(scenario: Scenario, program, schemes, seed: int | None = None) -> dict:
    """One metrics log per scheme, all runs driven by the same seed."""
    logs = {}
    for scheme in schemes:
        world = SimWorld(scenario, program, scheme, seed=seed)
        logs[world.scheme] = world.run()
    return logs
