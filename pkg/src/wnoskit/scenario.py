"""Scenario files: topology, traffic, channel and run configuration.

The format is line-oriented key-value pairs with bracketed table
sections. Comments start with ``#``.

    duration = 4000
    seed = 1
    slot_seconds = 0.01
    bands = 2
    bandwidth_hz = 2000
    [channel]
    path_loss_exponent = 3.0
    reference_gain = 0.01
    noise_floor_mw = 1e-7
    [nodes]           # id x y
    0 0 0
    [links]           # id tx rx band
    0 0 1 0
    [sessions]        # id source dest packet_count packet_size_bits path
    0 0 2 1000000 2048 0,1
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .channel import ChannelModel
from .errors import FormatError, TopologyError


@dataclass(frozen=True)
class Session:
    id: int
    source: int
    dest: int
    packet_count: float
    packet_size_bits: float
    path: tuple  # link ids, source to destination


@dataclass
class Scenario:
    name: str
    nodes: list          # (id, x, y)
    links: list          # (id, tx, rx, band)
    sessions: list       # Session
    n_bands: int
    bandwidth_hz: float
    channel: ChannelModel
    duration: int
    seed: int
    slot_seconds: float = 0.01
    packet_size_bits: float = 2048.0
    settings: dict = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_links(self) -> int:
        return len(self.links)

    def positions(self) -> dict:
        return {nid: (x, y) for nid, x, y in self.nodes}

    def link_ends(self) -> list:
        return [(tx, rx) for _, tx, rx, _ in self.links]

    def link_bands(self) -> list:
        return [band for _, _, _, band in self.links]

    def node_path(self, session: Session) -> list:
        """Node chain source..dest implied by the session's link path."""
        chain = [self.links[session.path[0]][1]]
        for l in session.path:
            chain.append(self.links[l][2])
        return chain

    def sessions_of_link(self) -> dict:
        out = {lid: [] for lid, *_ in self.links}
        for s in self.sessions:
            for l in s.path:
                out[l].append(s.id)
        return out

    def links_of_node(self) -> dict:
        """Outgoing (transmitted) links per node."""
        out = {nid: [] for nid, *_ in self.nodes}
        for lid, tx, _, _ in self.links:
            out[tx].append(lid)
        return out

    def validate(self):
        node_ids = [nid for nid, *_ in self.nodes]
        if node_ids != list(range(len(node_ids))):
            raise TopologyError("node ids must be contiguous from 0")
        link_ids = [lid for lid, *_ in self.links]
        if link_ids != list(range(len(link_ids))):
            raise TopologyError("link ids must be contiguous from 0")
        for lid, tx, rx, band in self.links:
            if tx not in node_ids or rx not in node_ids or tx == rx:
                raise TopologyError(f"link {lid} endpoints are invalid")
            if not (0 <= band < self.n_bands):
                raise TopologyError(f"link {lid} band {band} outside {self.n_bands} bands")
        for s in self.sessions:
            if not s.path:
                raise TopologyError(f"session {s.id} has an empty path")
            for l in s.path:
                if l not in link_ids:
                    raise TopologyError(f"session {s.id} uses unknown link {l}")
            if self.links[s.path[0]][1] != s.source:
                raise TopologyError(f"session {s.id} path does not start at its source")
            if self.links[s.path[-1]][2] != s.dest:
                raise TopologyError(f"session {s.id} path does not end at its destination")
            for a, b in zip(s.path, s.path[1:]):
                if self.links[a][2] != self.links[b][1]:
                    raise TopologyError(f"session {s.id} path breaks between links {a} and {b}")
        if self.duration < 0:
            raise FormatError("duration must be nonnegative")
        return self


_CHANNEL_KEYS = {"path_loss_exponent", "reference_gain", "noise_floor_mw", "high_snr_approx"}
_TOP_KEYS = {"name", "duration", "seed", "slot_seconds", "bands", "bandwidth_hz",
             "packet_size_bits"}


def parse_scenario(text: str, name: str = "scenario") -> Scenario:
    top: dict = {}
    channel: dict = {}
    tables: dict = {"nodes": [], "links": [], "sessions": []}
    section = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in ("channel", "nodes", "links", "sessions"):
                raise FormatError(f"line {lineno}: unknown section [{section}]")
            continue
        if "=" in line and section in (None, "channel"):
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if section == "channel":
                if key not in _CHANNEL_KEYS:
                    raise FormatError(f"line {lineno}: unknown channel key {key!r}")
                channel[key] = float(value)
            else:
                top[key] = value
            continue
        if section in ("nodes", "links", "sessions"):
            tables[section].append((lineno, line.split()))
            continue
        raise FormatError(f"line {lineno}: unparseable line {line!r}")

    def need(key, cast, default=None):
        if key in top:
            try:
                return cast(top[key])
            except ValueError as e:
                raise FormatError(f"bad value for {key!r}: {top[key]!r}") from e
        if default is None:
            raise FormatError(f"missing required key {key!r}")
        return default

    nodes = []
    for lineno, cols in tables["nodes"]:
        if len(cols) != 3:
            raise FormatError(f"line {lineno}: node rows are 'id x y'")
        nodes.append((int(cols[0]), float(cols[1]), float(cols[2])))
    links = []
    for lineno, cols in tables["links"]:
        if len(cols) != 4:
            raise FormatError(f"line {lineno}: link rows are 'id tx rx band'")
        links.append(tuple(int(c) for c in cols))
    default_bits = need("packet_size_bits", float, 2048.0)
    sessions = []
    for lineno, cols in tables["sessions"]:
        if len(cols) != 6:
            raise FormatError(
                f"line {lineno}: session rows are 'id source dest packet_count packet_size_bits path'")
        try:
            path = tuple(int(p) for p in cols[5].split(","))
        except ValueError as e:
            raise FormatError(f"line {lineno}: bad path {cols[5]!r}") from e
        bits = float(cols[4]) if cols[4] != "-" else default_bits
        sessions.append(Session(id=int(cols[0]), source=int(cols[1]), dest=int(cols[2]),
                                packet_count=float(cols[3]), packet_size_bits=bits,
                                path=path))
    if not nodes or not links:
        raise FormatError("scenario needs at least one node and one link")

    model = ChannelModel(
        path_loss_exponent=channel.get("path_loss_exponent", 3.0),
        reference_gain=channel.get("reference_gain", 1e-2),
        noise_floor_mw=channel.get("noise_floor_mw", 1e-7),
        high_snr_approx=bool(channel.get("high_snr_approx", 0)),
    )
    known = _TOP_KEYS
    extra = {k: v for k, v in top.items() if k not in known}
    scn = Scenario(
        name=top.get("name", name),
        nodes=nodes, links=links, sessions=sessions,
        n_bands=need("bands", int),
        bandwidth_hz=need("bandwidth_hz", float),
        channel=model,
        duration=need("duration", int),
        seed=need("seed", int, 0),
        slot_seconds=need("slot_seconds", float, 0.01),
        packet_size_bits=default_bits,
        settings=extra,
    )
    return scn.validate()


def load_scenario(path) -> Scenario:
    """Parse and validate a scenario file."""
    from pathlib import Path
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as e:
        raise FormatError(f"cannot read scenario file {path}: {e}") from e
    return parse_scenario(text, name=p.stem)
