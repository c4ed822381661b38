"""Network element model: primitive/virtual elements and their dependency multigraph.

The built-in schema covers the topological holders (node, link, session),
the network-wide and owner-scoped element sets, and the per-entity
parameters the control programs read and set. User programs may register
additional elements; identifiers that are not registered fail at parse
time.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .errors import UnknownElement


class Kind(str, enum.Enum):
    PRIMITIVE = "primitive"
    VIRTUAL = "virtual"


class EntityType(str, enum.Enum):
    NODE = "node"
    LINK = "link"
    SESSION = "session"
    PARAMETER = "parameter"


class Layer(str, enum.Enum):
    APPLICATION = "application"
    TRANSPORT = "transport"
    NETWORK = "network"
    DATALINK = "datalink"
    PHYSICAL = "physical"
    NONE = "none"


class Scope(str, enum.Enum):
    GLOBAL = "global"
    LOCAL = "local"


class Relation(str, enum.Enum):
    HAS_ATTRIBUTE = "has_attribute"
    EACH_MEMBER_IS = "each_member_is"
    IS_FUNCTION_OF = "is_function_of"


@dataclass(frozen=True)
class ElementRef:
    id: str
    kind: Kind
    entity_type: EntityType
    layer: Layer = Layer.NONE

    def __post_init__(self):
        # layer none is reserved for topological holders
        if self.entity_type == EntityType.PARAMETER and self.layer == Layer.NONE:
            raise ValueError(f"parameter element {self.id} needs a layer")


@dataclass(frozen=True)
class VirtualElement:
    ref: ElementRef
    scope: Scope
    member_entity_type: EntityType
    owner: ElementRef | None = None

    def __post_init__(self):
        if self.ref.kind != Kind.VIRTUAL:
            raise ValueError(f"{self.ref.id}: virtual element over a primitive ref")
        if self.scope == Scope.GLOBAL and self.owner is not None:
            raise ValueError(f"{self.ref.id}: global element cannot have an owner")
        if self.scope == Scope.LOCAL and self.owner is None:
            raise ValueError(f"{self.ref.id}: local element needs an owner")

    @property
    def id(self) -> str:
        return self.ref.id


@dataclass(frozen=True)
class DependencyEdge:
    src: str
    dst: str
    relation: Relation


@dataclass
class NetworkSchema:
    """Directed multigraph of elements; parallel edges with different relations."""

    elements: dict = field(default_factory=dict)
    edges: list = field(default_factory=list)
    aliases: dict = field(default_factory=dict)

    def register(self, element, *edges: DependencyEdge, aliases=()):
        name = element.id
        self.elements[name] = element
        self.edges.extend(edges)
        for a in aliases:
            self.aliases[a] = name

    def canonical_name(self, name: str) -> str:
        return self.aliases.get(name, name)

    def element(self, name: str):
        key = self.canonical_name(name)
        if key not in self.elements:
            raise UnknownElement(f"unknown element {name!r}")
        return self.elements[key]

    def has_element(self, name: str) -> bool:
        return self.canonical_name(name) in self.elements

    def ref(self, name: str) -> ElementRef:
        e = self.element(name)
        return e.ref if isinstance(e, VirtualElement) else e

    def has_edge(self, src: str, dst: str, relation: Relation) -> bool:
        return any(
            e.src == src and e.dst == dst and e.relation == relation
            for e in self.edges
        )

    def edges_between(self, src: str, dst: str) -> list:
        return [e for e in self.edges if e.src == src and e.dst == dst]

    def attributes_of(self, holder: str) -> list:
        return [e.dst for e in self.edges if e.src == holder and e.relation == Relation.HAS_ATTRIBUTE]

    def function_closure(self, name: str) -> set:
        """Elements reachable from ``name`` along is_function_of edges."""
        seen, frontier = set(), [self.canonical_name(name)]
        while frontier:
            cur = frontier.pop()
            for e in self.edges:
                if e.src == cur and e.relation == Relation.IS_FUNCTION_OF and e.dst not in seen:
                    seen.add(e.dst)
                    frontier.append(e.dst)
        return seen

    def validate(self):
        for e in self.elements.values():
            if isinstance(e, VirtualElement) and e.owner is not None:
                if e.owner.id not in self.elements:
                    raise UnknownElement(f"{e.id}: owner {e.owner.id} not registered")
        for edge in self.edges:
            for end in (edge.src, edge.dst):
                if end not in self.elements:
                    raise UnknownElement(f"edge endpoint {end} not registered")


def _holder_entity(schema: NetworkSchema, element) -> str | None:
    """Primitive element id whose attributes the next path hop may name."""
    if isinstance(element, VirtualElement):
        target = element.member_entity_type
    elif element.entity_type != EntityType.PARAMETER:
        target = element.entity_type
    else:
        return None
    for name, e in schema.elements.items():
        if not isinstance(e, VirtualElement) and e.kind == Kind.PRIMITIVE and e.entity_type == target and e.layer == Layer.NONE:
            return name
    return None


def read(schema: NetworkSchema, path: str):
    """Resolve a dot-separated chain of attribute/member hops.

    Returns the element the final hop names. Pure; raises UnknownElement
    when any hop fails to resolve.
    """
    hops = [h for h in path.split(".") if h]
    if not hops:
        raise UnknownElement("empty path")
    current = schema.element(hops[0])
    for hop in hops[1:]:
        holder = _holder_entity(schema, current)
        target = schema.canonical_name(hop)
        if holder is None or not schema.has_edge(holder, target, Relation.HAS_ATTRIBUTE):
            cur_name = current.id if isinstance(current, VirtualElement) else current.id
            raise UnknownElement(f"{cur_name!r} has no attribute {hop!r} (path {path!r})")
        current = schema.element(target)
    return current


def build_default_schema() -> NetworkSchema:
    """Schema with the built-in elements and dependency edges."""
    s = NetworkSchema()

    nd = ElementRef("nd", Kind.PRIMITIVE, EntityType.NODE)
    lnk = ElementRef("lnk", Kind.PRIMITIVE, EntityType.LINK)
    ses = ElementRef("ses", Kind.PRIMITIVE, EntityType.SESSION)
    s.register(nd, aliases=("node",))
    s.register(lnk, aliases=("link",))
    s.register(ses, aliases=("session",))

    params = [
        ElementRef("lnkcap", Kind.PRIMITIVE, EntityType.PARAMETER, Layer.PHYSICAL),
        ElementRef("lnkpwr", Kind.PRIMITIVE, EntityType.PARAMETER, Layer.PHYSICAL),
        ElementRef("lnksinr", Kind.PRIMITIVE, EntityType.PARAMETER, Layer.PHYSICAL),
        ElementRef("sesrate", Kind.PRIMITIVE, EntityType.PARAMETER, Layer.TRANSPORT),
        ElementRef("maxpwr", Kind.PRIMITIVE, EntityType.PARAMETER, Layer.PHYSICAL),
    ]
    alias_map = {
        "lnkcap": ("lkcap",),
        "lnkpwr": ("lkpwr",),
        "lnksinr": ("lksinr",),
        "sesrate": ("sesrt",),
        "maxpwr": (),
    }
    for p in params:
        s.register(p, aliases=alias_map[p.id])

    def velem(name, scope, member, owner=None, aliases=()):
        ref = ElementRef(name, Kind.VIRTUAL, member)
        v = VirtualElement(ref, scope, member, owner)
        s.register(v, aliases=aliases)
        return v

    velem("netnd", Scope.GLOBAL, EntityType.NODE, aliases=("ntnd",))
    velem("netlnk", Scope.GLOBAL, EntityType.LINK, aliases=("ntlk", "ntlnk"))
    velem("netses", Scope.GLOBAL, EntityType.SESSION, aliases=("ntses",))
    velem("nbrnd", Scope.LOCAL, EntityType.NODE, owner=nd)
    velem("lnkses", Scope.LOCAL, EntityType.SESSION, owner=lnk, aliases=("lkses",))
    velem("seslnk", Scope.LOCAL, EntityType.LINK, owner=ses)
    velem("lnknd", Scope.LOCAL, EntityType.LINK, owner=nd, aliases=("lknd",))

    A, M, F = Relation.HAS_ATTRIBUTE, Relation.EACH_MEMBER_IS, Relation.IS_FUNCTION_OF
    s.edges.extend([
        DependencyEdge("lnk", "lnkcap", A),
        DependencyEdge("lnk", "lnkpwr", A),
        DependencyEdge("lnk", "lnksinr", A),
        DependencyEdge("lnk", "lnkses", A),
        DependencyEdge("ses", "sesrate", A),
        DependencyEdge("ses", "seslnk", A),
        DependencyEdge("nd", "nbrnd", A),
        DependencyEdge("nd", "lnknd", A),
        DependencyEdge("nd", "maxpwr", A),
        DependencyEdge("nd", "lnk", A),
        DependencyEdge("nbrnd", "nd", M),
        DependencyEdge("lnkses", "ses", M),
        DependencyEdge("seslnk", "lnk", M),
        DependencyEdge("lnknd", "lnk", M),
        DependencyEdge("netnd", "nd", M),
        DependencyEdge("netlnk", "lnk", M),
        DependencyEdge("netses", "ses", M),
        DependencyEdge("lnksinr", "lnkpwr", F),
        DependencyEdge("lnkcap", "lnksinr", F),
    ])
    s.validate()
    return s
