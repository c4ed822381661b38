"""Design-time instantiation of virtual elements.

Global set elements are instantiated to a fixed index range; local set
elements get equal-cardinality random subsets of their mother set, with
an order-insensitive digest plus exact sorted-list comparison enforcing
that no two instances of one element type coincide. A finished pool is
immutable in practice and fully determined by its configuration.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field

from .errors import (
    ConfigError,
    EmptyInstance,
    ExhaustedResampling,
    IncompletePool,
    NotGlobal,
    NotLocal,
)
from .schema import Scope, VirtualElement

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def hash_id(members) -> int:
    """64-bit FNV-1a digest of the sorted, comma-joined member indices.

    Order-insensitive and stable across runs and platforms; uniqueness
    decisions always fall back to exact comparison of the sorted list.
    """
    members = list(members)
    if not members:
        raise EmptyInstance("an instance needs at least one member")
    data = ",".join(str(m) for m in sorted(members)).encode("ascii")
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


@dataclass(frozen=True)
class Instance:
    element: str
    members: tuple
    owner: int | None = None
    digest: int = field(default=0)

    @property
    def sorted_members(self) -> tuple:
        return tuple(sorted(self.members))


def _make_instance(element: str, members, owner=None) -> Instance:
    return Instance(element=element, members=tuple(members), owner=owner,
                    digest=hash_id(members))


@dataclass(frozen=True)
class DIConfig:
    n_global: int = 20
    n_local: int = 10
    rng_seed: int = 0
    max_resample: int = 1000

    def __post_init__(self):
        if not (0 < self.n_local <= self.n_global):
            raise ConfigError(f"need 0 < n_local <= n_global, got ({self.n_global}, {self.n_local})")
        if self.max_resample < 1:
            raise ConfigError("max_resample must be at least 1")

    @property
    def capacity(self) -> int:
        """Number of distinct local instances one element type can hold."""
        return math.comb(self.n_global, self.n_local)


def _draw_subset(rng: random.Random, population, k: int) -> list:
    # partial Fisher-Yates driven only by rng.random(), for cross-version stability
    pool = list(population)
    n = len(pool)
    for i in range(k):
        j = i + min(int(rng.random() * (n - i)), n - i - 1)
        pool[i], pool[j] = pool[j], pool[i]
    return pool[:k]


class InstancePool:
    """Instances generated for one compilation run."""

    def __init__(self, config: DIConfig):
        self.config = config
        self.global_instances = {}
        self.local_instances = {}
        self.hash_index = {}
        self._seen = {}
        self._derived = {}
        self._rng = random.Random(config.rng_seed)

    # -- registration ----------------------------------------------------

    def _register_local(self, inst: Instance):
        key = inst.sorted_members
        seen = self._seen.setdefault(inst.element, set())
        if key in seen:
            raise ValueError(f"duplicate instance for {inst.element}: {key}")
        seen.add(key)
        self.local_instances[(inst.element, inst.owner)] = inst
        self.hash_index.setdefault(inst.digest, []).append((inst.element, inst.owner))

    def add_global(self, inst: Instance):
        self.global_instances[inst.element] = inst

    # -- queries ----------------------------------------------------------

    def locals_of(self, element: str) -> dict:
        return {owner: inst for (el, owner), inst in self.local_instances.items() if el == element}

    def members(self, element: str, owner: int | None = None) -> tuple:
        if owner is None:
            return self.global_instances[element].members
        return self.local_instances[(element, owner)].members

    def derived(self, element: str) -> dict | None:
        return self._derived.get(element)

    def dump(self) -> str:
        """One line per instance, diff-stable ordering."""
        lines = []
        for name in sorted(self.global_instances):
            inst = self.global_instances[name]
            csv = ",".join(str(m) for m in inst.sorted_members)
            lines.append(f"element={name} owner=- members={csv} hash={inst.digest:016x}")
        for (name, owner) in sorted(self.local_instances):
            inst = self.local_instances[(name, owner)]
            csv = ",".join(str(m) for m in inst.sorted_members)
            lines.append(f"element={name} owner={owner} members={csv} hash={inst.digest:016x}")
        return "\n".join(lines) + "\n"


def instantiate_global(element: VirtualElement, config: DIConfig) -> Instance:
    """Instance of a network-wide set element: indices 0..n_global-1."""
    if element.scope != Scope.GLOBAL:
        raise NotGlobal(f"{element.id} is not a global element")
    return _make_instance(element.id, range(config.n_global))


def instantiate_local(element: VirtualElement, mother: Instance, pool: InstancePool,
                      config: DIConfig, owner: int | None = None) -> Instance:
    """Draw one new unique equal-cardinality instance from the mother set.

    Resamples on digest collision (confirmed by exact comparison) and
    raises ExhaustedResampling once every size-n_local subset of the
    mother set has been used for this element type.
    """
    if element.scope != Scope.LOCAL:
        raise NotLocal(f"{element.id} is not a local element")
    if config.n_local > len(mother.members):
        raise ConfigError(f"n_local {config.n_local} exceeds mother cardinality {len(mother.members)}")
    seen = pool._seen.setdefault(element.id, set())
    if len(seen) >= config.capacity:
        raise ExhaustedResampling(
            f"{element.id}: all {config.capacity} unique instances already generated")
    for _ in range(config.max_resample):
        members = _draw_subset(pool._rng, mother.members, config.n_local)
        if tuple(sorted(members)) in seen:
            continue  # hash checking confirmed a repeat; draw again
        inst = _make_instance(element.id, members, owner=owner)
        pool._register_local(inst)
        return inst
    raise ExhaustedResampling(
        f"{element.id}: {config.max_resample} consecutive draws collided")


def invert_membership(pool: InstancePool, forward: str, inverse: str) -> dict:
    """Derive the transposed family: owner o is in inverse(m) iff m in forward(o).

    Example: given the sessions sharing each link, derive the links used
    by each session. The result is recorded on the pool for later lookup.
    """
    fwd = pool.locals_of(forward)
    if not fwd:
        raise IncompletePool(f"no instances of {forward!r} to invert")
    missing = set(range(pool.config.n_global)) - set(fwd)
    if missing:
        raise IncompletePool(f"{forward!r} lacks instances for owners {sorted(missing)}")
    out = {}
    for owner, inst in sorted(fwd.items()):
        for m in inst.members:
            out.setdefault(m, []).append(owner)
    result = {m: tuple(sorted(v)) for m, v in out.items()}
    pool._derived[inverse] = result
    return result


def build_pool(schema, local_elements, config: DIConfig,
               global_elements=("netnd", "netlnk", "netses")) -> InstancePool:
    """Instantiate the given elements: one global range per global element,
    one local instance per owner index for each local element."""
    pool = InstancePool(config)
    for name in global_elements:
        elem = schema.element(name)
        pool.add_global(instantiate_global(elem, config))
    for name in local_elements:
        elem = schema.element(name)
        if not isinstance(elem, VirtualElement) or elem.scope != Scope.LOCAL:
            raise NotLocal(f"{name} is not a local element")
        # mother set: the global element with the same member entity type
        mother = None
        for g in global_elements:
            gelem = schema.element(g)
            if gelem.member_entity_type == elem.member_entity_type:
                mother = pool.global_instances[g]
                break
        if mother is None:
            raise IncompletePool(f"no global mother set for {name}")
        for owner in range(config.n_global):
            instantiate_local(elem, mother, pool, config, owner=owner)
    return pool


def pool_from_members(config: DIConfig, locals_map: dict,
                      global_elements=("netnd", "netlnk", "netses")) -> InstancePool:
    """Pool with explicitly given local instances (validated against both rules).

    ``locals_map`` maps element id -> {owner index -> member list}.
    """
    pool = InstancePool(config)
    for name in global_elements:
        pool.add_global(_make_instance(name, range(config.n_global)))
    for element, per_owner in locals_map.items():
        for owner, members in sorted(per_owner.items()):
            members = tuple(members)
            if len(members) != config.n_local:
                raise ConfigError(
                    f"{element}[{owner}]: cardinality {len(members)} != n_local {config.n_local}")
            if not all(0 <= m < config.n_global for m in members):
                raise ConfigError(f"{element}[{owner}]: member outside the mother range")
            inst = _make_instance(element, members, owner=owner)
            try:
                pool._register_local(inst)
            except ValueError as e:
                raise ConfigError(str(e)) from e
    return pool
