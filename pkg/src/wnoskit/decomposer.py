"""Dual decomposition of instantiated control problems.

Pipeline: expand the abstract problem over a generated instance pool,
absorb coupling constraints into the objective with one nonnegative
coefficient per instantiated constraint, normalize the result to a
three-level sum-of-products tree, split the addends by protocol layer
and then by owning entity, and finally map each subproblem's
coefficient index sets back to virtual-element references so the
resulting role templates apply to arbitrary runtime topologies.

Box constraints (a single variable family against a constant) are
folded into variable bounds before dualization; the feasible box is
kept implicit in the per-entity maximizations.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

from . import expr as ex
from .dsl import Constraint, ControlProblemSpec, VariableFamily, parse_program
from .errors import (
    AmbiguousMatch,
    MissingInstance,
    NoMatchingInstance,
    NonSeparable,
    NotNormalized,
    UnattributableTerm,
    UnsupportedConstraintSense,
    ValidationError,
)
from .instantiation import DIConfig, InstancePool, build_pool, invert_membership
from .schema import EntityType, Layer, Scope, VirtualElement

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DualCoefficient:
    constraint_index: int  # global, across all instantiated constraints
    family: int            # dualized constraint family
    owner: int             # owner index within the family

    @property
    def symbol(self) -> str:
        base = "lbd" if self.family == 0 else f"lbd{self.family}"
        return f"{base}_{self.owner:02d}"

    @property
    def var_name(self) -> str:
        return "lbd" if self.family == 0 else f"lbd{self.family}"


@dataclass(frozen=True)
class InstConstraint:
    coeff: DualCoefficient
    g: ex.Expr  # aggregate side, instantiated
    c: ex.Expr  # limit side, instantiated


@dataclass(frozen=True)
class BoundRule:
    """Folded box constraint: tighten bounds of one element over a member set."""
    element: str
    span: str
    owner_index: int | None
    lo: float
    hi: float


@dataclass
class ProblemInstance:
    spec: ControlProblemSpec
    pool: InstancePool
    utility: ex.Expr            # maximize-form, fully indexed
    constraints: list           # InstConstraint, dualized families only
    bound_rules: list           # subset-level overrides (kept for install time)
    decision_elements: dict     # element id -> Layer
    bounds: dict                # (element, index) -> (lo, hi)
    variables: list = field(default_factory=list)  # families with folded bounds
    sense_flipped: bool = False

    def dual_family_count(self) -> int:
        return len({c.coeff.family for c in self.constraints})


@dataclass(frozen=True)
class ExprTree:
    root: ex.Expr
    children: tuple   # level-1 addends
    factors: tuple    # level-2, factors of each level-1 child

    def validate(self):
        if not ex.canonically_equal(ex.add(*self.children), self.root):
            raise NotNormalized("level-1 children do not reassemble to the root")
        for child, fs in zip(self.children, self.factors):
            if not ex.canonically_equal(ex.mul(*fs), child):
                raise NotNormalized("level-2 factors do not reassemble to their child")


@dataclass(frozen=True)
class Subproblem:
    layer: Layer
    entity: tuple | str | None   # (entity type, index), 'shared', or None for a layer group
    expression: ex.Expr
    variables: tuple             # ((element id, index) ...), index None at layer-group stage
    param_refs: tuple            # ((family, owner) ...) of dual coefficients


@dataclass(frozen=True)
class RoleTemplate:
    role: str                # 'session' | 'node'
    expression: ex.Expr      # abstract: element refs and sum_over virtual elements
    variables: tuple         # ((element id, (lo, hi)) ...)
    dual_over: str | None    # virtual element supplying the coefficient vector

    def canonical(self) -> str:
        return ex.canonical_key(self.expression)


@dataclass(frozen=True)
class DualRuleSpec:
    family: int
    forall: str              # element set owning one coefficient each
    g: ex.Expr               # abstract aggregate template
    c: ex.Expr               # abstract limit template


@dataclass
class AbstractProgram:
    sense: str
    utility: ex.Expr                  # original-sense abstract utility
    templates: dict                   # role -> RoleTemplate
    dual_rules: list
    bound_rules: list
    settings: dict
    variables: list                   # VariableFamily list from the spec

    def structural_dump(self) -> str:
        lines = [f"sense={self.sense}"]
        for role in sorted(self.templates):
            t = self.templates[role]
            vs = " ".join(f"{e}[{lo:g},{hi:g}]" for e, (lo, hi) in t.variables)
            lines.append(f"role={role} expr={ex.render(t.expression)} vars={vs} duals={t.dual_over}")
        for r in self.dual_rules:
            lines.append(f"dual family={r.family} forall={r.forall} "
                         f"g={ex.render(r.g)} c={ex.render(r.c)}")
        for b in sorted(self.bound_rules, key=lambda b: (b.element, b.span, b.owner_index or -1)):
            owner = "-" if b.owner_index is None else b.owner_index
            lines.append(f"bound element={b.element} span={b.span} owner={owner} "
                         f"lo={b.lo:g} hi={b.hi:g}")
        return "\n".join(lines) + "\n"


# -- instantiation of the problem ---------------------------------------------

# inverse pairs among the built-in owner-scoped elements
_INVERSES = {"lnkses": "seslnk", "seslnk": "lnkses"}


def _referenced_local_elements(spec: ControlProblemSpec) -> list:
    seen = []
    exprs = [spec.utility]
    for c in spec.constraints:
        exprs += [c.lhs, c.rhs]
    for e in exprs:
        for n in ex.walk(e):
            if n.op == ex.SUM_OVER:
                elem = spec.schema.element(n.over)
                if isinstance(elem, VirtualElement) and elem.scope == Scope.LOCAL:
                    if n.over not in seen:
                        seen.append(n.over)
    return seen


def _is_box(spec: ControlProblemSpec, cons: Constraint):
    """(family, lo, hi) when the constraint is a pure box on one family."""
    sides = [(cons.lhs, cons.rhs, cons.rel), (cons.rhs, cons.lhs, {"le": "ge", "ge": "le", "eq": "eq"}[cons.rel])]
    for var_side, const_side, rel in sides:
        if var_side.op == ex.VAR and var_side.name in spec.family_names() and const_side.op == ex.CONST:
            v = const_side.value
            if rel == "le":
                return spec.family(var_side.name), float("-inf"), v
            if rel == "ge":
                return spec.family(var_side.name), v, float("inf")
            return spec.family(var_side.name), v, v
    return None


def default_pool(spec: ControlProblemSpec, seed: int = 0) -> InstancePool:
    cfg = DIConfig(
        n_global=int(spec.settings.get("n_global", 20)),
        n_local=int(spec.settings.get("n_local", 10)),
        rng_seed=seed,
    )
    needed = []
    for name in _referenced_local_elements(spec):
        inv = _INVERSES.get(name)
        if inv in needed:
            continue  # sample one side of an inverse pair, derive the other
        needed.append(name)
    return build_pool(spec.schema, needed, cfg)


def _local_members(pool: InstancePool, schema, element: str, owner: int):
    if (element, owner) in pool.local_instances:
        return pool.local_instances[(element, owner)].members
    inv = _INVERSES.get(element)
    if inv and pool.locals_of(inv):
        derived = pool.derived(element) or invert_membership(pool, inv, element)
        return derived.get(owner, ())
    raise MissingInstance(f"pool holds no instance of {element!r} for owner {owner}")


def _instantiate_expr(e: ex.Expr, env: dict, spec: ControlProblemSpec, pool: InstancePool) -> ex.Expr:
    schema = spec.schema
    if e.op == ex.CONST:
        return e
    if e.op == ex.VAR:
        if e.index is not None:
            return e
        if e.name in spec.family_names():
            fam = spec.family(e.name)
            span = schema.element(fam.span)
            entity = span.member_entity_type
            if entity not in env:
                raise MissingInstance(f"variable {e.name!r} used outside a sum over {fam.span}")
            return ex.var(fam.element, env[entity])
        # bare parameter: indexed by its holder entity
        holder = _holder_entity_type(schema, e.name)
        if holder is None or holder not in env:
            raise MissingInstance(f"parameter {e.name!r} has no bound index here")
        return ex.var(e.name, env[holder])
    if e.op == ex.SUM_OVER:
        elem = schema.element(e.over)
        if elem.scope == Scope.GLOBAL:
            members = pool.global_instances[e.over].members if e.over in pool.global_instances \
                else tuple(range(pool.config.n_global))
        else:
            owner_entity = elem.owner.entity_type
            if owner_entity not in env:
                raise MissingInstance(f"sum over {e.over!r} outside a {owner_entity.value} scope")
            members = _local_members(pool, schema, e.over, env[owner_entity])
        body = e.args[0]
        bound = elem.member_entity_type
        terms = []
        for m in members:
            inner = dict(env)
            inner[bound] = m
            terms.append(_instantiate_expr(body, inner, spec, pool))
        return ex.add(*terms)
    rebuilt = tuple(_instantiate_expr(a, env, spec, pool) for a in e.args)
    if e.op == ex.ADD:
        return ex.add(*rebuilt)
    if e.op == ex.MUL:
        return ex.mul(*rebuilt)
    if e.op == ex.LOG:
        return ex.log(rebuilt[0])
    return ex.sqrt(rebuilt[0])


def _holder_entity_type(schema, param: str):
    for edge in schema.edges:
        if edge.dst == param and edge.relation.value == "has_attribute":
            holder = schema.element(edge.src)
            if holder.entity_type != EntityType.PARAMETER:
                return holder.entity_type
    return None


def instantiate_problem(spec: ControlProblemSpec, pool: InstancePool) -> ProblemInstance:
    """Expand every set reference to explicit finite sums over the pool."""
    schema = spec.schema

    # split box constraints out; they tighten bounds instead of adding duals.
    # a rule spanning every entity of its element folds into the family
    # bounds directly; a subset rule stays as an install-time override.
    families = {f.name: f for f in spec.variables}
    bound_rules, coupled = [], []
    for cons in spec.constraints:
        box = _is_box(spec, cons)
        if box is not None:
            fam, lo, hi = box
            span = schema.element(fam.span)
            if span.scope == Scope.GLOBAL:
                cur = families[fam.name]
                new_lo, new_hi = max(cur.bounds[0], lo), min(cur.bounds[1], hi)
                if new_lo > new_hi:
                    raise ValidationError(f"bounds for {fam.name!r} are empty after folding")
                families[fam.name] = replace(cur, bounds=(new_lo, new_hi))
            else:
                bound_rules.append(BoundRule(element=fam.element, span=fam.span,
                                             owner_index=fam.owner_index, lo=lo, hi=hi))
        else:
            coupled.append(cons)
    spec = replace(spec, variables=list(families.values()), schema=spec.schema)

    utility = spec.utility
    sense_flipped = spec.sense == "minimize"
    if sense_flipped:
        utility = ex.neg(utility)
    inst_utility = ex.expand(_instantiate_expr(utility, {}, spec, pool))

    constraints, global_idx = [], 0
    for fam_idx, cons in enumerate(coupled):
        if cons.rel == "eq":
            raise UnsupportedConstraintSense("equality constraints are not dualized")
        if cons.strict:
            log.info("strict inequality treated as non-strict for dualization")
        lhs, rhs = cons.lhs, cons.rhs
        if cons.rel == "ge":  # normalize to aggregate <= limit
            lhs, rhs = ex.neg(lhs), ex.neg(rhs)
        forall_elem = schema.element(cons.forall)
        if not isinstance(forall_elem, VirtualElement):
            raise MissingInstance(f"constraint quantifies over non-set element {cons.forall!r}")
        if forall_elem.scope == Scope.GLOBAL:
            owners = range(pool.config.n_global)
            bind = forall_elem.member_entity_type
        else:
            raise UnsupportedConstraintSense("constraints quantified over local sets are not supported")
        for owner in owners:
            env = {bind: owner}
            g = ex.expand(_instantiate_expr(lhs, env, spec, pool))
            c = ex.expand(_instantiate_expr(rhs, env, spec, pool))
            coeff = DualCoefficient(constraint_index=global_idx, family=fam_idx, owner=owner)
            constraints.append(InstConstraint(coeff=coeff, g=g, c=c))
            global_idx += 1

    decision_elements = {f.element: f.layer for f in spec.variables}
    bounds = _effective_bounds(spec, pool, bound_rules)
    return ProblemInstance(
        spec=spec, pool=pool, utility=inst_utility, constraints=constraints,
        bound_rules=bound_rules, decision_elements=decision_elements,
        bounds=bounds, variables=list(spec.variables), sense_flipped=sense_flipped,
    )


def _family_indices(spec: ControlProblemSpec, pool: InstancePool, fam: VariableFamily):
    span = spec.schema.element(fam.span)
    if span.scope == Scope.GLOBAL:
        return tuple(range(pool.config.n_global))
    return _local_members(pool, spec.schema, fam.span, fam.owner_index)


def _effective_bounds(spec, pool, bound_rules) -> dict:
    out = {}
    for fam in spec.variables:
        for idx in _family_indices(spec, pool, fam):
            key = (fam.element, idx)
            lo, hi = fam.bounds
            if key in out:
                lo, hi = max(lo, out[key][0]), min(hi, out[key][1])
            out[key] = (lo, hi)
    for rule in bound_rules:
        fam = next(f for f in spec.variables
                   if f.element == rule.element and f.span == rule.span
                   and f.owner_index == rule.owner_index)
        for idx in _family_indices(spec, pool, fam):
            key = (rule.element, idx)
            lo, hi = out[key]
            lo, hi = max(lo, rule.lo), min(hi, rule.hi)
            if lo > hi:
                raise ValidationError(f"bounds for {rule.element}[{idx}] are empty after folding")
            out[key] = (lo, hi)
    return out


# -- dual construction and the expression tree ---------------------------------

def build_dual(instance: ProblemInstance) -> ex.Expr:
    """Absorb constraints: utility plus sum of coeff * (limit - aggregate)."""
    terms = [instance.utility]
    for cons in instance.constraints:
        lam = ex.var(cons.coeff.var_name, cons.coeff.owner)
        terms.append(ex.mul(lam, ex.sub(cons.c, cons.g)))
    return ex.expand(ex.add(*terms))


def build_tree(dual: ex.Expr) -> ExprTree:
    """Three-level view: root, addends, and each addend's factors."""
    children = ex.addends(dual)
    for child in children:
        if any(n.op == ex.ADD for n in ex.walk(child)):
            raise NotNormalized(f"addend contains a nested sum: {ex.render(child)}")
    fs = tuple(ex.factors(c) for c in children)
    tree = ExprTree(root=dual, children=children, factors=fs)
    tree.validate()
    return tree


# -- cross-layer and per-entity splits -----------------------------------------

def _classify_child(child: ex.Expr, instance: ProblemInstance):
    """Returns (layers, direct_vars, has_dual) for one level-1 addend."""
    schema = instance.spec.schema
    layers, direct, has_dual = set(), [], False
    for v in ex.var_refs(child):
        if v.name.startswith("lbd"):
            has_dual = True
            continue
        if v.name in instance.decision_elements:
            layers.add(instance.decision_elements[v.name])
            direct.append(v)
            continue
        if schema.has_element(v.name):
            closure = schema.function_closure(v.name)
            hit = closure & set(instance.decision_elements)
            for el in hit:
                layers.add(instance.decision_elements[el])
    return layers, direct, has_dual


def decompose_cross_layer(tree: ExprTree, instance: ProblemInstance):
    """Partition level-1 addends into per-layer groups plus the
    coefficient-update group (terms with no decision variable)."""
    groups: dict = {}
    dual_terms = []
    for child in tree.children:
        layers, direct, has_dual = _classify_child(child, instance)
        if len(layers) > 1:
            raise UnattributableTerm(
                f"term {ex.render(child)} mixes layers {sorted(l.value for l in layers)}")
        if not layers:
            dual_terms.append(child)
            continue
        groups.setdefault(layers.pop(), []).append(child)

    layer_subs = []
    for layer in sorted(groups, key=lambda l: l.value):
        children = groups[layer]
        refs = _dual_refs(ex.add(*children))
        variables = tuple(sorted({(v.name, None) for c in children
                                  for v in ex.var_refs(c)
                                  if v.name in instance.decision_elements}))
        layer_subs.append(Subproblem(layer=layer, entity=None,
                                     expression=ex.add(*children),
                                     variables=variables, param_refs=refs))
    dual_sub = None
    if dual_terms:
        dual_sub = Subproblem(layer=Layer.NONE, entity="shared",
                              expression=ex.add(*dual_terms), variables=(),
                              param_refs=_dual_refs(ex.add(*dual_terms)))
    return layer_subs, dual_sub


def _dual_refs(e: ex.Expr) -> tuple:
    refs = set()
    for v in ex.var_refs(e):
        if v.name.startswith("lbd"):
            family = 0 if v.name == "lbd" else int(v.name[3:])
            refs.add((family, v.index))
    return tuple(sorted(refs))


def decompose_per_entity(layer_sub: Subproblem, instance: ProblemInstance) -> list:
    """Split a layer group into per-entity subproblems.

    Terms whose decision dependence runs through a parameter model (the
    capacity of every link depends on every same-band power) stay in one
    shared subproblem; a term directly touching two entities is rejected.
    """
    schema = instance.spec.schema
    children = ex.addends(layer_sub.expression)
    per_entity: dict = {}
    shared = []
    for child in children:
        _, direct, _ = _classify_child(child, instance)
        idxs = {(v.name, v.index) for v in direct}
        if not direct:
            shared.append(child)  # coupled through a modeled parameter
            continue
        entities = {_entity_of(schema, name, idx) for name, idx in idxs}
        if len(entities) > 1:
            raise NonSeparable(f"term {ex.render(child)} couples entities {sorted(entities)}")
        per_entity.setdefault(entities.pop(), []).append(child)

    out = []
    if shared:
        # modeled coupling absorbs every term of this layer
        allchildren = shared + [c for group in per_entity.values() for c in group]
        expr = ex.add(*allchildren)
        variables = set()
        for c in allchildren:
            for v in ex.var_refs(c):
                if v.name in instance.decision_elements:
                    variables.add((v.name, v.index))
                elif schema.has_element(v.name):
                    for el in schema.function_closure(v.name) & set(instance.decision_elements):
                        for (name, idx) in instance.bounds:
                            if name == el:
                                variables.add((name, idx))
        out.append(Subproblem(layer=layer_sub.layer, entity="shared", expression=expr,
                              variables=tuple(sorted(variables)), param_refs=_dual_refs(expr)))
        return out
    for entity in sorted(per_entity):
        group = per_entity[entity]
        expr = ex.add(*group)
        variables = tuple(sorted({(v.name, v.index) for c in group
                                  for v in ex.var_refs(c)
                                  if v.name in instance.decision_elements}))
        out.append(Subproblem(layer=layer_sub.layer, entity=entity, expression=expr,
                              variables=variables, param_refs=_dual_refs(expr)))
    return out


def _entity_of(schema, element: str, index: int):
    holder = _holder_entity_type(schema, element)
    return (holder.value, index)


# -- lifting back to the abstract domain ---------------------------------------

def _find_instance_with_members(pool: InstancePool, member_entity, members: tuple, schema):
    """Locate (element, owner) whose instance equals the sorted member set."""
    matches = []
    for (element, owner), inst in pool.local_instances.items():
        if inst.sorted_members == members:
            matches.append((element, owner))
    for element, derived in pool._derived.items():
        for owner, mem in derived.items():
            if tuple(sorted(mem)) == members:
                matches.append((element, owner))
    return matches


def lift(entity_subs: list, instance: ProblemInstance) -> dict:
    """Replace per-entity coefficient index sets with virtual-element
    references, producing one template per role.

    For each per-session subproblem the coefficient owners must form
    exactly that session's member set in the inverse family of the
    constraint's aggregation element.
    """
    spec, pool = instance.spec, instance.pool
    schema = spec.schema
    templates: dict = {}
    session_templates = []

    # aggregation element of the (single) dualized family, and its inverse
    agg_elem = inv_elem = None
    for cons in spec.constraints:
        for n in ex.walk(cons.lhs):
            if n.op == ex.SUM_OVER:
                elem = schema.element(n.over)
                if isinstance(elem, VirtualElement) and elem.scope == Scope.LOCAL:
                    agg_elem = n.over
                    inv_elem = _INVERSES.get(n.over)
    derived = None
    if agg_elem and inv_elem:
        derived = pool.derived(inv_elem) or invert_membership(pool, agg_elem, inv_elem)

    for sub in entity_subs:
        if sub.entity == "shared":
            templates["node"] = _lift_shared(sub, instance)
            continue
        etype, idx = sub.entity
        owners = tuple(sorted(o for _, o in sub.param_refs))
        if owners:
            if derived is None:
                raise NoMatchingInstance("coefficient set present but no inverse family derived")
            expected = tuple(sorted(derived.get(idx, ())))
            if owners != expected:
                raise NoMatchingInstance(
                    f"{etype} {idx}: coefficient owners {owners} != pool instance {expected}")
            others = _find_instance_with_members(pool, None, owners, schema)
            peers = [m for m in others if m[0] == agg_elem]
            if len(peers) > 1:
                raise AmbiguousMatch(f"{owners} matches several {agg_elem} instances")
        template = _abstract_template(sub, instance, inv_elem)
        session_templates.append(template)

    if session_templates:
        first = session_templates[0].canonical()
        for t in session_templates[1:]:
            if t.canonical() != first:
                raise NoMatchingInstance("per-session subproblems lift to differing templates")
        templates["session"] = session_templates[0]
    return templates


def _strip_index(e: ex.Expr) -> ex.Expr:
    return ex.substitute(e, lambda v: ex.var(v.name))


def _abstract_template(sub: Subproblem, instance: ProblemInstance, inv_elem) -> RoleTemplate:
    """Per-session template: utility part plus coupling var times the
    summed coefficient vector."""
    plain, by_family = [], {}
    for child in ex.addends(sub.expression):
        lam_vars = [v for v in ex.var_refs(child) if v.name.startswith("lbd")]
        if not lam_vars:
            plain.append(_strip_index(child))
            continue
        lam = lam_vars[0]
        family = 0 if lam.name == "lbd" else int(lam.name[3:])
        rest = ex.mul(*[f for f in ex.factors(child) if f != lam])
        by_family.setdefault(family, []).append((_strip_index(rest), lam.name))

    terms = list(plain)
    for family in sorted(by_family):
        parts = by_family[family]
        keys = {ex.canonical_key(p) for p, _ in parts}
        if len(keys) != 1:
            raise NoMatchingInstance("coefficient terms differ in shape within one family")
        body, lam_name = parts[0]
        terms.append(ex.mul(body, ex.sum_over(inv_elem, ex.var(lam_name))))

    variables = _template_variables(sub, instance)
    return RoleTemplate(role="session", expression=ex.add(*terms),
                        variables=variables, dual_over=inv_elem if by_family else None)


def _lift_shared(sub: Subproblem, instance: ProblemInstance) -> RoleTemplate:
    """Node-facing template over the links the node transmits."""
    spec = instance.spec
    groups: dict = {}
    for child in ex.addends(sub.expression):
        key = ex.canonical_key(_strip_index(child))
        groups.setdefault(key, []).append(child)
    terms = []
    for key in sorted(groups):
        children = groups[key]
        sample = _strip_index(children[0])
        lam_vars = [v for v in ex.var_refs(sample) if v.name.startswith("lbd")]
        owners = sorted({v.index for c in children for v in ex.var_refs(c)
                         if v.index is not None})
        full = list(range(instance.pool.config.n_global))
        if owners != full:
            raise NoMatchingInstance(
                f"shared term covers owners {owners}, expected the full set")
        terms.append(ex.sum_over("lnknd", sample))
    variables = _template_variables(sub, instance)
    has_dual = bool(sub.param_refs)
    return RoleTemplate(role="node", expression=ex.add(*terms), variables=variables,
                        dual_over="lnknd" if has_dual else None)


def _template_variables(sub: Subproblem, instance: ProblemInstance) -> tuple:
    schema = instance.spec.schema
    elements = sorted({name for name, _ in sub.variables})
    out = []
    for el in elements:
        fams = [f for f in instance.variables if f.element == el]
        # subset-span families carry override bounds; the role template
        # keeps the generic range of the network-wide declaration
        wide = [f for f in fams if schema.element(f.span).scope == Scope.GLOBAL]
        fams = wide or fams
        lo = max(f.bounds[0] for f in fams)
        hi = min(f.bounds[1] for f in fams)
        out.append((el, (lo, hi)))
    return tuple(out)


# -- whole pipeline -------------------------------------------------------------

@dataclass
class CompileResult:
    spec: ControlProblemSpec
    pool: InstancePool
    instance: ProblemInstance
    dual: ex.Expr
    tree: ExprTree
    layer_subs: list
    dual_sub: Subproblem | None
    entity_subs: list
    program: AbstractProgram

    def dump(self) -> str:
        lines = ["== dual =="]
        lines.append(ex.render(self.dual))
        lines.append("== tree ==")
        lines.append(f"level0: {ex.render(self.tree.root)}")
        for i, child in enumerate(self.tree.children):
            fs = " | ".join(ex.render(f) for f in self.tree.factors[i])
            lines.append(f"level1[{i:02d}]: {ex.render(child)}   level2: {fs}")
        lines.append("== layers ==")
        for sub in self.layer_subs:
            lines.append(f"{sub.layer.value}: {ex.render(sub.expression)}")
        if self.dual_sub is not None:
            lines.append(f"coefficient-update: {ex.render(self.dual_sub.expression)}")
        lines.append("== subproblems ==")
        for sub in self.entity_subs:
            ent = "shared" if sub.entity == "shared" else f"{sub.entity[0]} {sub.entity[1]}"
            lines.append(f"{sub.layer.value} {ent}: maximize {ex.render(sub.expression)}")
        lines.append("== templates ==")
        lines.append(self.program.structural_dump().rstrip("\n"))
        return "\n".join(lines) + "\n"


def compile_spec(spec: ControlProblemSpec, pool: InstancePool | None = None,
                 seed: int = 0) -> CompileResult:
    pool = pool or default_pool(spec, seed=seed)
    instance = instantiate_problem(spec, pool)
    dual = build_dual(instance)
    tree = build_tree(dual)
    layer_subs, dual_sub = decompose_cross_layer(tree, instance)
    entity_subs = []
    for group in layer_subs:
        entity_subs.extend(decompose_per_entity(group, instance))
    templates = lift(entity_subs, instance)
    rules = _dual_rule_specs(spec, instance)
    program = AbstractProgram(
        sense=spec.sense, utility=spec.utility, templates=templates,
        dual_rules=rules, bound_rules=instance.bound_rules,
        settings=dict(spec.settings), variables=list(instance.variables),
    )
    return CompileResult(spec=spec, pool=pool, instance=instance, dual=dual,
                         tree=tree, layer_subs=layer_subs, dual_sub=dual_sub,
                         entity_subs=entity_subs, program=program)


def compile_program(text: str, pool: InstancePool | None = None, seed: int = 0) -> CompileResult:
    return compile_spec(parse_program(text), pool=pool, seed=seed)


def _dual_rule_specs(spec: ControlProblemSpec, instance: ProblemInstance) -> list:
    rules = []
    seen = set()
    for cons in instance.constraints:
        if cons.coeff.family in seen:
            continue
        seen.add(cons.coeff.family)
        orig = [c for c in spec.constraints if _is_box(spec, c) is None][cons.coeff.family]
        lhs, rhs = orig.lhs, orig.rhs
        if orig.rel == "ge":
            lhs, rhs = ex.neg(lhs), ex.neg(rhs)
        rules.append(DualRuleSpec(family=cons.coeff.family, forall=orig.forall,
                                  g=lhs, c=rhs))
    return rules
