import pytest

import wnoskit.expr as ex
from wnoskit.decomposer import (
    ProblemInstance,
    Subproblem,
    build_dual,
    build_tree,
    compile_spec,
    decompose_cross_layer,
    decompose_per_entity,
    instantiate_problem,
    lift,
)
from wnoskit.dsl import parse_program
from wnoskit.errors import (
    MissingInstance,
    NonSeparable,
    NotNormalized,
    UnsupportedConstraintSense,
)
from wnoskit.instantiation import DIConfig, pool_from_members
from wnoskit.resources import program_text
from wnoskit.schema import Layer

from conftest import SESSION4_LINKS, SESSIONS_OF_LINK_REFERENCE


def lam(i):
    return ex.var("lbd", i)


def rate(i):
    return ex.var("sesrate", i)


def cap(i):
    return ex.var("lnkcap", i)


class TestInstantiateProblem:
    def test_toy_constraints_match_pool(self, toy_spec, toy_pool):
        inst = instantiate_problem(toy_spec, toy_pool)
        assert len(inst.constraints) == 3
        g0 = inst.constraints[0].g
        assert ex.canonically_equal(g0, ex.add(rate(0), rate(1)))
        assert ex.canonically_equal(inst.constraints[1].g, ex.add(rate(0), rate(2)))
        assert ex.canonically_equal(inst.constraints[2].g, ex.add(rate(1), rate(2)))
        assert ex.canonically_equal(inst.utility, ex.add(rate(0), rate(1), rate(2)))

    def test_jocp_has_one_constraint_per_link(self, jocp_spec, reference_pool):
        inst = instantiate_problem(jocp_spec, reference_pool)
        assert len(inst.constraints) == 20
        owners = [c.coeff.owner for c in inst.constraints]
        assert owners == list(range(20))

    def test_unconstrained_spec(self):
        text = (
            "nt.make_var('wos_x', [ntses, sesrate], [all, None])\n"
            "expr = mkexpr('sum(log(wos_x))', 'wos_x')\n"
            "nt.objective(max, expr)\n"
        )
        res = compile_spec(parse_program(text), seed=0)
        assert res.instance.constraints == []
        assert ex.canonically_equal(res.dual, res.instance.utility)

    def test_missing_instance(self, toy_spec):
        empty = pool_from_members(DIConfig(3, 2, 0), {})
        with pytest.raises(MissingInstance):
            instantiate_problem(toy_spec, empty)

    def test_equality_constraint_rejected(self):
        text = (
            "nt.make_var('wos_x', [ntses, sesrate], [all, None])\n"
            "nt.add_cstr('sum(wos_x, lkses) == lkcap', 'wos_x')\n"
            "expr = mkexpr('sum(log(wos_x))', 'wos_x')\n"
            "nt.objective(max, expr)\n"
        )
        with pytest.raises(UnsupportedConstraintSense):
            compile_spec(parse_program(text), seed=0)


class TestBuildDual:
    def test_toy_dual_matches_direct_substitution(self, toy_spec, toy_pool):
        inst = instantiate_problem(toy_spec, toy_pool)
        dual = build_dual(inst)
        direct = ex.add(
            rate(0), rate(1), rate(2),
            ex.mul(lam(0), ex.add(cap(0), ex.neg(rate(0)), ex.neg(rate(1)))),
            ex.mul(lam(1), ex.add(cap(1), ex.neg(rate(0)), ex.neg(rate(2)))),
            ex.mul(lam(2), ex.add(cap(2), ex.neg(rate(1)), ex.neg(rate(2)))),
        )
        assert ex.canonically_equal(dual, direct)

    def test_jocp_dual_symbols(self, jocp_spec, reference_pool):
        inst = instantiate_problem(jocp_spec, reference_pool)
        syms = sorted({c.coeff.symbol for c in inst.constraints})
        assert syms[0] == "lbd_00" and syms[-1] == "lbd_19" and len(syms) == 20

    def test_unconstrained_dual_is_primal(self):
        text = (
            "nt.make_var('wos_x', [ntses, sesrate], [all, None])\n"
            "expr = mkexpr('sum(log(wos_x))', 'wos_x')\n"
            "nt.objective(max, expr)\n"
        )
        res = compile_spec(parse_program(text), seed=1)
        assert all(not v.name.startswith("lbd") for v in ex.var_refs(res.dual))


class TestBuildTree:
    def test_toy_children_reassemble(self, toy_spec, toy_pool):
        inst = instantiate_problem(toy_spec, toy_pool)
        tree = build_tree(build_dual(inst))
        tree.validate()
        # 3 utility terms + per link: one capacity and two rate couplings
        assert len(tree.children) == 12
        expected = [
            rate(0), rate(1), rate(2),
            ex.mul(lam(0), cap(0)), ex.mul(lam(1), cap(1)), ex.mul(lam(2), cap(2)),
            ex.neg(ex.mul(lam(0), rate(0))), ex.neg(ex.mul(lam(0), rate(1))),
            ex.neg(ex.mul(lam(1), rate(0))), ex.neg(ex.mul(lam(1), rate(2))),
            ex.neg(ex.mul(lam(2), rate(1))), ex.neg(ex.mul(lam(2), rate(2))),
        ]
        assert ex.canonically_equal(ex.add(*tree.children), ex.add(*expected))

    def test_single_term_dual(self):
        tree = build_tree(rate(0))
        assert tree.children == (rate(0),)

    def test_not_normalized_rejected(self):
        nested = ex.Expr(ex.MUL, args=(lam(0), ex.add(rate(0), rate(1))))
        bad = ex.Expr(ex.ADD, args=(rate(2), nested))
        with pytest.raises(NotNormalized):
            build_tree(bad)

    def test_level1_products_of_dual_and_primal(self, jocp_spec, reference_pool):
        inst = instantiate_problem(jocp_spec, reference_pool)
        tree = build_tree(build_dual(inst))
        for child, fs in zip(tree.children, tree.factors):
            lams = [f for f in fs if f.op == ex.VAR and f.name.startswith("lbd")]
            assert len(lams) <= 1


class TestCrossLayer:
    def test_toy_layer_groups(self, toy_spec, toy_pool):
        inst = instantiate_problem(toy_spec, toy_pool)
        tree = build_tree(build_dual(inst))
        groups, dual_sub = decompose_cross_layer(tree, inst)
        by_layer = {g.layer: g for g in groups}
        assert set(by_layer) == {Layer.TRANSPORT, Layer.PHYSICAL}
        assert dual_sub is None
        physical = by_layer[Layer.PHYSICAL].expression
        assert ex.canonically_equal(
            physical,
            ex.add(ex.mul(lam(0), cap(0)), ex.mul(lam(1), cap(1)), ex.mul(lam(2), cap(2))))
        # groups plus the coefficient terms reassemble the root
        whole = ex.add(*[g.expression for g in groups])
        assert ex.canonically_equal(whole, tree.root)

    def test_rate_only_spec_has_no_physical_group(self):
        res = compile_spec(parse_program(program_text("rate_only")), seed=0)
        layers = {g.layer for g in res.layer_subs}
        assert layers == {Layer.TRANSPORT}
        assert res.dual_sub is not None  # capacity terms become measured parameters
        reassembled = ex.add(*[g.expression for g in res.layer_subs], res.dual_sub.expression)
        assert ex.canonically_equal(reassembled, res.tree.root)


class TestPerEntity:
    def test_toy_transport_split(self, toy_spec, toy_pool):
        inst = instantiate_problem(toy_spec, toy_pool)
        tree = build_tree(build_dual(inst))
        groups, _ = decompose_cross_layer(tree, inst)
        transport = next(g for g in groups if g.layer == Layer.TRANSPORT)
        subs = decompose_per_entity(transport, inst)
        assert [s.entity for s in subs] == [("session", 0), ("session", 1), ("session", 2)]
        expected = {
            0: ex.add(rate(0), ex.neg(ex.mul(lam(0), rate(0))), ex.neg(ex.mul(lam(1), rate(0)))),
            1: ex.add(rate(1), ex.neg(ex.mul(lam(0), rate(1))), ex.neg(ex.mul(lam(2), rate(1)))),
            2: ex.add(rate(2), ex.neg(ex.mul(lam(1), rate(2))), ex.neg(ex.mul(lam(2), rate(2)))),
        }
        for sub in subs:
            assert ex.canonically_equal(sub.expression, expected[sub.entity[1]])

    def test_physical_stays_shared(self, toy_spec, toy_pool):
        inst = instantiate_problem(toy_spec, toy_pool)
        tree = build_tree(build_dual(inst))
        groups, _ = decompose_cross_layer(tree, inst)
        physical = next(g for g in groups if g.layer == Layer.PHYSICAL)
        subs = decompose_per_entity(physical, inst)
        assert len(subs) == 1 and subs[0].entity == "shared"
        assert ("lnkpwr", 0) in subs[0].variables

    def test_single_session_identity(self):
        text = (
            "nt.set('n_global', 1)\n"
            "nt.set('n_local', 1)\n"
            "nt.make_var('wos_x', [ntses, sesrate], [all, None])\n"
            "nt.add_cstr('sum(wos_x, lkses) < lkcap', 'wos_x')\n"
            "expr = mkexpr('sum(log(wos_x))', 'wos_x')\n"
            "nt.objective(max, expr)\n"
        )
        res = compile_spec(parse_program(text), seed=0)
        transport = [s for s in res.entity_subs if s.layer == Layer.TRANSPORT]
        assert len(transport) == 1

    def test_direct_coupling_rejected(self, toy_spec, toy_pool):
        inst = instantiate_problem(toy_spec, toy_pool)
        coupled = ex.mul(rate(0), rate(1))
        group = Subproblem(layer=Layer.TRANSPORT, entity=None, expression=coupled,
                           variables=(("sesrate", None),), param_refs=())
        with pytest.raises(NonSeparable):
            decompose_per_entity(group, inst)


class TestLift:
    def test_toy_links_of_session(self, toy_spec, toy_pool):
        res = compile_spec(toy_spec, pool=toy_pool)
        session0 = next(s for s in res.entity_subs if s.entity == ("session", 0))
        assert sorted(o for _, o in session0.param_refs) == [0, 1]
        t = res.program.templates["session"]
        assert t.dual_over == "seslnk"
        expected = ex.add(ex.var("sesrate"),
                          ex.neg(ex.mul(ex.var("sesrate"), ex.sum_over("seslnk", ex.var("lbd")))))
        assert ex.canonically_equal(t.expression, expected)

    def test_reference_pool_session4(self, jocp_spec, reference_pool):
        res = compile_spec(jocp_spec, pool=reference_pool)
        s4 = next(s for s in res.entity_subs if s.entity == ("session", 4))
        assert tuple(sorted(o for _, o in s4.param_refs)) == SESSION4_LINKS
        t = res.program.templates["session"]
        expected = ex.add(ex.log(ex.var("sesrate")),
                          ex.neg(ex.mul(ex.var("sesrate"), ex.sum_over("seslnk", ex.var("lbd")))))
        assert ex.canonically_equal(t.expression, expected)

    def test_templates_do_not_depend_on_pool(self, jocp_spec):
        dumps = {compile_spec(jocp_spec, seed=s).program.structural_dump() for s in range(6)}
        assert len(dumps) == 1

    def test_lift_soundness_random_seeds(self, jocp_spec):
        for seed in range(25):
            res = compile_spec(jocp_spec, seed=seed)
            derived = res.pool.derived("seslnk")
            for sub in res.entity_subs:
                if sub.entity == "shared" or sub.layer != Layer.TRANSPORT:
                    continue
                _, idx = sub.entity
                assert tuple(sorted(o for _, o in sub.param_refs)) == derived.get(idx, ())

    def test_empty_param_set_template(self):
        text = (
            "nt.make_var('wos_x', [ntses, sesrate], [all, None])\n"
            "expr = mkexpr('sum(log(wos_x))', 'wos_x')\n"
            "nt.objective(max, expr)\n"
        )
        res = compile_spec(parse_program(text), seed=0)
        t = res.program.templates["session"]
        assert t.dual_over is None
        assert ex.canonically_equal(t.expression, ex.log(ex.var("sesrate")))


class TestReassembly:
    @pytest.mark.parametrize("name", ["toy_sum_rate", "cp1_sumlog", "cp2_sumrate",
                                      "cp3_powercap", "power_min", "rate_only"])
    def test_subproblems_reassemble_to_dual(self, name):
        res = compile_spec(parse_program(program_text(name)), seed=5)
        parts = [s.expression for s in res.entity_subs]
        if res.dual_sub is not None:
            parts.append(res.dual_sub.expression)
        assert ex.canonically_equal(ex.add(*parts), res.dual)


class TestBoundFolding:
    def test_power_cap_becomes_bound_rule(self):
        res = compile_spec(parse_program(program_text("cp3_powercap")), seed=0)
        rules = res.program.bound_rules
        assert len(rules) == 1
        rule = rules[0]
        assert rule.element == "lnkpwr" and rule.span == "seslnk" and rule.owner_index == 1
        assert rule.hi == 5.0
        # only the capacity family is dualized
        assert res.instance.dual_family_count() == 1

    def test_rate_floor_folds_into_family(self):
        res = compile_spec(parse_program(program_text("power_min")), seed=0)
        fam = next(f for f in res.program.variables if f.name == "wos_x")
        assert fam.bounds[0] == 1.0
        assert res.program.bound_rules == []

    def test_effective_bounds_tightened(self):
        res = compile_spec(parse_program(program_text("cp3_powercap")), seed=0)
        capped = res.pool.derived("seslnk")[1]
        for l in capped:
            assert res.instance.bounds[("lnkpwr", l)][1] == 5.0
        free = set(range(20)) - set(capped)
        for l in free:
            assert res.instance.bounds[("lnkpwr", l)][1] == 30.0


class TestCompileDump:
    def test_dump_is_deterministic(self, jocp_spec, reference_pool):
        a = compile_spec(jocp_spec, pool=reference_pool).dump()
        b = compile_spec(jocp_spec, pool=reference_pool).dump()
        assert a == b
        assert "== dual ==" in a and "== templates ==" in a

    def test_dump_contains_lifted_shape(self, jocp_spec, reference_pool):
        dump = compile_spec(jocp_spec, pool=reference_pool).dump()
        assert "sesrate - sesrate*sum(lbd over seslnk)" in dump.replace("log(sesrate)", "sesrate")
