import pytest

import wnoskit.expr as ex
from wnoskit.dsl import compare, format_program, parse_program
from wnoskit.errors import ArityMismatch, ParseError, SchemaMismatch, UnknownElement, ValidationError
from wnoskit.resources import list_programs, program_text
from wnoskit.schema import Layer, Relation, Scope, VirtualElement, build_default_schema, read


@pytest.fixture(scope="module")
def schema():
    return build_default_schema()


class TestDefaultSchema:
    def test_link_has_capacity_attribute(self, schema):
        assert schema.has_edge("lnk", "lnkcap", Relation.HAS_ATTRIBUTE)

    def test_links_of_session_members_are_links(self, schema):
        assert schema.has_edge("seslnk", "lnk", Relation.EACH_MEMBER_IS)

    def test_node_neighborhood_is_a_multigraph(self, schema):
        # two directed edges between the node element and its neighbor set
        forward = schema.edges_between("nd", "nbrnd")
        backward = schema.edges_between("nbrnd", "nd")
        assert len(forward) == 1 and forward[0].relation == Relation.HAS_ATTRIBUTE
        assert len(backward) == 1 and backward[0].relation == Relation.EACH_MEMBER_IS

    def test_documented_edges_present(self, schema):
        expected = [
            ("lnk", "lnkpwr", Relation.HAS_ATTRIBUTE),
            ("nd", "lnk", Relation.HAS_ATTRIBUTE),
            ("nd", "maxpwr", Relation.HAS_ATTRIBUTE),
            ("nd", "lnknd", Relation.HAS_ATTRIBUTE),
            ("lnkses", "ses", Relation.EACH_MEMBER_IS),
            ("lnknd", "lnk", Relation.EACH_MEMBER_IS),
            ("lnksinr", "lnkpwr", Relation.IS_FUNCTION_OF),
        ]
        for src, dst, rel in expected:
            assert schema.has_edge(src, dst, rel), (src, dst, rel)

    def test_deterministic(self):
        a, b = build_default_schema(), build_default_schema()
        assert a.elements == b.elements and a.edges == b.edges

    def test_parameter_layers(self, schema):
        assert schema.ref("sesrate").layer == Layer.TRANSPORT
        assert schema.ref("lnkpwr").layer == Layer.PHYSICAL

    def test_capacity_depends_on_power(self, schema):
        assert "lnkpwr" in schema.function_closure("lnkcap")


class TestRead:
    def test_session_link_set(self, schema):
        elem = read(schema, "netses.seslnk")
        assert isinstance(elem, VirtualElement)
        assert elem.scope == Scope.LOCAL
        assert elem.owner.id == "ses"

    def test_identity_lookup(self, schema):
        elem = read(schema, "netlnk")
        assert isinstance(elem, VirtualElement) and elem.scope == Scope.GLOBAL

    def test_unknown_hop(self, schema):
        with pytest.raises(UnknownElement):
            read(schema, "netnd.bogus")

    def test_pure(self, schema):
        assert read(schema, "netses.seslnk.lnkpwr") is read(schema, "netses.seslnk.lnkpwr")

    def test_alias_hops(self, schema):
        assert read(schema, "ntses.seslnk.lkpwr").id == "lnkpwr"


class TestCompose:
    def test_sum_power_over_node_links(self):
        e = ex.compose("sum_over", ["lnknd", ex.var("lnkpwr")])
        assert e.op == ex.SUM_OVER and e.over == "lnknd"

    def test_log_rate(self):
        e = ex.compose("log", [ex.var("sesrate")])
        assert e.op == ex.LOG

    def test_additive_identity_dropped(self):
        e = ex.var("sesrate")
        assert ex.compose("add", [ex.const(0), e]) == e

    def test_multiplicative_identity_dropped(self):
        e = ex.var("sesrate")
        assert ex.mul(ex.const(1.0), e) == e

    def test_nested_sums_flatten(self):
        a, b, c = ex.var("a"), ex.var("b"), ex.var("c")
        assert ex.add(ex.add(a, b), c) == ex.add(a, b, c)

    def test_arity_mismatch(self):
        with pytest.raises(ArityMismatch):
            ex.compose("log", [ex.var("a"), ex.var("b")])
        with pytest.raises(ArityMismatch):
            ex.compose("add", [])

    def test_canonical_equality_commutes(self):
        a, b = ex.var("a"), ex.var("b")
        assert ex.canonically_equal(ex.add(a, b), ex.add(b, a))
        assert ex.canonically_equal(ex.mul(a, b), ex.mul(b, a))

    def test_expand_distributes(self):
        a, b, lam = ex.var("a"), ex.var("b"), ex.var("lbd", 0)
        prod = ex.mul(lam, ex.add(a, ex.neg(b)))
        assert ex.canonically_equal(prod, ex.add(ex.mul(lam, a), ex.neg(ex.mul(lam, b))))


class TestCompare:
    def test_power_cap(self, schema):
        c = compare(ex.var("lnkpwr"), "le", ex.const(5), schema=schema)
        assert c.rel == "le"

    def test_capacity_constraint(self, schema):
        lhs = ex.sum_over("lnkses", ex.var("sesrate"))
        c = compare(lhs, "le", ex.var("lnkcap"), schema=schema)
        assert c.rhs.name == "lnkcap"

    def test_reflexive_warns(self, schema):
        e = ex.var("lnkpwr")
        with pytest.warns(UserWarning):
            compare(e, "le", e, schema=schema)

    def test_schema_mismatch(self, schema):
        with pytest.raises(SchemaMismatch):
            compare(ex.var("nonsense"), "le", ex.const(1), schema=schema)


class TestParseProgram:
    def test_sumlog_utility(self, jocp_spec):
        expected = ex.sum_over("netses", ex.log(ex.var("wos_x")))
        assert ex.canonically_equal(jocp_spec.utility, expected)
        assert jocp_spec.sense == "maximize"

    def test_power_cap_program(self):
        spec = parse_program(program_text("cp3_powercap"))
        fam = spec.family("wos_z")
        assert fam.element == "lnkpwr" and fam.span == "seslnk" and fam.owner_index == 1
        caps = [c for c in spec.constraints if c.rhs == ex.const(5)]
        assert len(caps) == 1 and caps[0].rel == "le" and caps[0].strict

    def test_power_min_program(self):
        spec = parse_program(program_text("power_min"))
        assert spec.sense == "minimize"
        assert ex.canonically_equal(spec.utility, ex.sum_over("netlnk", ex.var("wos_p")))

    def test_identical_text_identical_spec(self):
        text = program_text("cp1_sumlog")
        assert parse_program(text) == parse_program(text)

    def test_syntax_error_carries_position(self):
        with pytest.raises(ParseError) as err:
            parse_program("nt.make_var('x', [ntses sesrate], [all, None])")
        assert err.value.line == 1

    def test_unknown_identifier_rejected(self):
        bad = "nt.make_var('wos_x', [ntses, bogus], [all, None])\n"
        with pytest.raises(ParseError):
            parse_program(bad)

    def test_unused_variable_rejected(self):
        text = (
            "nt.make_var('wos_x', [ntses, sesrate], [all, None])\n"
            "nt.make_var('wos_q', [ntnd, maxpwr], [all, None])\n"
            "expr = mkexpr('sum(wos_x)', 'wos_x')\n"
            "nt.objective(max, expr)\n"
        )
        with pytest.raises(ValidationError):
            parse_program(text)

    def test_missing_objective_rejected(self):
        with pytest.raises(ValidationError):
            parse_program("nt.make_var('wos_x', [ntses, sesrate], [all, None])\n")

    def test_settings_pass_through(self):
        text = (
            "nt.set('routing', 'single_path')\n"
            "nt.set('timescale_ratio', 30)\n"
            "nt.make_var('wos_x', [ntses, sesrate], [all, None])\n"
            "expr = mkexpr('sum(wos_x)', 'wos_x')\n"
            "nt.objective(max, expr)\n"
        )
        spec = parse_program(text)
        assert spec.settings["routing"] == "single_path"
        assert spec.settings["timescale_ratio"] == 30

    def test_linear_utility_requires_finite_bounds(self):
        text = (
            "nt.make_var('wos_x', [ntses, sesrate], [all, None])\n"
            "nt.set('bounds.wos_x', [0.0, inf])\n"
            "expr = mkexpr('sum(wos_x)', 'wos_x')\n"
            "nt.objective(max, expr)\n"
        )
        with pytest.raises((ParseError, ValidationError)):
            parse_program(text)


class TestRoundTrip:
    @pytest.mark.parametrize("name", [p[:-5] for p in list_programs()])
    def test_print_then_reparse(self, name):
        spec = parse_program(program_text(name))
        assert parse_program(format_program(spec)) == spec
