"""Command-line entry point.

    wnoskit compile <program> [--plans] [--seed N] [--out DIR]
    wnoskit inspect <program> [--seed N]
    wnoskit run --program F --scenario F --scheme S [--scheme S ...]
                [--seed N] [--out DIR] [--plot]
    wnoskit compare --program F --scenario F --scheme S --scheme S ...
                [--seed N] [--out DIR]

Exit codes: 2 program parse error, 3 decomposition error, 4 scheme or
scenario incompatibility. The seed falls back to $WNOS_KIT_SEED, then
to the scenario's own seed.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from pathlib import Path

from . import algogen, netsim, plotting
from . import expr as ex
from .decomposer import compile_program
from .errors import (
    FormatError,
    IncompatibleProgram,
    ParseError,
    TopologyError,
    ValidationError,
    WnosError,
)
from .instantiation import invert_membership
from .scenario import load_scenario

EXIT_PARSE = 2
EXIT_DECOMPOSE = 3
EXIT_INCOMPATIBLE = 4


def _read_program(path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ParseError(f"cannot read program file {path}: {e}")


def _seed(args, scenario=None) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("WNOS_KIT_SEED")
    if env is not None:
        return int(env)
    if scenario is not None:
        return scenario.seed
    return 0


def _compile(args):
    text = _read_program(args.program)
    return compile_program(text, seed=_seed(args))


def cmd_compile(args) -> int:
    result = _compile(args)
    out = Path(args.out or (Path(args.program).stem + ".out"))
    out.mkdir(parents=True, exist_ok=True)
    (out / "dual.txt").write_text(ex.render(result.dual) + "\n", encoding="utf-8")
    tree_lines = [f"level0: {ex.render(result.tree.root)}"]
    for i, child in enumerate(result.tree.children):
        fs = " | ".join(ex.render(f) for f in result.tree.factors[i])
        tree_lines.append(f"level1[{i:02d}]: {ex.render(child)}   level2: {fs}")
    (out / "tree.txt").write_text("\n".join(tree_lines) + "\n", encoding="utf-8")
    sub_lines = []
    for sub in result.entity_subs:
        ent = "shared" if sub.entity == "shared" else f"{sub.entity[0]} {sub.entity[1]}"
        sub_lines.append(f"{sub.layer.value} {ent}: maximize {ex.render(sub.expression)}")
    if result.dual_sub is not None:
        sub_lines.append(f"coefficient-update: {ex.render(result.dual_sub.expression)}")
    (out / "subproblems.txt").write_text("\n".join(sub_lines) + "\n", encoding="utf-8")
    (out / "templates.txt").write_text(result.program.structural_dump(), encoding="utf-8")
    if args.plans:
        plan_lines = []
        for role in sorted(result.program.templates):
            t = result.program.templates[role]
            plan = algogen.synthesize_plan(t, result.program.settings)
            step = plan.step.kind + f":{plan.step.alpha:g}"
            plan_lines.append(
                f"entity={role} method={plan.method} step={step} "
                f"bounds={plan.bounds[0]:g},{plan.bounds[1]:g}")
        (out / "plans.txt").write_text("\n".join(plan_lines) + "\n", encoding="utf-8")
    print(f"compiled {args.program} -> {out}/")
    return 0


def cmd_inspect(args) -> int:
    result = _compile(args)
    pool, spec = result.pool, result.spec
    cfg = pool.config
    print(f"program: {args.program}")
    print(f"objective: {spec.sense} {ex.render(spec.utility)}")
    print(f"instantiation: n_global={cfg.n_global} n_local={cfg.n_local} "
          f"capacity C({cfg.n_global},{cfg.n_local})={cfg.capacity}")
    print()
    print("element graph:")
    for edge in spec.schema.edges:
        print(f"  {edge.src} --{edge.relation.value}--> {edge.dst}")
    print()
    for element in sorted({el for el, _ in pool.local_instances}):
        print(f"instances of {element} (owner: sorted members):")
        for (el, owner), inst in sorted(pool.local_instances.items()):
            if el == element:
                print(f"  {owner:3d} | {', '.join(str(m) for m in inst.sorted_members)}")
        inv = {"lnkses": "seslnk", "seslnk": "lnkses"}.get(element)
        if inv:
            derived = pool.derived(inv) or invert_membership(pool, element, inv)
            print(f"derived {inv} (owner: sorted members):")
            for owner in sorted(derived):
                print(f"  {owner:3d} | {', '.join(str(m) for m in derived[owner])}")
    print()
    print("expression tree levels:")
    print(f"  level0: {ex.render(result.tree.root)}")
    for i, child in enumerate(result.tree.children):
        print(f"  level1[{i:02d}]: {ex.render(child)}")
    return 0


def _run_logs(args):
    scenario = load_scenario(args.scenario)
    result = compile_program(_read_program(args.program), seed=_seed(args, scenario))
    schemes = [netsim.canonical_scheme(s) for s in args.scheme]
    logs = netsim.run(scenario, result.program, schemes, seed=_seed(args, scenario))
    return scenario, result, logs


def cmd_run(args) -> int:
    scenario, _, logs = _run_logs(args)
    out = Path(args.out or "runs")
    out.mkdir(parents=True, exist_ok=True)
    for scheme, log in logs.items():
        csv_path = out / f"metrics_{scheme}.csv"
        tmp = csv_path.with_suffix(".csv.tmp")
        tmp.write_text(log.text(), encoding="utf-8")
        tmp.replace(csv_path)
        print(f"wrote {csv_path}")
        if args.plot:
            p1 = plotting.plot_throughput(log, out / f"throughput_{scheme}.png",
                                          slot_seconds=scenario.slot_seconds)
            p2 = plotting.plot_power(log, out / f"power_{scheme}.png",
                                     slot_seconds=scenario.slot_seconds)
            print(f"wrote {p1}")
            print(f"wrote {p2}")
    if args.plot and len(logs) > 1:
        p = plotting.plot_utility_comparison(logs, out / "utility_comparison.png",
                                             slot_seconds=scenario.slot_seconds)
        print(f"wrote {p}")
    return 0


def cmd_compare(args) -> int:
    if len(args.scheme) < 2:
        raise IncompatibleProgram("compare needs at least two schemes")
    schemes = [netsim.canonical_scheme(s) for s in args.scheme]
    if "NoControl" not in schemes:
        schemes.append("NoControl")  # the gain baseline
    args.scheme = schemes
    _, _, logs = _run_logs(args)
    base = logs["NoControl"].steady_utility()
    print("scheme\tmean_utility\tgain_pct_vs_nocontrol")
    for scheme in schemes:
        u = logs[scheme].steady_utility()
        if math.isfinite(base) and abs(base) > 1e-12:
            gain = (u - base) / abs(base) * 100.0
            gain_s = f"{gain:.2f}"
        else:
            gain_s = "nan"
        print(f"{scheme}\t{u:.6f}\t{gain_s}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wnoskit", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="command", required=True)

    c = sub.add_parser("compile", help="decompose a control program and dump artifacts")
    c.add_argument("program")
    c.add_argument("--plans", action="store_true", help="also dump solver plans")
    c.add_argument("--seed", type=int, default=None)
    c.add_argument("--out", default=None)
    c.set_defaults(fn=cmd_compile)

    i = sub.add_parser("inspect", help="print instantiation tables and tree levels")
    i.add_argument("program")
    i.add_argument("--seed", type=int, default=None)
    i.set_defaults(fn=cmd_inspect)

    for name, fn in (("run", cmd_run), ("compare", cmd_compare)):
        r = sub.add_parser(name)
        r.add_argument("--program", required=True)
        r.add_argument("--scenario", required=True)
        r.add_argument("--scheme", action="append", required=True,
                       help="repeatable; one of " + ", ".join(netsim.SCHEMES))
        r.add_argument("--seed", type=int, default=None)
        r.add_argument("--out", default=None)
        if name == "run":
            r.add_argument("--plot", action="store_true")
        r.set_defaults(fn=fn)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ParseError, ValidationError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PARSE
    except (FormatError, TopologyError, IncompatibleProgram) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INCOMPATIBLE
    except WnosError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DECOMPOSE


if __name__ == "__main__":
    sys.exit(main())
