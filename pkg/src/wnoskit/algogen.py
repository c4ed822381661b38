"""Solver synthesis for lifted subproblems and the coefficient update rule.

A session-role template is pattern matched on its utility shape: a pure
log utility gives the reciprocal closed form, a pure linear utility
gives bound projection, any other smooth shape falls back to projected
gradient. Node-role (physical) templates always run projected gradient
in the normalized dB power domain, with the capacity model supplying
analytic gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import expr as ex
from .errors import MissingParameter, NoApplicableMethod, NotDifferentiable

CLOSED_FORM_RECIPROCAL = "closed_form_reciprocal"
BOUND_PROJECTION = "bound_projection"
PROJECTED_GRADIENT = "projected_gradient"
BEST_RESPONSE = "best_response"
DPL = "dpl"


@dataclass(frozen=True)
class StepSchedule:
    kind: str            # constant | diminishing
    alpha: float
    period: int = 1      # diminishing: alpha / ceil(k / period)
    floor: float = 0.0   # diminishing decays no further than this

    def at(self, k: int) -> float:
        if self.kind == "constant":
            return self.alpha
        return max(self.alpha / math.ceil(max(k, 1) / self.period), self.floor)


def parse_step(text, default: StepSchedule) -> StepSchedule:
    """Schedules read 'constant:a' or 'diminishing:a0:period[:floor]'."""
    if text is None:
        return default
    parts = str(text).split(":")
    kind = parts[0]
    if kind not in ("constant", "diminishing"):
        raise ValueError(f"unknown step schedule {text!r}")
    alpha = float(parts[1]) if len(parts) > 1 else default.alpha
    period = int(parts[2]) if len(parts) > 2 else 1
    floor = float(parts[3]) if len(parts) > 3 else 0.0
    return StepSchedule(kind=kind, alpha=alpha, period=period, floor=floor)


DEFAULT_DUAL_STEP = StepSchedule("diminishing", 0.05, period=10, floor=0.005)
DEFAULT_PHYS_STEP = StepSchedule("constant", 1.0)
DEFAULT_RATE_STEP = StepSchedule("constant", 0.1)


@dataclass(frozen=True)
class SolverPlan:
    method: str
    step: StepSchedule
    bounds: tuple                 # (lo, hi) of the controlled variable
    iterations_per_tick: int = 1
    terms: tuple = ()             # ((kind, coeff) ...) utility terms in own variable
    lam_coeff: float = 0.0        # multiplier m of the x * sum(lbd) coupling term
    power_coeff: float = 0.0      # node role: own-power term coefficient
    step_clamp: float = 1.0       # node role: max knob change per ascent step, dB


@dataclass(frozen=True)
class DualUpdateRule:
    step: StepSchedule = DEFAULT_DUAL_STEP


def dual_update(lam: float, slack: float, rule: DualUpdateRule, k: int) -> float:
    """Projected subgradient step: max(0, lam + alpha_k * slack)."""
    return max(0.0, lam + rule.step.at(k) * slack)


# -- template analysis ---------------------------------------------------------

def _split_template(template):
    """Utility terms and coupling multiplier of a session-role template."""
    terms, lam_coeff = [], 0.0
    for child in ex.addends(template.expression):
        fs = ex.factors(child)
        coeff = 1.0
        symbolic = []
        has_dual_sum = False
        for f in fs:
            if f.op == ex.CONST:
                coeff *= f.value
            elif f.op == ex.SUM_OVER and f.args[0].op == ex.VAR and f.args[0].name.startswith("lbd"):
                has_dual_sum = True
            else:
                symbolic.append(f)
        if has_dual_sum:
            if len(symbolic) != 1 or symbolic[0].op != ex.VAR:
                raise NoApplicableMethod("coupling term is not linear in the own variable")
            lam_coeff += -coeff  # stored as the positive multiplier of x*Lambda
            continue
        if len(symbolic) != 1:
            raise NoApplicableMethod(f"cannot read utility term {ex.render(child)}")
        s = symbolic[0]
        if s.op == ex.VAR:
            terms.append(("linear", coeff))
        elif s.op == ex.LOG and s.args[0].op == ex.VAR:
            terms.append(("log", coeff))
        elif s.op == ex.SQRT and s.args[0].op == ex.VAR:
            terms.append(("sqrt", coeff))
        else:
            raise NoApplicableMethod(f"utility term outside the operator set: {ex.render(child)}")
    return tuple(terms), lam_coeff


def synthesize_plan(template, settings: dict | None = None) -> SolverPlan:
    """Pick a numerical method for one role template; deterministic."""
    settings = settings or {}
    if not template.variables:
        raise NoApplicableMethod(f"template for role {template.role} has no bounded variable")
    bounds = template.variables[0][1]

    if template.role == "node":
        step = parse_step(settings.get("phys_step"), DEFAULT_PHYS_STEP)
        power_coeff = 0.0
        for child in ex.addends(template.expression):
            if child.op == ex.SUM_OVER:
                body = child.args[0]
                fs = ex.factors(body)
                names = [f.name for f in fs if f.op == ex.VAR]
                if any(n == "lnkpwr" for n in names) and not any(str(n).startswith("lbd") for n in names):
                    coeff = math.prod(f.value for f in fs if f.op == ex.CONST)
                    power_coeff += coeff
        return SolverPlan(method=PROJECTED_GRADIENT, step=step, bounds=bounds,
                          iterations_per_tick=int(settings.get("phys_iters", 1)),
                          power_coeff=power_coeff,
                          step_clamp=float(settings.get("phys_max_step_db", 1.0)))

    terms, lam_coeff = _split_template(template)
    kinds = sorted(k for k, _ in terms)
    step = parse_step(settings.get("rate_step"), DEFAULT_RATE_STEP)
    if kinds == ["log"]:
        return SolverPlan(method=CLOSED_FORM_RECIPROCAL, step=step, bounds=bounds,
                          terms=terms, lam_coeff=lam_coeff)
    if kinds in (["linear"], []):
        return SolverPlan(method=BOUND_PROJECTION, step=step, bounds=bounds,
                          terms=terms, lam_coeff=lam_coeff)
    return SolverPlan(method=PROJECTED_GRADIENT, step=step, bounds=bounds,
                      iterations_per_tick=int(settings.get("rate_iters", 5)),
                      terms=terms, lam_coeff=lam_coeff)


# -- local solves ----------------------------------------------------------------

def _clip(x, lo, hi):
    return min(max(x, lo), hi)


def _terms_value(terms, x):
    total = 0.0
    for kind, coeff in terms:
        if kind == "linear":
            total += coeff * x
        elif kind == "log":
            total += coeff * math.log(x)
        else:
            total += coeff * math.sqrt(x)
    return total


def _terms_slope(terms, x):
    slope = 0.0
    for kind, coeff in terms:
        if kind == "linear":
            slope += coeff
        elif kind == "log":
            slope += coeff / x
        else:
            slope += coeff / (2.0 * math.sqrt(x))
    return slope


def solve_local(plan: SolverPlan, duals, state: dict | None = None):
    """Maximize the local expression for the received coefficient values.

    Closed-form methods return the exact maximizer; the gradient method
    takes ascent steps from the current point in ``state``.
    """
    state = state or {}
    lam = float(sum(duals))
    if lam < 0:
        raise ValueError("dual coefficients must be nonnegative")
    lo, hi = plan.bounds

    if plan.method == CLOSED_FORM_RECIPROCAL:
        a = sum(c for k, c in plan.terms if k == "log")
        m = plan.lam_coeff
        if m * lam <= 0:
            return hi  # no congestion price: the log utility pushes to the cap
        return _clip(a / (m * lam), lo, hi)

    if plan.method == BOUND_PROJECTION:
        b = sum(c for k, c in plan.terms if k == "linear")
        slope = b - plan.lam_coeff * lam
        return hi if slope > 0 else lo  # ties break low: conservative transmission

    if plan.method == PROJECTED_GRADIENT:
        if plan.power_coeff or "grad_db" in state:
            return _physical_step(plan, state)
        if "x0" not in state:
            raise MissingParameter("projected gradient needs the current point 'x0'")
        x = _clip(float(state["x0"]), max(lo, 1e-9), hi)
        alpha = plan.step.at(int(state.get("k", 1)))
        for _ in range(plan.iterations_per_tick):
            g = _terms_slope(plan.terms, x) - plan.lam_coeff * lam
            x = _clip(x + alpha * g, max(lo, 1e-9), hi)
        return x

    raise NoApplicableMethod(f"unknown method {plan.method}")


def _physical_step(plan: SolverPlan, state: dict):
    """One projected ascent step on the normalized dB power knobs."""
    try:
        gain_db = state["gain_db"]
        grad_db = state["grad_db"]
    except KeyError as e:
        raise MissingParameter(f"physical solve lacks register {e.args[0]!r}") from e
    lo, hi = plan.bounds
    alpha = plan.step.at(int(state.get("k", 1)))
    clamp = plan.step_clamp
    if isinstance(gain_db, (int, float)) and isinstance(grad_db, (int, float)):
        out = float(gain_db)
        for _ in range(plan.iterations_per_tick):
            delta = alpha * (grad_db + plan.power_coeff)
            delta = _clip(delta, -clamp, clamp)
            out = _clip(out + delta, lo, hi)
        return out
    out = np.asarray(gain_db, dtype=float).copy()
    grad = np.asarray(grad_db, dtype=float)
    for _ in range(plan.iterations_per_tick):
        delta = np.clip(alpha * (grad + plan.power_coeff), -clamp, clamp)
        out = np.clip(out + delta, lo, hi)
    return out


def local_objective(plan: SolverPlan, duals, x: float) -> float:
    """Value of the session-role local expression at x (for verification)."""
    lam = float(sum(duals))
    return _terms_value(plan.terms, x) - plan.lam_coeff * lam * x


# -- penalized utilities ----------------------------------------------------------

CASE_BEST_RESPONSE = "case1_best_response"
CASE_GRADIENT = "case2_gradient"
CASE_DPL = "case3_dpl"


@dataclass(frozen=True)
class PenalizedUtility:
    case: str
    individual: object   # callable(x) -> float
    penalty: object      # callable(x) -> float

    def total(self, x) -> float:
        return self.individual(x) + self.penalty(x)


class CallableUtility:
    """Joint utility as per-agent components with optional analytic gradients.

    values[j](x) is agent j's component; grads[j](x) its full gradient;
    slices[j] the indices of x that agent j controls.
    """

    def __init__(self, values, slices, grads=None):
        self.values = list(values)
        self.slices = [np.asarray(s, dtype=int) for s in slices]
        self.grads = list(grads) if grads is not None else None

    @property
    def n_agents(self):
        return len(self.values)

    def value(self, j, x):
        return float(self.values[j](np.asarray(x, dtype=float)))

    def grad(self, j, x):
        if self.grads is None:
            raise NotDifferentiable("utility provides no gradients")
        return np.asarray(self.grads[j](np.asarray(x, dtype=float)), dtype=float)

    def agent_slice(self, i):
        return self.slices[i]


def penalize(case: str, agent: int, utility: CallableUtility, reference) -> PenalizedUtility:
    """Split the joint utility into an individual and a penalization term
    for one agent, per the chosen distributed scheme."""
    x0 = np.asarray(reference, dtype=float)
    own = utility.agent_slice(agent)
    others = [j for j in range(utility.n_agents) if j != agent]

    if case == CASE_BEST_RESPONSE:
        def individual(x):
            return utility.value(agent, x)
        return PenalizedUtility(case, individual, lambda x: 0.0)

    # gradient-based cases need differentiability
    g_own0 = utility.grad(agent, x0)[own]
    g_others0 = np.zeros(len(own))
    for j in others:
        g_others0 = g_others0 + utility.grad(j, x0)[own]

    if case == CASE_GRADIENT:
        def individual(x):
            dx = np.asarray(x, dtype=float)[own] - x0[own]
            return float(np.dot(g_own0, dx))

        def penalty(x):
            dx = np.asarray(x, dtype=float)[own] - x0[own]
            return float(np.dot(g_others0, dx))
        return PenalizedUtility(case, individual, penalty)

    if case == CASE_DPL:
        def individual(x):
            mixed = x0.copy()
            xi = np.asarray(x, dtype=float)[own]
            mixed[own] = xi
            return utility.value(agent, mixed)

        def penalty(x):
            xi = np.asarray(x, dtype=float)[own]
            return float(np.dot(g_others0, xi))
        return PenalizedUtility(case, individual, penalty)

    raise ValueError(f"unknown penalization case {case!r}")
