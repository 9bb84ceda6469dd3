"""Driver for the corrector iteration a_(i+1) = F(T - r_i(a_i)).

Each step solves the bilinear equation exactly for the previous remainder and
re-evaluates the remainder at the new iterate, so the new error satisfies the
substitution identity E_(i+1) = r_i(a_i) - r_(i+1)(a_(i+1)) up to rounding.
The driver computes E definitionally and uses the identity purely as a
cross-check, recording the residual between the two at every step.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from . import ledger
from .gridfield import GridFunction, NormVector, ck_norm
from .problem import DomainEscape, ProblemInstance

__all__ = [
    "DomainEscape", "DerivativeBudgetExhausted", "IterationState",
    "StepMargins", "IterationTrace", "HypothesisReport", "initial_step",
    "step", "run", "check_hypotheses", "identity_residual",
    "telescoped_remainder", "trace_to_csv",
]

IDENTITY_TOL = 1e-9
FLOOR_STOP = 1e-14   # stop stepping once ||E||_0 < FLOOR_STOP * ||T||_0
FLOOR_FIT = 1e-12    # steps below FLOOR_FIT * ||T||_0 are excluded from fits


class DerivativeBudgetExhausted(RuntimeError):
    """The derivative-loss budget k0 cannot cover another step."""


@dataclass(frozen=True)
class IterationState:
    """Snapshot after step i: the iterate, its remainder, and the error
    E = T - b(a, a) - r(a), with norms up to the step's remaining budget."""

    step: int
    a: GridFunction
    r_of_a: GridFunction
    error: GridFunction
    norms_a: NormVector
    norms_error: NormVector
    norms_r: NormVector


@dataclass(frozen=True)
class StepMargins:
    """Measured/allowed ratios for the four per-step bounds at one state.

    field_sup covers ||a||_0 <= C; field[k-1] covers ||a||_k <= C lam^k/(ll)
    for k >= 1; error[k] and remainder[k] cover the error and remainder
    bounds at order k.  All ratios <= 1 means the ledger constants dominate.
    """

    step: int
    field_sup: float
    field: tuple[float, ...]
    error: tuple[float, ...]
    remainder: tuple[float, ...]

    @property
    def worst(self) -> float:
        candidates = (self.field_sup,) + self.field + self.error + self.remainder
        return max(candidates)


@dataclass(frozen=True)
class IterationTrace:
    """Full record of a run: states 0..n, per-transition difference norms,
    identity residuals, hypothesis margins, and the propagated constants."""

    states: tuple[IterationState, ...]
    diff_norms: tuple[NormVector, ...]
    identity_residuals: tuple[float, ...]
    margins: tuple[StepMargins, ...]
    constants: tuple[ledger.ConstantSet, ...]
    flag: str
    escape_step: Optional[int]
    below_threshold: bool
    threshold: float
    target_sup: float

    @property
    def n_steps(self) -> int:
        return self.states[-1].step

    def usable_steps(self, floor_rel: float = FLOOR_FIT) -> list[int]:
        """Indices of states (step >= 1) whose error sits above the noise
        floor, the only ones meaningful for rate fitting."""
        floor = floor_rel * self.target_sup
        return [s.step for s in self.states
                if s.step >= 1 and s.norms_error[0] >= floor]


@dataclass(frozen=True)
class HypothesisReport:
    margins: tuple[StepMargins, ...]
    constants: tuple[ledger.ConstantSet, ...]
    passes: bool
    threshold: float
    below_threshold: bool


def _state(instance: ProblemInstance, step_index: int, a: GridFunction) -> IterationState:
    p = instance.params
    r_of_a = instance.remainder(a, step_index)
    error = instance.target - instance.bilinear(a, a, step_index) - r_of_a
    order = p.norm_order(step_index)
    return IterationState(
        step=step_index,
        a=a,
        r_of_a=r_of_a,
        error=error,
        norms_a=ck_norm(a, order),
        norms_error=ck_norm(error, order),
        norms_r=ck_norm(r_of_a, order),
    )


def start_state(instance: ProblemInstance) -> IterationState:
    """Step 0: a = 0, r(a) = 0, so the error is the target itself."""
    p = instance.params
    zero = GridFunction.zeros(p.n_points, instance.target.dim, instance.n_components)
    return _state(instance, 0, zero)


def initial_step(instance: ProblemInstance) -> IterationState:
    """Step 1: a = F(T).  The bilinear part reproduces T exactly, so the
    error is minus the remainder at the first iterate and their norms agree."""
    a1 = instance.inverse(instance.target, 1)
    return _state(instance, 1, a1)


def step(state: IterationState, instance: ProblemInstance) -> IterationState:
    """One corrector step from state i to i+1.

    Raises DomainEscape when T - r_i(a_i) leaves the inverse's neighborhood
    (the signal that lam*ell is too small) and DerivativeBudgetExhausted when
    no norm order would remain at i+1.
    """
    p = instance.params
    next_index = state.step + 1
    if p.k0 - next_index < 1:
        raise DerivativeBudgetExhausted(
            f"stepping to {next_index} leaves no controlled orders "
            f"(k0 = {p.k0}); raise k0 per the budget k1 + steps * order")
    argument = instance.target - state.r_of_a
    distance = (argument - instance.center).sup()
    radius = 1.0 / p.c_f
    if distance > radius:
        raise DomainEscape(
            f"argument is {distance:.6g} from the center, outside the "
            f"1/C_F = {radius:.6g} neighborhood (step {next_index})",
            step=next_index, measured=distance, radius=radius)
    a_next = instance.inverse(argument, next_index)
    return _state(instance, next_index, a_next)


def identity_residual(prev: IterationState, new: IterationState) -> float:
    """Sup distance between the definitional error and the substitution
    identity r_i(a_i) - r_(i+1)(a_(i+1)): exact algebra, so ~rounding."""
    return (new.error - (prev.r_of_a - new.r_of_a)).sup()


def _difference_norms(prev: IterationState, new: IterationState,
                      instance: ProblemInstance) -> NormVector:
    order = instance.params.norm_order(new.step)
    return ck_norm(new.a - prev.a, order)


def _step_margins(state: IterationState, cs: ledger.ConstantSet,
                  instance: ProblemInstance) -> StepMargins:
    p = instance.params
    ll = p.lambda_ell
    i = state.step
    field_sup = state.norms_a[0] / cs.c
    field = tuple(state.norms_a[k] / (cs.c * p.lam ** k / ll)
                  for k in range(1, len(state.norms_a)))
    error = tuple(state.norms_error[k] / (cs.c_err * p.lam ** k / ll ** i)
                  for k in range(len(state.norms_error)))
    remainder = tuple(state.norms_r[k] / (cs.c_r * p.lam ** k / ll)
                      for k in range(len(state.norms_r)))
    return StepMargins(step=i, field_sup=field_sup, field=field,
                       error=error, remainder=remainder)


def _margins_and_constants(states, instance):
    """Calibrate constants off step 1, then propagate them alongside the
    trace; measured/allowed ratios use the constants at the matching step."""
    active = [s for s in states if s.step >= 1]
    if not active:
        return (), ()
    first = active[0]
    cs = ledger.calibrate(first.norms_a, first.norms_error, first.norms_r,
                          instance.params, instance.target_constant)
    margins, constants = [], []
    for state in active:
        margins.append(_step_margins(state, cs, instance))
        constants.append(cs)
        cs = ledger.propagate(cs, instance.params, instance.remainder.class_tags)
    return tuple(margins), tuple(constants)


def run(instance: ProblemInstance, n_steps: Optional[int] = None) -> IterationTrace:
    """Run the iteration, recording everything needed for verification.

    Stops early with flag 'diverged' on DomainEscape (a partial trace, not an
    error: sub-threshold behavior is something we measure) or 'floor' once
    the error reaches the floating-point floor.
    """
    p = instance.params
    n = p.n_steps if n_steps is None else n_steps
    if n < 1:
        raise ValueError(f"n_steps must be >= 1, got {n}")
    if p.k1 > p.k0 - n:
        raise DerivativeBudgetExhausted(
            f"budget too small: k1={p.k1} > k0 - n_steps = {p.k0 - n}; "
            f"need k0 >= {p.k1 + n} for order-1 remainders")
    thr = ledger.threshold(ledger.stock_constants(p))
    target_sup = instance.target.sup()

    states = [start_state(instance)]
    diffs: list[NormVector] = []
    residuals: list[float] = []
    flag, escape_step = "completed", None
    for i in range(1, n + 1):
        prev = states[-1]
        try:
            new = initial_step(instance) if i == 1 else step(prev, instance)
        except DomainEscape as esc:
            flag, escape_step = "diverged", esc.step
            break
        states.append(new)
        diffs.append(_difference_norms(prev, new, instance))
        residuals.append(identity_residual(prev, new))
        if new.norms_error[0] < FLOOR_STOP * target_sup:
            if i < n:
                flag = "floor"
            break

    margins, constants = _margins_and_constants(states, instance)
    return IterationTrace(
        states=tuple(states),
        diff_norms=tuple(diffs),
        identity_residuals=tuple(residuals),
        margins=margins,
        constants=constants,
        flag=flag,
        escape_step=escape_step,
        below_threshold=p.lambda_ell <= thr,
        threshold=thr,
        target_sup=target_sup,
    )


def check_hypotheses(trace: IterationTrace, instance: ProblemInstance) -> HypothesisReport:
    """Re-derive the per-step measured/allowed ratios from the trace.

    Passes when every ratio stays at or below 1, i.e. the ledger's propagated
    constants dominate every measured quantity.
    """
    if len(trace.states) < 2:
        raise ValueError("trace has no completed steps to check")
    margins, constants = _margins_and_constants(trace.states, instance)
    passes = all(m.worst <= 1.0 for m in margins)
    return HypothesisReport(margins=margins, constants=constants, passes=passes,
                            threshold=trace.threshold,
                            below_threshold=trace.below_threshold)


def telescoped_remainder(trace: IterationTrace, upto: int) -> GridFunction:
    """Reconstruct r_i(a_i) at state `upto` from the first remainder and the
    errors: summing the substitution identity over steps 2..upto collapses to
    r_1(a_1) - sum_{j=2..upto} E_j."""
    if not 1 <= upto <= trace.n_steps:
        raise ValueError(f"upto must be in 1..{trace.n_steps}, got {upto}")
    total = trace.states[1].r_of_a
    for j in range(2, upto + 1):
        total = total - trace.states[j].error
    return total


def _csv_cell(value) -> str:
    if value is None:
        return ""
    return f"{value:.17g}"


def trace_to_csv(trace: IterationTrace, path) -> None:
    """One row per (step, k): norms, difference norms, identity residual and
    the four per-step margins."""
    header = ("step,k,norm_a,norm_error,norm_r,diff_norm,identity_residual,"
              "clause1_margin,clause2_margin,clause3_margin,clause4_margin")
    lines = [header]
    margin_by_step = {m.step: m for m in trace.margins}
    for idx, state in enumerate(trace.states):
        diff = trace.diff_norms[idx - 1] if 1 <= idx <= len(trace.diff_norms) else None
        residual = (trace.identity_residuals[idx - 1]
                    if 1 <= idx <= len(trace.identity_residuals) else None)
        margins = margin_by_step.get(state.step)
        for k in range(len(state.norms_a)):
            cells = [
                str(state.step), str(k),
                _csv_cell(state.norms_a[k]),
                _csv_cell(state.norms_error[k]),
                _csv_cell(state.norms_r[k]),
                _csv_cell(diff[k] if diff is not None and k < len(diff) else None),
                _csv_cell(residual),
                _csv_cell(margins.field_sup if margins else None),
                _csv_cell(margins.field[k - 1]
                          if margins and 1 <= k <= len(margins.field) else None),
                _csv_cell(margins.error[k]
                          if margins and k < len(margins.error) else None),
                _csv_cell(margins.remainder[k]
                          if margins and k < len(margins.remainder) else None),
            ]
            lines.append(",".join(cells))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
