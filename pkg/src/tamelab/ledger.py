"""Explicit constant arithmetic for the corrector iteration.

Every inequality the driver relies on is mechanized as one frozen formula so
predicted constants are reproducible.  The formulas are deliberately safe
over-estimates (counts of index pairs, worst-case Leibniz factors), never
sharp: their job is to dominate measured margins, not to match them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Optional

from .gridfield import NormVector
from .problem import BoundClass, IterationParams, R1, R2, R3, R4

STOCK_CLASSES = (R1, R2, R3, R4)

# Declared uniform bound on ||r(a)||_0 * (lam ell) for the stock family; we
# identify it with the per-order remainder constant at k = 0.
DEFAULT_REMAINDER_CONSTANT = 1.0

# Propagated constants obey a quadratic recurrence and can exceed float range
# within a handful of steps at small lam*ell; they saturate here instead of
# overflowing.  A saturated constant still dominates every measured margin.
CONSTANT_CAP = 1e300

# Lower clamp keeping ConstantSet valid when a family has no remainder terms
# (the propagated error and remainder constants would be exactly zero).
CONSTANT_FLOOR = 1e-300


def pair_count(k: int) -> int:
    """Number of (j1, j2) with j1 + j2 <= k: the terms in a bilinear bound."""
    return (k + 1) * (k + 2) // 2


def safe_leibniz(k: int) -> float:
    """Safe per-order class constant 2^k * max_j binom(k, j)."""
    return float(2 ** k * math.comb(k, k // 2))


@dataclass(frozen=True)
class ConstantSet:
    """Constants of one inductive step.

    c bounds the field (||a||_0 <= c, ||a||_k <= c lam^k/(lam ell)), c_err the
    error (||E_i||_k <= c_err lam^k/(lam ell)^i), c_r the remainder
    (||r(a)||_k <= c_r lam^k/(lam ell)), c_f the inverse map, and c_k[k] the
    per-order remainder-class constants.
    """

    c: float
    c_err: float
    c_r: float
    c_f: float
    c_k: tuple[float, ...]
    step: int = 1

    def __post_init__(self):
        for name in ("c", "c_err", "c_r", "c_f"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive and finite, got {v}")
        if not self.c_k or any(not (math.isfinite(v) and v > 0) for v in self.c_k):
            raise ValueError(f"c_k must be nonempty, positive, finite: {self.c_k}")
        if self.step < 0:
            raise ValueError(f"step must be >= 0, got {self.step}")


def stock_constants(params: IterationParams) -> ConstantSet:
    return ConstantSet(c=params.c_field, c_err=1.0, c_r=DEFAULT_REMAINDER_CONSTANT,
                       c_f=params.c_f,
                       c_k=tuple(safe_leibniz(k) for k in range(params.k0 + 1)),
                       step=1)


def difference_constant(cs: ConstantSet, params: IterationParams) -> float:
    """Constant of ||a^(i+1) - a^(i)||_k <= c_diff lam^k/(lam ell)^i.

    Assembled from the inverse-map Lipschitz bound applied to the two
    consecutive arguments: c_f [ c_err + (c/(ll) + c_r/(ll) + 1) c_err ],
    with the target and remainder constants identified (both <= c), which
    collapses to c_f c_err (2 + 2 c / (lam ell)).
    """
    return min(cs.c_f * cs.c_err * (2.0 + 2.0 * cs.c / (params.lambda_ell)),
               CONSTANT_CAP)


def _error_contribution(kind: str, k: int, c_k: float, c: float, c_diff: float,
                        mu: float, lam: float) -> float:
    """Per-class coefficient of lam^k/(lam ell)^(i+1) in the next error,
    obtained by feeding the difference bound through the class estimate."""
    n_k = pair_count(k)
    if kind == "R1":
        return c_k * (k + 1) * c_diff
    if kind == "R2":
        return 2.0 * c_k * c * c_diff * n_k * mu
    if kind in ("R3", "R6"):
        return 2.0 * c_k * c * c_diff * n_k
    if kind == "R4":
        return c_k * c * c_diff * n_k * (1.0 + mu)
    if kind == "R5":
        # Self interaction: the derivative on the difference argument leaves
        # a bare factor lam that no prefactor absorbs.
        return c_k * c * c_diff * n_k * lam
    raise ValueError(f"unknown class kind {kind!r}")


def _remainder_contribution(kind: str, k: int, c_k: float, c: float,
                            mu: float, lam: float) -> float:
    """Per-class coefficient of lam^k/(lam ell) in ||r(a)||_k given
    ||a||_j <= c lam^j."""
    n_k = pair_count(k)
    if kind == "R1":
        return c_k * (k + 1) * c
    if kind in ("R2", "R3", "R4", "R6"):
        return c_k * n_k * c * c * mu
    if kind == "R5":
        return c_k * n_k * c * c * lam
    raise ValueError(f"unknown class kind {kind!r}")


def propagate(cs: ConstantSet, params: IterationParams,
              classes: Optional[Iterable[BoundClass]] = None) -> ConstantSet:
    """Advance the constants one inductive step.

    Deterministic closed-form arithmetic: the difference constant feeds the
    per-class error coefficients, the new field constant comes from pushing
    target + remainder through the inverse bound, and the new remainder
    constant re-evaluates every class at the new field size.
    """
    if params.lambda_ell <= 1:
        raise ValueError(f"lambda*ell must exceed 1, got {params.lambda_ell}")
    kinds = tuple(b.kind for b in (classes if classes is not None else STOCK_CLASSES))
    mu = 1.0 / params.lambda_ell
    c_diff = difference_constant(cs, params)
    c_next = min(cs.c_f * (cs.c + cs.c_r + 1.0), CONSTANT_CAP)
    c_err_next = max(
        sum(_error_contribution(kind, k, cs.c_k[k], cs.c, c_diff, mu, params.lam)
            for kind in kinds)
        for k in range(len(cs.c_k)))
    c_r_next = max(
        sum(_remainder_contribution(kind, k, cs.c_k[k], c_next, mu, params.lam)
            for kind in kinds)
        for k in range(len(cs.c_k)))
    clamp = lambda v: min(max(v, CONSTANT_FLOOR), CONSTANT_CAP)
    return replace(cs, c=c_next, c_err=clamp(c_err_next), c_r=clamp(c_r_next),
                   step=cs.step + 1)


def threshold(cs: ConstantSet, params: Optional[IterationParams] = None) -> float:
    """Smallest lam*ell keeping c_r/(lam ell) within the 1/(3 c_f) margin."""
    return 3.0 * cs.c_f * cs.c_r


def predict_budget(k1: int, n_steps: int, remainder_order: int) -> int:
    """Starting order k0 needed to still control k1 orders after n_steps,
    losing remainder_order derivatives per step."""
    if k1 < 1:
        raise ValueError(f"k1 must be >= 1, got {k1}")
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    if remainder_order < 0:
        raise ValueError(f"remainder_order must be >= 0, got {remainder_order}")
    return k1 + n_steps * remainder_order


def calibrate(norms_a: NormVector, norms_error: NormVector, norms_r: NormVector,
              params: IterationParams, target_constant: float = 0.0,
              headroom: float = 1.01) -> ConstantSet:
    """Constants measured off the first iterate, with a small headroom so the
    step-1 margins sit strictly below 1."""
    ll = params.lambda_ell
    c = max(norms_a[0], target_constant,
            max((norms_a[k] * ll / params.lam ** k for k in range(1, len(norms_a))),
                default=0.0))
    c_err = max(norms_error[k] * ll / params.lam ** k for k in range(len(norms_error)))
    c_r = max(norms_r[k] * ll / params.lam ** k for k in range(len(norms_r)))
    floor = 1e-30  # keep the set valid when a component is identically zero
    return ConstantSet(c=max(c, floor) * headroom,
                       c_err=max(c_err, floor) * headroom,
                       c_r=max(c_r, floor) * headroom,
                       c_f=params.c_f,
                       c_k=tuple(safe_leibniz(k) for k in range(params.k0 + 1)),
                       step=1)


def constant_table(cs: ConstantSet, params: IterationParams, n_steps: int,
                   classes: Optional[Iterable[BoundClass]] = None) -> list[dict]:
    """Step-by-step table of propagated constants for reporting."""
    rows = []
    current = cs
    for _ in range(n_steps):
        rows.append({
            "step": current.step,
            "C": current.c,
            "C_err": current.c_err,
            "C_r": current.c_r,
            "C_diff": difference_constant(current, params),
            "threshold": threshold(current, params),
        })
        current = propagate(current, params, classes)
    return rows
