"""Concrete model problems for the corrector iteration.

Each instance packages a target tensor T near a reference T0, a bilinear map
b with a local right inverse F (so b(F(T'), F(T')) = T' on a neighborhood of
T0), and a remainder built from modulated-cosine terms whose scaling class is
declared up front.  The stock scalar family uses b(a, a) = a^2 pointwise and
F = sqrt, which keeps every class constant computable in closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .gridfield import (
    RESOLUTION_FACTOR,
    GridFunction,
    component_sum,
    derivative,
    mollify,
    oscillator,
    pointwise_mul,
    random_trig_polynomial,
    scale,
)

RIGHT_INVERSE_TOL = 1e-10

# (lambda-power, ell-power) of each class prefactor; R6 is (s+t, 0).
_PREFACTOR_TABLE = {
    "R1": (1, 1),
    "R2": (2, 2),
    "R3": (2, 0),
    "R4": (2, 1),
    "R5": (1, 1),
}

# Derivative orders applied to the arguments before the bilinear/linear core.
_ARG_DERIVATIVES = {
    "R1": (0,),
    "R2": (0, 0),
    "R3": (1, 1),
    "R4": (1, 0),
    "R5": (1, 0),
}


class DomainEscape(RuntimeError):
    """The inverse map was asked for a tensor outside its neighborhood."""

    def __init__(self, message: str, step: Optional[int] = None,
                 measured: Optional[float] = None, radius: Optional[float] = None):
        super().__init__(message)
        self.step = step
        self.measured = measured
        self.radius = radius


class NeighborhoodViolation(ValueError):
    """Construction refused: the target strays too far from the center."""

    def __init__(self, message: str, measured: float, radius: float):
        super().__init__(message)
        self.measured = measured
        self.radius = radius


@dataclass(frozen=True)
class BoundClass:
    """Scaling class of a remainder term: prefactor powers plus which
    arguments carry derivatives.  s, t are meaningful for R6 only."""

    kind: str
    s: int = 0
    t: int = 0
    prefactor_exponents: tuple[int, int] = field(init=False)

    def __post_init__(self):
        if self.kind == "R6":
            if self.s < 1 or self.t < 1:
                raise ValueError(f"R6 requires s, t >= 1, got s={self.s}, t={self.t}")
            exponents = (self.s + self.t, 0)
        elif self.kind in _PREFACTOR_TABLE:
            if self.s or self.t:
                raise ValueError(f"s, t apply to R6 only, not {self.kind}")
            exponents = _PREFACTOR_TABLE[self.kind]
        else:
            raise ValueError(f"unknown bound class kind {self.kind!r}")
        object.__setattr__(self, "prefactor_exponents", exponents)

    @property
    def arg_derivatives(self) -> tuple[int, ...]:
        if self.kind == "R6":
            return (self.s, self.t)
        return _ARG_DERIVATIVES[self.kind]

    @property
    def arity(self) -> int:
        return len(self.arg_derivatives)

    @property
    def derivative_order(self) -> int:
        """Derivative orders consumed per step when this class is present."""
        return max(self.arg_derivatives)

    def prefactor(self, lam: float, ell: float) -> float:
        lp, ep = self.prefactor_exponents
        return lam ** (-lp) * ell ** (-ep)


R1 = BoundClass("R1")
R2 = BoundClass("R2")
R3 = BoundClass("R3")
R4 = BoundClass("R4")
R5 = BoundClass("R5")


def r6(s: int, t: int) -> BoundClass:
    return BoundClass("R6", s=s, t=t)


@dataclass(frozen=True)
class RemainderTerm:
    """One modulated-cosine remainder term.

    Evaluates weight * prefactor(lam, ell) * cos(lam x) * core, where the core
    is the component mean of the (derivative-applied) arguments.  The cos
    modulation contributes lambda^(k - j1 - j2) under differentiation, which
    is exactly the shape of the declared class bound.
    """

    bound_class: BoundClass
    weight: float = 1.0

    def apply(self, a: GridFunction, b: Optional[GridFunction] = None, *,
              lam: int, ell: float, modulation: GridFunction) -> GridFunction:
        orders = self.bound_class.arg_derivatives
        if self.bound_class.arity == 1:
            core = a if orders[0] == 0 else derivative(a, 0, orders[0])
        else:
            if b is None:
                b = a
            u = a if orders[0] == 0 else derivative(a, 0, orders[0])
            v = b if orders[1] == 0 else derivative(b, 0, orders[1])
            core = pointwise_mul(u, v)
        core = scale(1.0 / core.n_components, component_sum(core))
        pref = self.weight * self.bound_class.prefactor(lam, ell)
        return scale(pref, pointwise_mul(modulation, core))


def stock_remainder_terms() -> tuple[RemainderTerm, ...]:
    return (RemainderTerm(R1), RemainderTerm(R2), RemainderTerm(R3), RemainderTerm(R4))


def self_interaction_term(strength: float) -> RemainderTerm:
    return RemainderTerm(R5, weight=strength)


@dataclass(frozen=True)
class RemainderSpec:
    """A remainder r = sum of tagged terms, optionally drifting with the step.

    The step-i evaluation is scale(i) * sum_terms with scale(i) = 1 +
    drift / (lam*ell)^i, so consecutive steps differ at the same order the
    error itself decays.  r(0, i) = 0 for every i by construction.
    """

    terms: tuple[RemainderTerm, ...]
    lam: int
    ell: float
    modulation: GridFunction
    drift: float = 0.0

    @property
    def varies_with_step(self) -> bool:
        return self.drift != 0.0

    @property
    def class_tags(self) -> tuple[BoundClass, ...]:
        return tuple(t.bound_class for t in self.terms)

    @property
    def derivative_order(self) -> int:
        return max((t.bound_class.derivative_order for t in self.terms), default=0)

    def step_scale(self, step: int) -> float:
        return 1.0 + self.drift * (self.lam * self.ell) ** (-step)

    def __call__(self, a: GridFunction, step: int) -> GridFunction:
        total = GridFunction.zeros(a.n_points, a.dim, 1)
        for term in self.terms:
            total = total + term.apply(a, a, lam=self.lam, ell=self.ell,
                                       modulation=self.modulation)
        return scale(self.step_scale(step), total)


@dataclass(frozen=True)
class IterationParams:
    """Scales and budgets of one experiment.

    k0 is the largest controlled derivative order at step 0 and shrinks by
    one per step; k1 is the order that must survive all n_steps.  c_f is the
    declared inverse-map constant (domain radius 1/c_f, target radius
    1/(3 c_f)); c_field seeds the ledger's field constant.
    """

    lam: int
    ell: float
    k0: int
    k1: int
    c_f: float = 1.0
    c_field: float = 2.0
    n_points: int = 2048
    n_steps: int = 5
    seed: int = 0

    @property
    def lambda_ell(self) -> float:
        return self.lam * self.ell

    @property
    def k_safe(self) -> int:
        """Largest norm order the grid resolves at this frequency."""
        return self.n_points // (RESOLUTION_FACTOR * self.lam) - 1

    def norm_order(self, step: int) -> int:
        """Norm orders reported at a given step: the derivative-loss budget
        k0 - step, capped by what the grid resolves."""
        return max(0, min(self.k0 - step, self.k_safe))

    def validate(self) -> None:
        if self.lam != int(self.lam) or self.lam < 1:
            raise ValueError(f"lambda must be a positive integer, got {self.lam}")
        if self.ell <= 0:
            raise ValueError(f"ell must be positive, got {self.ell}")
        if self.lambda_ell <= 1:
            raise ValueError(f"lambda*ell must exceed 1, got {self.lambda_ell}")
        if self.k1 < 1 or self.k0 < self.k1:
            raise ValueError(f"need k0 >= k1 >= 1, got k0={self.k0}, k1={self.k1}")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")
        if self.c_f <= 0 or self.c_field <= 0:
            raise ValueError("constants C_F and C must be positive")
        if self.n_points < 2 or (self.n_points & (self.n_points - 1)) != 0:
            raise ValueError(f"n_points must be a power of two, got {self.n_points}")
        if RESOLUTION_FACTOR * self.lam > self.n_points:
            raise ValueError(
                f"frequency {self.lam} unresolved at n_points={self.n_points}")
        if self.k_safe < self.k1:
            raise ValueError(
                f"grid resolves norms only to order {self.k_safe} at frequency "
                f"{self.lam}; k1={self.k1} needs n_points >= "
                f"{RESOLUTION_FACTOR * self.lam * (self.k1 + 1)}")


@dataclass(frozen=True)
class ProblemInstance:
    """An immutable (T, T0, b, F, r) package ready for the driver.

    bilinear and inverse take the step index so families where they change
    from step to step stay exact right-inverse pairs at every step.
    """

    kind: str
    target: GridFunction
    center: GridFunction
    bilinear: Callable[[GridFunction, GridFunction, int], GridFunction]
    inverse: Callable[[GridFunction, int], GridFunction]
    remainder: RemainderSpec
    params: IterationParams
    n_components: int
    target_constant: float


def _toy_inverse(center: GridFunction, c_f: float, n_components: int,
                 drift: float, lambda_ell: float):
    radius = 1.0 / c_f

    def inverse(tensor: GridFunction, step: int) -> GridFunction:
        distance = (tensor - center).sup()
        if distance > radius:
            raise DomainEscape(
                f"tensor is {distance:.6g} from the center, outside the "
                f"1/C_F = {radius:.6g} neighborhood (step {step})",
                step=step, measured=distance, radius=radius)
        vals = tensor.samples / n_components
        if np.min(vals) <= 0.0:
            raise DomainEscape(
                f"tensor loses positivity (min {np.min(vals):.6g}) at step {step}",
                step=step, measured=distance, radius=radius)
        root = np.sqrt(vals)
        stepf = 1.0 + drift * lambda_ell ** (-step)
        samples = np.repeat(root * stepf, n_components, axis=-1)
        return GridFunction(tensor.dim, tensor.n_points, n_components, samples)

    return inverse


def _toy_bilinear(n_components: int, drift: float, lambda_ell: float):
    def bilinear(u: GridFunction, v: GridFunction, step: int) -> GridFunction:
        stepf = 1.0 + drift * lambda_ell ** (-step)
        return scale(stepf ** (-2), component_sum(pointwise_mul(u, v)))

    return bilinear


def _check_right_inverse(instance: ProblemInstance, n_samples: int = 20) -> None:
    p = instance.params
    rng = np.random.default_rng([p.seed, 0x5eed])
    radius = 1.0 / (3.0 * p.c_f)
    for i in range(n_samples):
        bump = random_trig_polynomial(rng, p.n_points, dim=instance.target.dim)
        rho = radius * rng.uniform(0.1, 0.99)
        t_prime = instance.center + scale(rho, bump)
        step = 1 + i % 3
        a = instance.inverse(t_prime, step)
        residual = (instance.bilinear(a, a, step) - t_prime).sup()
        if residual > RIGHT_INVERSE_TOL:
            raise AssertionError(
                f"right-inverse residual {residual:.3e} exceeds "
                f"{RIGHT_INVERSE_TOL} on sample {i}")


def _measure_target_constant(target: GridFunction, params: IterationParams) -> float:
    from .gridfield import ck_norm  # local import keeps module load light

    k = params.norm_order(0)
    norms = ck_norm(target, k)
    c = 0.0
    for j in range(1, k + 1):
        c = max(c, norms[j] * params.lambda_ell / params.lam ** j)
    return c


def _make_toy(params: IterationParams, t_amplitude: float, drift: float,
              n_components: int, kind: str) -> ProblemInstance:
    params.validate()
    if drift < 0:
        raise ValueError(f"drift must be >= 0, got {drift}")
    center = GridFunction.constant(1.0, params.n_points)
    wave = oscillator(t_amplitude, params.lam, phase=-math.pi / 2,
                      n_points=params.n_points)
    target = center + mollify(wave, params.ell) if t_amplitude != 0.0 else center
    radius = 1.0 / (3.0 * params.c_f)
    distance = (target - center).sup()
    if distance >= radius:
        raise NeighborhoodViolation(
            f"||T - T0||_0 = {distance:.6g} >= 1/(3 C_F) = {radius:.6g}; "
            f"reduce the amplitude or enlarge ell", measured=distance, radius=radius)
    modulation = oscillator(1.0, params.lam, n_points=params.n_points)
    remainder = RemainderSpec(terms=stock_remainder_terms(), lam=params.lam,
                              ell=params.ell, modulation=modulation, drift=drift)
    instance = ProblemInstance(
        kind=kind,
        target=target,
        center=center,
        bilinear=_toy_bilinear(n_components, drift, params.lambda_ell),
        inverse=_toy_inverse(center, params.c_f, n_components, drift,
                             params.lambda_ell),
        remainder=remainder,
        params=params,
        n_components=n_components,
        target_constant=_measure_target_constant(target, params),
    )
    _check_right_inverse(instance)
    return instance


def make_scalar_toy(params: IterationParams, t_amplitude: float = 0.2) -> ProblemInstance:
    """Scalar toy: b(a, a) = a^2, F = sqrt near T0 = 1, stock remainder
    r1 + r2 + r3 + r4 modulated by cos(lam x)."""
    return _make_toy(params, t_amplitude, drift=0.0, n_components=1, kind="scalar")


def make_varying_toy(params: IterationParams, drift: float,
                     t_amplitude: float = 0.2) -> ProblemInstance:
    """Step-varying family: the inverse gains a factor 1 + drift/(lam*ell)^i
    (with the bilinear map compensating, so each step stays an exact
    right-inverse pair) and the remainder drifts at the same decaying rate."""
    return _make_toy(params, t_amplitude, drift=drift, n_components=1, kind="scalar")


def make_two_component_toy(params: IterationParams, t_amplitude: float = 0.2,
                           drift: float = 0.0) -> ProblemInstance:
    """Two-component variant: b(a, a) = a1^2 + a2^2 with F splitting the
    tensor equally between components."""
    return _make_toy(params, t_amplitude, drift=drift, n_components=2,
                     kind="two_component")


def with_self_interaction(instance: ProblemInstance, strength: float) -> ProblemInstance:
    """Append the self-interaction term strength/(lam*ell) cos(lam x) (da) a."""
    if strength < 0:
        raise ValueError(f"strength must be >= 0, got {strength}")
    if strength == 0.0:
        return instance
    terms = instance.remainder.terms + (self_interaction_term(strength),)
    return replace(instance, remainder=replace(instance.remainder, terms=terms))


PROBLEM_KEYS = ("kind", "lambda", "ell", "k0", "k1", "C_F", "amplitude",
                "drift", "r5_strength", "n_points", "n_steps", "seed")


@dataclass(frozen=True)
class ProblemConfig:
    """Flat problem definition, loadable from a key = value config file."""

    kind: str = "scalar"
    lam: int = 32
    ell: float = 4.0
    k0: int = 7
    k1: int = 2
    c_f: float = 1.0
    amplitude: float = 0.2
    drift: float = 0.0
    r5_strength: float = 0.0
    n_points: int = 2048
    n_steps: int = 5
    seed: int = 7

    @classmethod
    def from_mapping(cls, mapping: dict) -> "ProblemConfig":
        converters = {
            "kind": str, "lambda": int, "ell": float, "k0": int, "k1": int,
            "C_F": float, "amplitude": float, "drift": float,
            "r5_strength": float, "n_points": int, "n_steps": int, "seed": int,
        }
        attrs = {"lambda": "lam", "C_F": "c_f"}
        kwargs = {}
        for key, raw in mapping.items():
            if key not in converters:
                raise ValueError(f"unknown problem key {key!r}")
            try:
                value = converters[key](raw)
            except (TypeError, ValueError) as exc:
                raise ValueError(f"bad value for {key!r}: {raw!r}") from exc
            kwargs[attrs.get(key, key)] = value
        cfg = cls(**kwargs)
        if cfg.kind not in ("scalar", "two_component"):
            raise ValueError(f"kind must be scalar or two_component, got {cfg.kind!r}")
        if cfg.r5_strength < 0 or cfg.drift < 0 or cfg.amplitude < 0:
            raise ValueError("amplitude, drift and r5_strength must be >= 0")
        return cfg

    def params(self) -> IterationParams:
        return IterationParams(lam=self.lam, ell=self.ell, k0=self.k0, k1=self.k1,
                               c_f=self.c_f, n_points=self.n_points,
                               n_steps=self.n_steps, seed=self.seed)

    def build(self) -> ProblemInstance:
        if self.kind == "two_component":
            instance = make_two_component_toy(self.params(), self.amplitude,
                                              drift=self.drift)
        elif self.drift != 0.0:
            instance = make_varying_toy(self.params(), self.drift, self.amplitude)
        else:
            instance = make_scalar_toy(self.params(), self.amplitude)
        return with_self_interaction(instance, self.r5_strength)


def parse_flat_config(text: str) -> dict:
    """Parse `key = value` lines; '#' starts a comment, blank lines ignored."""
    mapping = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = line.split("=", 1)
        key, value = key.strip(), value.strip()
        if not key or not value:
            raise ValueError(f"line {lineno}: empty key or value in {raw!r}")
        if key in mapping:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        mapping[key] = value
    return mapping


def load_problem_config(path) -> ProblemConfig:
    with open(path) as fh:
        return ProblemConfig.from_mapping(parse_flat_config(fh.read()))
