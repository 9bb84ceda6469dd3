"""Numerical laboratory for loss-of-derivatives corrector iterations.

The package provides periodic grid calculus (gridfield), concrete model
problems with tagged remainder classes (problem), the corrector-iteration
driver (iteration), explicit constant propagation (ledger), empirical
verification tools (verify), and a config-driven experiment CLI (cli).
"""

from .gridfield import (
    GridFunction,
    IncompatibleGrids,
    NormVector,
    ResolutionError,
    axpy,
    ck_norm,
    derivative,
    mollify,
    oscillator,
    pointwise_mul,
)
from .iteration import (
    DerivativeBudgetExhausted,
    IterationState,
    IterationTrace,
    check_hypotheses,
    initial_step,
    run,
    step,
)
from .ledger import ConstantSet, predict_budget, propagate, threshold
from .problem import (
    BoundClass,
    DomainEscape,
    IterationParams,
    ProblemConfig,
    ProblemInstance,
    RemainderSpec,
    RemainderTerm,
    make_scalar_toy,
    make_two_component_toy,
    make_varying_toy,
    with_self_interaction,
)
from .verify import (
    BoundReport,
    DecayBands,
    DecayFit,
    InsufficientSteps,
    demonstrate_r5_failure,
    fit_decay,
    oracle_norm,
    verify_remainder_class,
)

__version__ = "0.1.0"
