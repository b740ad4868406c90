from .nlp import (
    CallbackError,
    ConstraintBlock,
    NlpOptions,
    NlpProblem,
    NlpSolution,
    audit_gradients,
    solve_nlp,
)
