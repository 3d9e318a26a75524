#!/usr/bin/python3
"""
Defines the exceptions raised across the package.
- JointFWIError: Base class; the CLI maps its subclasses onto exit codes.
- BadShape, NonPositiveSlowness, NonFiniteEntry: ModelGrid / matrix validation.
- ShapeMismatch, WrongDomain: Operand shape and domain checks.
- SingularOperator: Helmholtz factorization hit a vanishing pivot.
- BadRatio, BadSpec, EmptySchedule: Configuration and schedule errors.
- BudgetTooTight: Pareto root finder could not reach the residual budget.
- LineSearchFailure: Wolfe line search found no acceptable step.
- BadFormat: A JFM1 file could not be parsed.
- ZeroReference: Metric computed against an all-zero reference.
- InconsistentProblem: lambda and simultaneous data do not pair up.
"""


class JointFWIError(Exception):
    """
    Base class for every error raised by joint_fwi.
    """
    exit_code = 3


class BadShape(JointFWIError, ValueError):
    exit_code = 2


class NonPositiveSlowness(JointFWIError, ValueError):
    exit_code = 2


class NonFiniteEntry(JointFWIError, ValueError):
    exit_code = 3


class ShapeMismatch(JointFWIError, ValueError):
    exit_code = 2


class WrongDomain(JointFWIError, ValueError):
    exit_code = 2


class SingularOperator(JointFWIError, ArithmeticError):
    pass


class BadRatio(JointFWIError, ValueError):
    exit_code = 2


class BadSpec(JointFWIError, ValueError):
    exit_code = 2


class EmptySchedule(JointFWIError, ValueError):
    exit_code = 2


class InconsistentProblem(JointFWIError, ValueError):
    exit_code = 2


class ZeroReference(JointFWIError, ValueError):
    pass


class BadFormat(JointFWIError, ValueError):
    exit_code = 4


class BudgetTooTight(JointFWIError):
    """
    Raised when v(tau) stays above epsilon and tau no longer grows.

    - factorization: best factor pair reached before giving up.
    - trace: the (tau, v_tau) pairs visited.
    """

    def __init__(self, message, factorization=None, trace=None):
        super().__init__(message)
        self.factorization = factorization
        self.trace = trace


class LineSearchFailure(JointFWIError):
    """
    Raised by the line search; the L-BFGS driver turns it into a flag.

    - evaluations: oracle calls spent before giving up.
    """

    def __init__(self, message, evaluations=0):
        super().__init__(message)
        self.evaluations = evaluations
