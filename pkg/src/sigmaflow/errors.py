"""Exception hierarchy shared by all modules.

Each class carries the process exit code the CLI maps it to:

    2  usage / configuration problems
    3  cone or positivity failures (the state left the admissible set)
    4  nonconvergence (flow step-size underflow, Newton stall, continuation)
    5  internal numeric errors (non-finite values, failed decompositions)
"""

from __future__ import annotations


class SigmaFlowError(Exception):
    """Base class; exit_code is what the CLI returns for this failure."""

    exit_code = 5


class UsageError(SigmaFlowError):
    """Bad command line, unknown config key, malformed value."""

    exit_code = 2


class ConfigurationError(UsageError):
    """Config parsed fine but describes an impossible setup."""

    exit_code = 2


class ConeViolationError(SigmaFlowError):
    """Some sigma_j(A) <= 0 where Gamma_k^+ membership was required.

    label is a ConeLabel describing which j failed; node, when known, is the
    grid multi-index of the worst offending point.
    """

    exit_code = 3

    def __init__(self, message, label=None, node=None):
        super().__init__(message)
        self.label = label
        self.node = node


class PositivityError(SigmaFlowError):
    """A quantity that must stay positive (volume weight, sigma field) is not."""

    exit_code = 3


class NonconvergenceError(SigmaFlowError):
    """An iteration gave up: Newton stall, dt underflow, continuation failure."""

    exit_code = 4

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class FlowFailureError(NonconvergenceError):
    """Time stepper rejected a step 30 times in a row (dt underflow)."""


class ContinuationFailureError(NonconvergenceError):
    """Continuation t-step underflow; the target lambda is presumed >= lambda*."""


class NumericError(SigmaFlowError):
    """Non-finite values or a failed matrix decomposition."""

    exit_code = 5
