"""Exception types shared across the toolkit."""


class WnosError(Exception):
    """Base class for all toolkit errors."""


# -- abstraction -------------------------------------------------------------

class UnknownElement(WnosError):
    """A path hop or identifier does not resolve against the schema."""


class ArityMismatch(WnosError):
    """An operator received the wrong number of arguments."""


class SchemaMismatch(WnosError):
    """Two expressions reference elements of different schemas."""


class ParseError(WnosError):
    """Syntax error in program text; carries line/column."""

    def __init__(self, message, line=None, col=None):
        self.line = line
        self.col = col
        where = ""
        if line is not None:
            where = f" (line {line}" + (f", col {col}" if col is not None else "") + ")"
        super().__init__(message + where)


class ValidationError(WnosError):
    """Well-formed program text that violates a semantic rule."""


# -- instantiation -----------------------------------------------------------

class NotGlobal(WnosError):
    """A global-only operation was applied to a non-global element."""


class NotLocal(WnosError):
    """A local-only operation was applied to a non-local element."""


class EmptyInstance(WnosError):
    """An instance must have at least one member."""


class ExhaustedResampling(WnosError):
    """No further unique instance exists for the element type."""


class IncompletePool(WnosError):
    """A pool lacks instances required by the requested derivation."""


class ConfigError(WnosError):
    """Invalid instantiation configuration."""


# -- decomposer --------------------------------------------------------------

class MissingInstance(WnosError):
    """The pool lacks an instance for a referenced virtual element."""


class UnsupportedConstraintSense(WnosError):
    """Constraint relation not handled by dualization."""


class NotNormalized(WnosError):
    """Expression is not in sum-of-products form."""


class UnattributableTerm(WnosError):
    """A term mixes decision variables of two protocol layers."""


class NonSeparable(WnosError):
    """A term couples two entities of the same layer directly."""


class NoMatchingInstance(WnosError):
    """A coefficient index set matches no pool instance (internal error)."""


class AmbiguousMatch(WnosError):
    """A coefficient index set matches several pool instances (internal error)."""


# -- algogen -----------------------------------------------------------------

class NoApplicableMethod(WnosError):
    """No solver method applies to the subproblem shape."""


class MissingParameter(WnosError):
    """A solver invocation lacks a registered runtime parameter."""


class NotDifferentiable(WnosError):
    """Gradient-based penalization asked of a non-differentiable utility."""


# -- pps ---------------------------------------------------------------------

class RoleMismatch(WnosError):
    """Program templates do not cover the roles a node plays."""


class StaleRegisters(WnosError):
    """Required register entries exceed the staleness bound."""


# -- netsim / cli ------------------------------------------------------------

class FormatError(WnosError):
    """Malformed scenario file."""


class TopologyError(WnosError):
    """Scenario topology is inconsistent (broken path, bad band index)."""


class IncompatibleProgram(WnosError):
    """Compiled program does not fit the scenario or scheme."""
