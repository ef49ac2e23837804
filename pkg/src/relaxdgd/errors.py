"""Exception types raised across the package."""


class RelaxDGDError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(RelaxDGDError, ValueError):
    pass


# topology
class InvalidSize(RelaxDGDError, ValueError):
    pass


class DisconnectedGraph(RelaxDGDError, ValueError):
    pass


class NotComplete(RelaxDGDError, ValueError):
    pass


class NumericalFailure(RelaxDGDError, ArithmeticError):
    pass


# dataio
class MalformedLine(RelaxDGDError, ValueError):
    def __init__(self, line_no, reason=""):
        self.line_no = line_no
        self.reason = reason
        msg = f"malformed LIBSVM line {line_no}"
        if reason:
            msg += f": {reason}"
        super().__init__(msg)


class EmptyDataset(RelaxDGDError, ValueError):
    pass


class TooManyAgents(RelaxDGDError, ValueError):
    pass


# objectives
class NoConvergence(RelaxDGDError, ArithmeticError):
    def __init__(self, max_iter, detail=""):
        self.max_iter = max_iter
        super().__init__(f"no convergence within {max_iter} iterations" + (f" ({detail})" if detail else ""))


class BudgetExceeded(RelaxDGDError, ValueError):
    pass


class DegenerateInput(RelaxDGDError, ValueError):
    pass


# stepsize
class NonPositiveL0(RelaxDGDError, ValueError):
    pass


class InvalidStats(RelaxDGDError, ValueError):
    pass


class InvalidRule(RelaxDGDError, ValueError):
    pass


# engine
class NonFiniteIterate(RelaxDGDError, ArithmeticError):
    def __init__(self, k, agent):
        self.k = k
        self.agent = agent
        super().__init__(f"non-finite iterate at k={k}, agent={agent}")


class NotConvex(RelaxDGDError, ValueError):
    pass


# analysis
class WrongRule(RelaxDGDError, ValueError):
    pass


class MissingOptimum(RelaxDGDError, ValueError):
    pass


class InsufficientEnsemble(RelaxDGDError, ValueError):
    pass


class TooFewSamples(RelaxDGDError, ValueError):
    pass


class NotApplicable(RelaxDGDError, ValueError):
    pass


# cli
class ConfigError(RelaxDGDError, ValueError):
    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)
