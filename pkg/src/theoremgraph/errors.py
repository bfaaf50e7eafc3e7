"""Exception hierarchy shared by every module."""


class ReasoningError(Exception):
    """Base class for all errors raised by theoremgraph."""


# graph / embeddings
class EmptyConditions(ReasoningError, ValueError):
    pass


class DimensionMismatch(ReasoningError, ValueError):
    pass


class NonUnitEmbedding(ReasoningError, ValueError):
    pass


class EmptyText(ReasoningError, ValueError):
    pass


class EmptyPremises(ReasoningError, ValueError):
    pass


class UnknownPremise(ReasoningError, KeyError):
    pass


class PremiseIsTheorem(ReasoningError, ValueError):
    pass


class InvalidGraph(ReasoningError, ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations) or "invalid graph")


# encoder
class EmptyGraph(ReasoningError, ValueError):
    pass


class ZeroNorm(ReasoningError, ArithmeticError):
    pass


class TapeMismatch(ReasoningError, ValueError):
    pass


class CheckpointError(ReasoningError, ValueError):
    pass


# matcher
class EmptyLibrary(ReasoningError, ValueError):
    pass


class NoEligibleNodes(ReasoningError, ValueError):
    pass


# trainer
class NonPositiveTemperature(ReasoningError, ValueError):
    pass


class UnknownTheoremId(ReasoningError, KeyError):
    pass


class DanglingPremiseRef(ReasoningError, IndexError):
    pass


class EmptyDataset(ReasoningError, ValueError):
    pass


class NumericFailure(ReasoningError, ArithmeticError):
    """Training produced a non-finite loss or gradient."""


# backends
class RemoteUnavailable(ReasoningError, ConnectionError):
    pass


class ScriptExhausted(ReasoningError, LookupError):
    pass


class EmptyResponse(ReasoningError, ValueError):
    pass


class PromptTooLong(ReasoningError, ValueError):
    pass


# engine
class TraceCorrupt(ReasoningError, ValueError):
    pass


# data
class ParseError(ReasoningError, ValueError):
    def __init__(self, line, message):
        self.line = line
        super().__init__(f"line {line}: {message}")


class SchemaViolation(ReasoningError, ValueError):
    def __init__(self, line, field, message):
        self.line = line
        self.field = field
        super().__init__(f"line {line}: field {field!r}: {message}")


class TooFewSamples(ReasoningError, ValueError):
    pass


# eval
class UnparseableNumeric(ReasoningError, ValueError):
    pass


class ResponseTooLong(ReasoningError, ValueError):
    pass
