class NetQosError(Exception):
    """Base class for all errors raised by this package."""


class MissingFile(NetQosError):
    pass


class MalformedRow(NetQosError):
    def __init__(self, file, line, detail=""):
        self.file = str(file)
        self.line = line
        super().__init__(f"{self.file}:{line}: malformed row{': ' + detail if detail else ''}")


class InvariantViolation(NetQosError):
    pass


class ConfigInvalid(NetQosError):
    pass


class LengthMismatch(NetQosError):
    pass


class DegenerateSeries(NetQosError):
    pass


class EmptyTrace(NetQosError):
    pass


class KTooLarge(NetQosError):
    pass


class InsufficientHistory(NetQosError):
    pass


class UnknownCell(NetQosError):
    pass


class NoQosSamples(NetQosError):
    pass


class EmptyInput(NetQosError):
    pass


class TooFewExamples(NetQosError):
    pass


class ShapeMismatch(NetQosError):
    pass


class EmptyTrainSet(NetQosError):
    pass


class BadHyper(NetQosError):
    pass


class KindUnsupported(NetQosError):
    pass


class ConfigMismatch(NetQosError):
    pass
