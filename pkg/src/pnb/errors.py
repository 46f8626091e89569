"""Exception hierarchy shared across the harness."""


class PnbError(Exception):
    """Base class for all harness errors."""


class CorpusError(PnbError):
    pass


class MalformedLine(CorpusError):
    def __init__(self, line: str, lineno: int | None = None, reason: str = "unparseable"):
        where = f" (line {lineno})" if lineno is not None else ""
        super().__init__(f"malformed annotation{where}: {reason}: {line!r}")
        self.line = line
        self.lineno = lineno


class SpanOutOfBounds(CorpusError):
    pass


class SurfaceMismatch(CorpusError):
    pass


class EmptyCorpus(CorpusError):
    pass


class PromptError(PnbError):
    pass


class MissingExample(PromptError):
    pass


class EmptyInput(PromptError):
    pass


class EmptyTrainingSet(PnbError):
    pass


class LlmError(PnbError):
    pass


class CacheMissInReplayMode(LlmError):
    pass


class EndpointError(LlmError):
    pass


class AuthMissing(LlmError):
    pass


class DocMismatch(PnbError):
    pass


class SchemaError(PnbError):
    def __init__(self, message: str, lineno: int | None = None):
        prefix = f"line {lineno}: " if lineno is not None else ""
        super().__init__(prefix + message)
        self.lineno = lineno


class ConfigError(PnbError):
    pass
