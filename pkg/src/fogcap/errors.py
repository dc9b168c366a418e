"""Exception hierarchy shared by all fogcap modules."""


class FogcapError(Exception):
    pass


class ParameterError(FogcapError, ValueError):
    """A model or scenario was built with invalid parameters."""


class DomainError(FogcapError, ValueError):
    """An argument lies outside the operation's domain (e.g. alpha > C)."""


class ValidityError(DomainError):
    """The G/D/1 estimate was requested where service < mean input."""


class ModelError(FogcapError, ValueError):
    """The workload statistics are inconsistent (e.g. non-positive variance sums)."""


class TraceParseError(FogcapError, ValueError):
    def __init__(self, path, lineno, message):
        self.path = path
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {message}")


class EmptyTraceError(FogcapError, ValueError):
    pass
