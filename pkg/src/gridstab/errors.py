"""Exception hierarchy shared by all gridstab stages."""


class GridStabError(Exception):
    """Base class; ``code`` is the machine-readable name used by the CLI."""

    @property
    def code(self) -> str:
        return type(self).__name__


class InvalidGrid(GridStabError, ValueError):
    pass


class DisconnectedGrid(GridStabError):
    pass


class NoSteadyState(GridStabError):
    pass


class InfeasibleRatio(GridStabError, ValueError):
    pass


class ZeroLength(GridStabError, ValueError):
    pass


class EnsembleExhausted(GridStabError):
    pass


class IntegratorFailure(GridStabError):
    pass


class DegenerateData(GridStabError, ValueError):
    pass


class MissingFeature(GridStabError, KeyError):
    pass


class NoPositives(GridStabError, ValueError):
    pass


class OneClassOnly(GridStabError, ValueError):
    pass


class DegenerateFold(GridStabError):
    pass


class SchemaMismatch(GridStabError):
    pass


class MissingInput(GridStabError, FileNotFoundError):
    pass


class ConfigError(GridStabError, ValueError):
    pass
