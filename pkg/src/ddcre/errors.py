"""Exception hierarchy shared by all modules."""


class DDCREError(Exception):
    """Base class of every error raised by the package."""


class InvalidParameter(DDCREError, ValueError):
    pass


class SingularGeometry(DDCREError):
    pass


class InvalidPartition(DDCREError):
    pass


class RankDeficiency(DDCREError):
    pass


class AssemblyBug(DDCREError):
    """Kernel of a local operator larger than the rigid-body space."""


class FredholmViolation(DDCREError):
    """Right-hand side not balanced with respect to the local kernel."""


class GeometryBug(DDCREError):
    pass


class EETFailure(DDCREError):
    """A star-patch system could not be satisfied."""

    def __init__(self, msg, patch=None):
        super().__init__(msg if patch is None else f"{msg} (patch node {patch})")
        self.patch = patch


class InvalidReference(DDCREError):
    pass


class NonConvergence(DDCREError):
    def __init__(self, msg, history=None, state=None):
        super().__init__(msg)
        self.history = list(history or [])
        self.state = state


class ConfigError(DDCREError):
    pass


class AdmissibilityViolation(DDCREError):
    pass
