"""Exception hierarchy shared by all kslab modules."""


class KslabError(Exception):
    """Base class for every error raised by kslab."""


class GridMismatch(KslabError):
    """Two objects live on different grids."""


class GridIncompatible(KslabError):
    """A phase grid does not match the momentum grid of a Planck scale."""


class UnsupportedSpec(KslabError):
    """A norm specification outside the supported family."""


class UnsupportedOrder(KslabError):
    """A derivative order that is not implemented."""


class NegativeDensity(KslabError):
    """A density that should be nonnegative is not."""


class NegativeInput(NegativeDensity):
    """Negative symbol handed to a positivity preserving quantization."""


class BlowupDetected(KslabError):
    """The sup norm of the solution jumped by more than a factor 10 in one step."""


class OutOfDomain(KslabError):
    """A trajectory left the velocity window of the grid."""


class MarginalMismatch(KslabError):
    """A coupling does not have the declared marginals."""


class MassMismatch(KslabError):
    """Two measures that must have equal mass do not."""


class NonConvergence(KslabError):
    """An iterative solver hit its iteration cap."""


class HistoryGap(KslabError):
    """A recorded history is sampled more coarsely than the time step."""


class CouplingDegenerate(KslabError):
    """An operator valued coupling lost positivity."""


class DegenerateSweep(KslabError):
    """A rate fit cannot be performed on the given points."""


class InsufficientSweep(DegenerateSweep):
    """Fewer than four hbar values, or a span below a factor 8."""


class EmptySeries(KslabError):
    """Nothing to plot."""


class ConfigError(KslabError):
    """One or more configuration problems.

    Parameters
    ----------
    issues : list of ConfigIssue
        Every problem found, in line order.
    """

    def __init__(self, issues):
        self.issues = list(issues)
        super().__init__("\n".join(str(i) for i in self.issues))


class ConfigIssue:
    """A single configuration problem with its line number (0 if global)."""

    kind = "ConfigIssue"

    def __init__(self, line, message):
        self.line = line
        self.message = message

    def __str__(self):
        where = f"line {self.line}" if self.line else "config"
        return f"{self.kind} ({where}): {self.message}"

    def __repr__(self):
        return f"{type(self).__name__}({self.line!r}, {self.message!r})"


class UnknownKey(ConfigIssue):
    kind = "UnknownKey"


class ConfigTypeError(ConfigIssue):
    kind = "TypeError"


class CompatibilityError(ConfigIssue):
    kind = "CompatibilityError"


class MissingKey(ConfigIssue):
    kind = "MissingKey"
