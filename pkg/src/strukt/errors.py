"""Exception hierarchy shared across the toolkit."""


class StruktError(Exception):
    """Base class for all toolkit errors."""


class FormatError(StruktError, ValueError):
    """A file or document does not follow its declared container format."""


class IntegrityError(StruktError, ValueError):
    """A stored content hash does not match the recomputed one."""


class SpecError(StruktError, ValueError):
    """A criterion, perturbation, or mapping spec is invalid.

    ``problems`` carries the individual validation messages.
    """

    def __init__(self, message, problems=None):
        super().__init__(message)
        self.problems = list(problems or [])


class CompatibilityError(StruktError, ValueError):
    """Inputs are individually valid but cannot be combined."""


class NoObjectiveError(StruktError):
    """The criterion family does not define a scalar objective."""


class DegenerateGraphError(StruktError, ValueError):
    """The affinity graph has a node with zero degree."""


class LineageError(StruktError, ValueError):
    """The digital-object lineage is cyclic or versions regress."""
