"""Exception hierarchy shared by all ecgraph modules."""


class EcgraphError(Exception):
    """Base class for every error raised by this package."""


class ShapeMismatch(EcgraphError, ValueError):
    pass
