"""Exception types raised across the package."""


class FairskinError(Exception):
    """Base class for all package errors."""


class EmptySkinRegion(FairskinError):
    """The lesion mask covers every pixel, so no skin is left to measure."""


class BadDistribution(FairskinError, ValueError):
    pass


class MissingCounterpart(FairskinError):
    pass


class BadConfig(FairskinError, ValueError):
    pass


class ShapeMismatch(FairskinError, ValueError):
    pass


class DegenerateBatch(FairskinError, ValueError):
    pass


class EmptyModel(FairskinError, ValueError):
    pass


class EmptyGroup(FairskinError):
    def __init__(self, groups):
        self.groups = list(groups)
        super().__init__(f"empty group(s) in meta set: {self.groups}")


class InsufficientGroupData(FairskinError):
    def __init__(self, group, stratum):
        self.group = group
        self.stratum = stratum
        super().__init__(f"group {group!r} has no {stratum} instances")


class SingleClass(FairskinError, ValueError):
    """ROC analysis needs both positive and negative labels."""


class BadClass(FairskinError, ValueError):
    pass


class ParseError(FairskinError):
    def __init__(self, line, message):
        self.line = line
        super().__init__(f"line {line}: {message}")


class MissingFile(FairskinError):
    def __init__(self, paths):
        self.paths = [str(p) for p in paths]
        super().__init__("missing file(s): " + ", ".join(self.paths))
