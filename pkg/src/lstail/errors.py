"""Exception hierarchy. Every error is a ``ValueError`` so callers that only
care about bad input can catch that."""


class LstError(ValueError):
    pass


class StructuralError(LstError):
    """Ids that do not line up (dangling image, unknown category, ...)."""


class DimensionError(LstError):
    pass


class ParseError(LstError):
    def __init__(self, path: str, message: str = "missing required key"):
        super().__init__(f"{path}: {message}")
        self.path = path


class RangeError(LstError):
    pass


class DegeneratePhaseError(LstError):
    pass


class MaterializationError(LstError):
    pass


class DegenerateNormError(LstError):
    pass


class LabelError(LstError):
    pass


class ExpansionError(LstError):
    pass


class SupportError(LstError):
    pass


class CoverageError(LstError):
    pass


class ScopeError(LstError):
    pass


class ConfigError(LstError):
    pass
