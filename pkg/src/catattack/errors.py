class CatAttackError(Exception):
    pass


class InvalidImageError(CatAttackError, ValueError):
    """Image has the wrong shape, stride alignment or value range."""


class NumericalBlowupError(CatAttackError, FloatingPointError):
    pass


class EmptyTargetSetError(CatAttackError, ValueError):
    pass


class DegenerateBoundaryError(CatAttackError, ArithmeticError):
    """The approximated boundary normal vanished (all label terms cancelled)."""


class UndefinedMetricError(CatAttackError, ZeroDivisionError):
    pass


class TrainingDivergedError(CatAttackError, RuntimeError):
    pass


class ModelFormatError(CatAttackError, ValueError):
    pass
