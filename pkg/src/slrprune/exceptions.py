"""Exception types shared across the package."""


class NonFiniteError(ArithmeticError):
    """A loss, gradient or iterate became NaN or infinite."""


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


class InfeasibleError(ValueError):
    """A duplicate variable violates its cardinality budget.

    The indicator term of the augmented Lagrangian is infinite in this case,
    so no finite value can be returned.
    """


class IdxFormatError(ValueError):
    """Malformed IDX file."""


class CheckpointError(ValueError):
    """Malformed SLRCKPT1 checkpoint."""


class ConfigError(ValueError):
    """Invalid run configuration.

    Attributes:
        field: dotted name of the offending field, e.g. ``"slr.M"``.
    """

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
