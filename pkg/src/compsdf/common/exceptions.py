class ComputationError(RuntimeError):
    """Numerical failure during a pipeline step (as opposed to invalid input)."""


class FieldError(ComputationError):
    """Non-finite values inside the implicit field."""

    def __init__(self, message: str, layer: str | None = None):
        super().__init__(message)
        self.layer = layer


class TrainingError(ComputationError):
    """Optimization could not continue."""

    def __init__(self, message: str, dump_path: str | None = None):
        super().__init__(message)
        self.dump_path = dump_path


class MeshingError(ComputationError):
    pass
