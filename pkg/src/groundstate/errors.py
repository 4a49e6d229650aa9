class SolverError(RuntimeError):
    """A numerical solve failed; carries where it failed for diagnostics."""

    def __init__(self, message: str, *, level: int | None = None, iteration: int | None = None, **info):
        super().__init__(message)
        self.level = level
        self.iteration = iteration
        self.info = info

    def where(self) -> str:
        parts = []
        if self.level is not None:
            parts.append(f"level {self.level}")
        if self.iteration is not None:
            parts.append(f"iteration {self.iteration}")
        return ", ".join(parts) or "unknown location"


class PreconditionError(ValueError):
    """Inputs violate a documented precondition of an operation."""
