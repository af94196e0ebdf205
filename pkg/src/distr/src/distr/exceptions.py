class DistrError(Exception):
    """Base class for errors raised by the distr package."""


class ShapeError(DistrError, ValueError):
    pass


class UnsupportedPrimitiveError(DistrError, TypeError):
    pass


class NonFiniteError(DistrError, FloatingPointError):
    pass


class ConfigError(DistrError, ValueError):
    def __init__(self, message: str, diagnostics: list[str] | None = None) -> None:
        super().__init__(message)
        self.diagnostics = diagnostics or [message]

    def __reduce__(self):
        return type(self), (str(self), self.diagnostics)


class IncompleteDataError(DistrError, ValueError):
    pass


class StageError(DistrError, RuntimeError):
    """A pipeline stage failed; carries the stage name for the CLI exit message."""

    def __init__(self, stage: str, task_id: int, message: str) -> None:
        super().__init__(f"stage '{stage}' failed on task {task_id}: {message}")
        self.stage = stage
        self.task_id = task_id
        self.message = message

    def __reduce__(self):
        return type(self), (self.stage, self.task_id, self.message)
