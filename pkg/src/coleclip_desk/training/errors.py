"""Exceptions raised while training a task."""


class TrainingError(Exception):
    """Base exception for training errors."""

    pass


class EmptyTaskError(TrainingError):
    """Raised when an energy score is requested over an empty class set."""

    pass


class ContractViolation(TrainingError):
    """Raised when a loss is requested for labels outside the local class space."""

    pass


class DivergenceError(TrainingError):
    """Raised when the loss becomes NaN or infinite."""

    def __init__(self, message: str, iteration: int, task_index: int = 0):
        super().__init__(f"{message} (task {task_index}, iteration {iteration})")
        self.iteration = iteration
        self.task_index = task_index
