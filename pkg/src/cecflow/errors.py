class CecflowError(Exception):
    """Base class for all package errors."""


class ValidationError(CecflowError, ValueError):
    pass


class LoopError(CecflowError):
    def __init__(self, stage, message=None):
        self.stage = stage
        super().__init__(message or f"routing loop in stage {stage}")


class InfeasibleError(CecflowError):
    """No finite-cost strategy could be built or the instance cannot be served."""


class SaturationError(InfeasibleError):
    pass


class DeadlockError(CecflowError):
    def __init__(self, app, k, waiting):
        self.app = app
        self.k = k
        self.waiting = waiting
        super().__init__(
            f"broadcast deadlock for app {app} stage {k}; nodes still waiting: {sorted(waiting)}"
        )


class ConvergenceError(CecflowError):
    def __init__(self, message, trajectory=None):
        self.trajectory = trajectory
        super().__init__(message)


class OrderingError(CecflowError):
    """A converged GP run ended above a baseline, which optimality rules out."""
