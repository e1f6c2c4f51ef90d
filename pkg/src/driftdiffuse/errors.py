"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """A parameter or config file violates a documented constraint."""


class NonConvergenceError(RuntimeError):
    """The implicit solver failed to reach tolerance within max iterations."""

    def __init__(self, step, residual, iterations):
        self.step = step
        self.residual = residual
        self.iterations = iterations
        super().__init__(
            f"implicit step did not converge at step {step}: "
            f"residual {residual:.3e} after {iterations} iterations"
        )


class EnsembleAbortError(RuntimeError):
    """Too many paths failed to converge; the time step is too large."""
