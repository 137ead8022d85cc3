"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument is outside the mathematical domain of an operation."""


class ContractError(ValueError):
    """A caller violated a structural contract (arity, shape, config key)."""


class SamplerStallError(RuntimeError):
    """A rejection sampler exhausted its trial budget.

    Carries enough context to diagnose the stall (should only be reachable
    through a bug: the gamma envelope accepts >= 95% of proposals).
    """

    def __init__(self, shape, log_m, trials):
        self.shape = shape
        self.log_m = log_m
        self.trials = trials
        super().__init__(
            f"rejection sampler stalled after {trials} trials "
            f"(effective shape {shape}, log_M {log_m})"
        )


class OptimizerAbortError(RuntimeError):
    """The optimization loop hit repeated estimator failures.

    `trace` holds the TraceRecords accumulated before the abort and
    `theta` the last valid parameter vector.
    """

    def __init__(self, message, theta, trace):
        self.theta = theta
        self.trace = trace
        super().__init__(message)
