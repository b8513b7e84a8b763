"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """A caller broke an input precondition (shape, range, missing state)."""


class IdentifiabilityError(ContractViolation):
    """The log does not excite the parameters being fitted."""


class SimulationFault(RuntimeError):
    """The plant integrator produced a non-finite state."""


class TrainingDiverged(RuntimeError):
    """Training loss became non-finite."""
