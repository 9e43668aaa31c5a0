"""Exception types shared across the toolkit."""


class SecurectlError(Exception):
    """Base class for all toolkit errors."""


class DefectiveToleranceError(SecurectlError):
    """Computed invariant-subspace bases fail to span the state space."""


class RankDeficientError(SecurectlError):
    """A stacked basis matrix is singular at the working tolerance."""


class WindowTooShortError(SecurectlError):
    """The input-output window holds fewer output samples than states."""


class NoPlausibleStateError(SecurectlError):
    """No state is consistent with the data under the attack budget."""


class EmptySubspaceError(SecurectlError):
    """A subspace has no substate passing the vote threshold."""


class AssumptionViolatedError(SecurectlError):
    """A majority winner has too few votes to be trusted."""


class EmptySetError(SecurectlError):
    """An operation requires a nonempty plausible set."""


class GenerationRetryExceeded(SecurectlError):
    """Random system generation failed to meet its targets after resampling."""


class ScenarioFormatError(SecurectlError):
    """A scenario or data file does not match the documented schema."""


class FilterStepError(SecurectlError):
    """A closed-loop filter step failed (infeasible program or no plausible state)."""

    def __init__(self, step: int, reason: str):
        super().__init__(f"step {step}: {reason}")
        self.step = step
        self.reason = reason
