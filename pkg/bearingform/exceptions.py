from typing import Optional


class ScenarioError(ValueError):
    pass


class GraphValidationError(ScenarioError):
    pass


class NormalizationError(ScenarioError):
    pass


class ConfigurationError(ScenarioError):
    pass


class SimulationAbort(RuntimeError):
    def __init__(self, message: str, t: Optional[float] = None):
        self.t = t
        if t is not None:
            message = f"t={t:.6f}s: {message}"
        super().__init__(message)


class DegenerateBearingError(SimulationAbort):
    pass


class ConditioningError(SimulationAbort):
    pass


class NonFiniteStateError(SimulationAbort):
    pass


class StaleDataError(SimulationAbort):
    pass


exit_codes = {
    ScenarioError: 1,
    SimulationAbort: 2,
}


def exit_code_for(exc: BaseException) -> int:
    for cls, code in exit_codes.items():
        if isinstance(exc, cls):
            return code
    raise exc
