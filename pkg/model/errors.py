from __future__ import annotations


class LabError(Exception):
    """Base for every typed failure raised by the laboratory."""


class LawInvalid(LabError):
    pass


class NonIntegrable(LabError):
    pass


class CascadeStall(LabError):
    pass


class PathExplosion(LabError):
    pass


class BudgetExceeded(LabError):
    pass


class GridTooShort(LabError):
    pass


class GridMismatch(LabError):
    pass


class NonCommensurableGrid(LabError):
    pass


class OverflowRisk(LabError):
    pass


class RangeEmpty(LabError):
    pass


class EnvelopeDiverges(LabError):
    pass


class NoisyTail(LabError):
    """Residual never rises above the noise floor; ``gamma_hat`` is still usable."""

    def __init__(self, message: str, gamma_hat: float):
        super().__init__(message)
        self.gamma_hat = gamma_hat


class HypothesisUnmet(LabError):
    pass


class GammaNonpositive(LabError):
    pass


class DomainError(LabError, ValueError):
    pass


class HorizonTooShort(LabError):
    pass


class ConfigInvalid(LabError):
    def __init__(self, message: str, path: str = "", offset: int | None = None):
        where = []
        if path:
            where.append(f"field {path}")
        if offset is not None:
            where.append(f"byte offset {offset}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.reason = message
        self.path = path
        self.offset = offset


class IoError(LabError, OSError):
    pass
