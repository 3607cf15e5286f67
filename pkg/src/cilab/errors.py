"""Exception hierarchy.

Three families, matching the CLI exit codes: configuration problems
(exit 3), numerical guards that abort a run before it produces garbage
(exit 4), and certificate failures detected after a computation finished
(exit 2).
"""


class CilabError(Exception):
    pass


class ConfigError(CilabError):
    """Bad or inconsistent configuration.  CLI exit code 3."""


class NyquistViolation(ConfigError):
    """Requested oscillation frequency exceeds what the grid resolves."""


class HierarchyViolation(ConfigError):
    """Lab-mode parameter ordering lam_j < mu < eta < lam_jp1 fails."""


class NumericalGuard(CilabError):
    """A precondition of a numerical routine failed.  CLI exit code 4."""


class MeanNotZero(NumericalGuard):
    pass


class ScaleUnresolved(NumericalGuard):
    pass


class NotSolenoidal(NumericalGuard):
    pass


class SupportViolation(NumericalGuard):
    pass


class NotContractive(NumericalGuard):
    pass


class NoConvergence(NumericalGuard):
    pass


class InverseDefect(NumericalGuard):
    pass


class AmplitudeTooLarge(NumericalGuard):
    pass


class PrimeExhausted(NumericalGuard):
    pass


class OutsideNeighborhood(NumericalGuard):
    pass


class EnergyWindowViolation(NumericalGuard):
    pass


class PlacementOverlap(NumericalGuard):
    pass


class BudgetViolation(NumericalGuard):
    pass


class CertificateFail(CilabError):
    """A computed certificate exceeded its tolerance.  CLI exit code 2."""


class MomentResidual(CertificateFail):
    pass


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, CertificateFail):
        return 2
    if isinstance(exc, ConfigError):
        return 3
    if isinstance(exc, NumericalGuard):
        return 4
    return 1
