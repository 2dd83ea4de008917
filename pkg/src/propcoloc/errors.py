"""Exception hierarchy.

Two families matter to callers: ``InputError`` for malformed or inconsistent
data (CLI exit code 2) and ``DegeneracyError`` for inputs that are valid but
leave a statistic undefined (CLI exit code 3).
"""


class PropColocError(Exception):
    """Base class for all package errors."""


class InputError(PropColocError, ValueError):
    """Malformed, inconsistent or out-of-range input."""


class DegeneracyError(PropColocError, ArithmeticError):
    """A statistic cannot be computed for otherwise valid input."""


class SingularLDError(DegeneracyError):
    """LD matrix is numerically singular."""

    def __init__(self, min_eig: float):
        self.min_eig = min_eig
        super().__init__(
            f"LD matrix is numerically singular (min eigenvalue {min_eig:.3g} <= 1e-08); "
            "prune highly correlated variants (e.g. --prune-r2 0.6) before testing"
        )


class CriterionSingularError(DegeneracyError):
    """Omega(eta) is not positive definite at the evaluation point."""

    def __init__(self, eta: float, detail: str = ""):
        self.eta = eta
        msg = f"GMM weight matrix Omega(eta) is not positive definite at eta={eta!r}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class DegenerateProjectionError(DegeneracyError):
    """Selected trait-2 effects are numerically zero."""

    def __init__(self, detail: str = ""):
        super().__init__(
            "trait-2 effects at the selected lead variants are numerically zero; "
            "the proportionality constant is not identified. Use the LM test to check "
            "for trait signals" + (f" ({detail})" if detail else "")
        )


class LowAcceptanceError(DegeneracyError):
    """Too few Monte-Carlo draws fell inside the selection event."""

    def __init__(self, accepted: int, total: int):
        self.accepted = accepted
        self.total = total
        rate = accepted / total if total else 0.0
        super().__init__(
            f"only {accepted} of {total} Monte-Carlo draws satisfied the selection event "
            f"(acceptance rate {rate:.2e}); need at least 500"
        )
