"""Exception types shared across the attack engine and oracles."""


class CorrAttackError(Exception):
    pass


class BudgetExhaustedError(CorrAttackError):
    """Raised when a query would exceed the installed budget.

    Carries the number of queries actually consumed so far.
    """

    def __init__(self, queries_used):
        super().__init__(f"query budget exhausted after {queries_used} queries")
        self.queries_used = queries_used


class OracleUnavailableError(CorrAttackError):
    """Remote oracle could not be reached after retries."""


class ProtocolError(CorrAttackError):
    """Remote oracle returned a malformed or unexpected response."""


class NumericalFailureError(CorrAttackError):
    """Dense factorization failed even after jitter escalation."""


class ConfigError(CorrAttackError):
    """Invalid configuration file or flag combination."""
