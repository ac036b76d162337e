"""Exception hierarchy; ``exit_code`` drives the CLI exit status."""


class PairDiffError(Exception):
    exit_code = 3


class DataError(PairDiffError, ValueError):
    """Malformed or inconsistent input data."""

    exit_code = 2


class NumericalError(PairDiffError, RuntimeError):
    exit_code = 3


class NoActivePairsError(NumericalError):
    def __init__(self, msg="no active pairs: the kernel window contains no pair "
                           "of observations; increase the bandwidth h"):
        super().__init__(msg)


class InsufficientPairsError(NumericalError):
    pass


class EmptySmoothingWindowError(NumericalError):
    pass


class DegenerateKnotsError(NumericalError):
    pass
