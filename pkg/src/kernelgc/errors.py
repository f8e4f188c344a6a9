"""Exception hierarchy shared by the estimation, testing and simulation code."""


class KernelGCError(Exception):
    """Base class for all package errors."""


class ParameterError(KernelGCError, ValueError):
    """An argument is outside its documented domain."""


class DataError(KernelGCError):
    """Input data could not be parsed or is structurally invalid."""


class NumericalError(KernelGCError):
    """A computation produced a non-finite or ill-posed result."""


class KernelOverflowError(NumericalError):
    def __init__(self, magnitude):
        self.magnitude = float(magnitude)
        super().__init__(
            f"kernel evaluation overflowed (largest input magnitude {self.magnitude:.6g})"
        )


class DegenerateChannelError(NumericalError):
    def __init__(self, channel, what="zero-lag kernel moment"):
        self.channel = channel
        super().__init__(f"channel {channel!r} is degenerate: {what} is not positive")


class IllConditionedError(NumericalError):
    def __init__(self, condition, cap):
        self.condition = float(condition)
        self.cap = float(cap)
        super().__init__(
            f"Yule-Walker Gram matrix is ill-conditioned (cond={self.condition:.3e} > cap={self.cap:.1e})"
        )


class NonUniqueSolutionError(NumericalError):
    """Total least squares has no unique solution (degenerate singular gap)."""


class DivergenceError(NumericalError):
    def __init__(self, index, value):
        self.index = int(index)
        self.value = float(value)
        super().__init__(f"trajectory diverged at sample {self.index} (|x| = {abs(self.value):.3g})")
