"""Exception hierarchy shared by every module of the package."""


class NWIError(Exception):
    """Base class for all package errors."""


class InvalidInput(NWIError, ValueError):
    pass


class GridTooSmall(InvalidInput):
    pass


class ShapeMismatch(InvalidInput):
    pass


class IndexOutOfGrid(InvalidInput):
    pass


class CflViolation(NWIError):
    """Courant number above 1; the caller must shrink ``dt``."""

    def __init__(self, cr, max_dt=None, iterate=None):
        self.cr = float(cr)
        self.max_dt = max_dt
        self.iterate = iterate
        msg = f"CFL violated: C_r = {self.cr:.6g} > 1"
        if max_dt is not None:
            msg += f" (suggested max dt = {max_dt:.6g} s)"
        super().__init__(msg)

    def __reduce__(self):
        return type(self), (self.cr, self.max_dt, self.iterate)


class PmlTooWide(InvalidInput):
    pass


class StepError(NWIError):
    """Failure inside a time step; ``step`` is filled in by the driver loop."""

    def __init__(self, message, step=None):
        self.step = step
        self.message = message
        super().__init__(self._fmt())

    def _fmt(self):
        if self.step is None:
            return self.message
        return f"{self.message} (at time step {self.step})"

    def __reduce__(self):
        return type(self), (self.message, self.step)

    def at_step(self, step):
        self.step = step
        self.args = (self._fmt(),)
        return self


class NonlinearityBlowup(StepError):
    pass


class FieldDiverged(StepError):
    pass


class NyquistViolation(InvalidInput):
    pass


class TapeMemoryExceeded(NWIError):
    pass


class ProblemTooLarge(NWIError):
    pass


class SingularBlock(NWIError):
    pass


class ApertureOutOfArray(InvalidInput):
    pass


class ZeroSignal(InvalidInput):
    pass


class NonFiniteGradient(NWIError):
    pass


class InvalidGeometry(InvalidInput):
    pass


class DegenerateBounds(InvalidInput):
    pass


class MissingMap(NWIError):
    def __init__(self, prop, path):
        self.prop = prop
        self.path = path
        super().__init__(f"missing map for property '{prop}': {path}")

    def __reduce__(self):
        return type(self), (self.prop, self.path)


class WorkerFailure(NWIError):
    def __init__(self, worker, cause):
        self.worker = worker
        self.cause = cause
        super().__init__(f"worker {worker} failed: {cause!r}")

    def __reduce__(self):
        return type(self), (self.worker, self.cause)


class BudgetExceeded(NWIError):
    pass


class ConfigError(NWIError):
    """Invalid configuration value; ``key`` is the dotted path."""

    def __init__(self, key, message):
        self.key = key
        self.message = message
        super().__init__(f"{key}: {message}")

    def __reduce__(self):
        return type(self), (self.key, self.message)


class IoError(NWIError, OSError):
    """Reading or writing a map, channel file or manifest failed."""
