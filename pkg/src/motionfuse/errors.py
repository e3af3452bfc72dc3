"""Exception hierarchy. Library code raises these; only the CLI turns them into exit codes."""


class MotionFuseError(Exception):
    """Base class for every error raised by motionfuse."""


class ConfigError(MotionFuseError):
    pass


class DimensionError(ConfigError):
    pass


class ParseError(MotionFuseError):
    def __init__(self, msg, line=None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line is not None else msg)


class ValidationError(MotionFuseError):
    def __init__(self, msg, line=None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line is not None else msg)


class DomainError(MotionFuseError):
    pass


class DegenerateRayError(DomainError):
    def __init__(self, u, v, frame=None):
        self.u, self.v, self.frame = u, v, frame
        where = f"pixel ({u}, {v})" + (f" of frame {frame}" if frame is not None else "")
        super().__init__(f"degenerate ray at {where}: |d| < 1e-12")


class NonFiniteError(MotionFuseError):
    pass


class TrainingError(MotionFuseError):
    pass


class UndefinedMetricError(MotionFuseError):
    pass


class CheckpointError(MotionFuseError):
    pass
