"""Exception hierarchy shared by every module."""


class RadarFsError(Exception):
    """Base class."""


class ConfigError(RadarFsError):
    """Invalid or inconsistent configuration (CLI exit code 2)."""


class VolumeFull(RadarFsError):
    pass


class DoubleAllocate(RadarFsError):
    pass


class CorruptChain(RadarFsError):
    pass


class InapplicableStrategy(RadarFsError):
    """Strategy cannot run on the given workload (CLI exit code 3)."""


class NoApplicableStrategy(RadarFsError):
    pass


class ConsistencyViolation(RadarFsError):
    """Volume failed verification after a run (CLI exit code 4)."""

    def __init__(self, violations, dump=None):
        super().__init__("; ".join(violations))
        self.violations = list(violations)
        self.dump = dump


class EncodingError(RadarFsError):
    pass
