"""Exception types raised across the package."""


class HeraldSimError(Exception):
    """Base class for all package errors."""


# squeezed-state statistics
class AllModesEmpty(HeraldSimError, ValueError):
    pass


class InvalidSchmidtNumber(HeraldSimError, ValueError):
    pass


class ZeroMeanPhoton(HeraldSimError, ValueError):
    pass


class ZeroHeraldEfficiency(HeraldSimError, ValueError):
    pass


class NonpositivePower(HeraldSimError, ValueError):
    pass


# joint spectra
class GridTooCoarse(HeraldSimError, ValueError):
    pass


class GridSpanTooSmall(HeraldSimError, ValueError):
    pass


class WrongKind(HeraldSimError, ValueError):
    pass


class DegenerateGrid(HeraldSimError, ValueError):
    pass


class NegativeIntensity(HeraldSimError, ValueError):
    pass


class UnnormalizedGrid(HeraldSimError, ValueError):
    pass


# classical circuit
class NoFringesDetected(HeraldSimError, ValueError):
    pass


class ContrastOutOfRange(HeraldSimError, ValueError):
    pass


class AxisMismatch(HeraldSimError, ValueError):
    pass


class ZeroTotalPower(HeraldSimError, ValueError):
    pass


# tag streams
class IoFailure(HeraldSimError, OSError):
    pass


class BadMagic(IoFailure):
    pass


class VersionUnsupported(IoFailure):
    pass


class TruncatedRecord(IoFailure):
    def __init__(self, offset, message=None):
        self.offset = offset
        super().__init__(message or f"truncated record at byte offset {offset}")


# coincidence analysis
class UnsortedStream(HeraldSimError, ValueError):
    pass


class InsufficientSidePeaks(HeraldSimError, ValueError):
    pass


class NoLaserChannel(HeraldSimError, ValueError):
    pass


class NoHeraldChannel(HeraldSimError, ValueError):
    pass


class SubPoissonianInput(HeraldSimError, ValueError):
    pass


class OutOfRange(HeraldSimError, ValueError):
    pass


class NoCoincidences(HeraldSimError, ValueError):
    pass


# configuration
class ConfigError(HeraldSimError, ValueError):
    """Bad configuration file or value; ``path`` and ``field`` locate it."""

    def __init__(self, message, path=None, field=None):
        self.path = path
        self.field = field
        where = ""
        if path is not None:
            where += f"{path}: "
        if field is not None:
            where += f"[{field}] "
        super().__init__(where + message)
