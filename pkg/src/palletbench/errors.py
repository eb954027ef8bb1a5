"""Exception hierarchy shared by all palletbench modules."""

from __future__ import annotations


class PalletbenchError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(PalletbenchError):
    """Invalid schema XML or parameter JSON."""

    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class MalformedXML(ConfigError):
    pass


class MissingElement(ConfigError):
    pass


class InvalidValue(ConfigError):
    pass


class UnknownPackageId(ConfigError):
    def __init__(self, package_id: str, path: str = ""):
        self.package_id = package_id
        super().__init__(f"unknown package id {package_id!r}", path)


class OverlappingPlacements(ConfigError):
    def __init__(self, first: int, second: int, area_mm2: float, path: str = ""):
        self.pair = (first, second)
        self.area_mm2 = area_mm2
        super().__init__(
            f"placements {first} and {second} overlap by {area_mm2:.3f} mm^2", path
        )


class FootprintExceeded(ConfigError):
    pass


class MalformedJSON(ConfigError):
    pass


class MissingSchema(ConfigError):
    pass


class OutOfRange(ConfigError):
    def __init__(self, field: str, lo: float, hi: float, value=None):
        self.field = field
        self.lo = lo
        self.hi = hi
        self.value = value
        super().__init__(f"{field}={value!r} outside allowed range [{lo}, {hi}]")


class InvalidParams(ConfigError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(v.message for v in self.violations))


class EmptyRange(ConfigError):
    pass


class FatalNumeric(PalletbenchError):
    """A body (or cloth vertex) reached a non-finite state."""

    def __init__(self, what: str):
        self.what = what
        super().__init__(f"non-finite state in {what}")


class IntegrityFailure(PalletbenchError):
    def __init__(self, report):
        self.report = report
        super().__init__("scene integrity check failed: " + ", ".join(str(i) for i in report.issues))


class NotSettled(PalletbenchError):
    """The unit never came to rest within max_duration."""


class TraceOrderError(PalletbenchError):
    pass
