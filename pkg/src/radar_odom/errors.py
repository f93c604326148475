"""Exception hierarchy. Everything raised on bad user input derives from ``RadarOdomError``."""


class RadarOdomError(Exception):
    pass


class MalformedFile(RadarOdomError):
    pass


class ValueOutOfRange(RadarOdomError):
    pass


class NonMonotonicTime(RadarOdomError):
    pass


class EmptyWorld(RadarOdomError):
    pass


class InsufficientDoppler(RadarOdomError):
    pass


class InvalidEstimate(RadarOdomError):
    pass


class MotionCountMismatch(RadarOdomError):
    pass


class EmptyMap(RadarOdomError):
    """No NDT cell collected enough weighted points."""


class InsufficientInput(RadarOdomError):
    pass


class NoOverlap(RadarOdomError):
    pass


class TimeAlignmentFailure(RadarOdomError):
    pass


class ConfigError(RadarOdomError):
    pass
