"""Exception types raised across the planning and simulation stack."""


class FieldNavError(Exception):
    """Base class for all library errors."""


class OutOfBounds(FieldNavError, ValueError):
    def __init__(self, point):
        super().__init__(f"point {tuple(point)} outside terrain grid")
        self.point = tuple(point)


class UntraversableWaypoint(FieldNavError):
    def __init__(self, index, point=None):
        msg = f"waypoint {index} is not traversable"
        if point is not None:
            msg += f" at {tuple(point)}"
        super().__init__(msg)
        self.index = index


class SamplingExhausted(FieldNavError):
    pass


class NoPath(FieldNavError):
    def __init__(self, a, b):
        super().__init__(f"no path from node {a} to node {b}")
        self.a = a
        self.b = b


class Disconnected(FieldNavError):
    pass


class MissingCachedPath(FieldNavError):
    pass


class PathExhausted(FieldNavError):
    pass


class EmptyActionSet(FieldNavError):
    pass


class ConfigInvalid(FieldNavError, ValueError):
    pass
