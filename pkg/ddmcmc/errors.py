# Copyright 2024-2025 The DD-MCMC Authors. All rights reserved.
"""Exception types raised across the package.

Every error derives from `DDMCMCError` and from the closest builtin, so
callers can catch either the package-wide base or the generic Python class.
"""

__all__ = [
    'DDMCMCError', 'NonPositivePermeability', 'SingularSystem',
    'SensorOffGrid', 'EdgeOffGrid', 'Unsupported', 'RootBracketFailure',
    'TruncationOverflow', 'PointOutsideDomain', 'QuadratureGridMismatch',
    'BasisMismatch', 'EmptySampleSet', 'FactorizationFailure',
    'LengthMismatch', 'InitOutsideSupport', 'SensorOutsideDomain',
    'MissingInterfaceModel', 'MissingArtifact', 'ConfigError', 'ChainFailure'
]


class DDMCMCError(Exception):
    pass


# mesh / fem
class NonPositivePermeability(DDMCMCError, ValueError):

    def __init__(self, point, value):
        self.point = tuple(float(p) for p in point)
        self.value = float(value)
        super().__init__(
            f"permeability {self.value:.3e} is not positive at {self.point}")


class SingularSystem(DDMCMCError, RuntimeError):
    pass


class SensorOffGrid(DDMCMCError, ValueError):

    def __init__(self, sensor):
        self.sensor = tuple(float(s) for s in sensor)
        super().__init__(f"sensor {self.sensor} is not a grid node")


class EdgeOffGrid(DDMCMCError, ValueError):
    pass


class Unsupported(DDMCMCError, NotImplementedError):
    pass


# covariance / kl
class RootBracketFailure(DDMCMCError, RuntimeError):

    def __init__(self, index, reason=''):
        self.index = int(index)
        msg = f"eigenvalue root bracket {self.index} failed"
        super().__init__(f"{msg}: {reason}" if reason else msg)


class TruncationOverflow(DDMCMCError, RuntimeError):
    pass


class PointOutsideDomain(DDMCMCError, ValueError):
    pass


class QuadratureGridMismatch(DDMCMCError, ValueError):
    pass


# field model
class BasisMismatch(DDMCMCError, ValueError):
    pass


class EmptySampleSet(DDMCMCError, ValueError):
    pass


# gp
class FactorizationFailure(DDMCMCError, RuntimeError):
    pass


# mcmc
class LengthMismatch(DDMCMCError, ValueError):
    pass


class InitOutsideSupport(DDMCMCError, ValueError):
    pass


# orchestration / cli
class SensorOutsideDomain(DDMCMCError, ValueError):
    pass


class MissingInterfaceModel(DDMCMCError, KeyError):

    def __str__(self):
        return Exception.__str__(self)


class MissingArtifact(DDMCMCError, FileNotFoundError):
    pass


class ConfigError(DDMCMCError, ValueError):
    pass


class ChainFailure(DDMCMCError, RuntimeError):
    """A local chain failed; `completed` maps task key -> finished result."""

    def __init__(self, key, cause, completed=None):
        self.key = key
        self.cause = cause
        self.completed = dict(completed or {})
        super().__init__(f"chain {key!r} failed: {cause!r}")
