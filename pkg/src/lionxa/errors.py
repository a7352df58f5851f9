"""Exception types raised across the package."""


class LionXAError(Exception):
    pass


class ShapeError(LionXAError, ValueError):
    pass


# lidar io / synthesis
class MalformedScan(LionXAError):
    pass


class LabelCountMismatch(LionXAError):
    pass


class DuplicateMapping(LionXAError):
    pass


class InvalidMapping(LionXAError):
    pass


class InvalidScene(LionXAError):
    pass


# projection / voxels / target-like
class EmptyCloud(LionXAError):
    pass


class DegenerateStats(LionXAError):
    pass


class InvalidCutout(LionXAError):
    pass


class InvalidVoxelSize(LionXAError):
    pass


class UnsupportedUpsampling(LionXAError):
    pass


class HeightMismatch(LionXAError):
    pass


class MalformedImage(LionXAError):
    pass


# networks / losses / training
class EmptyInput(LionXAError):
    pass


class EmptyHistogram(LionXAError):
    pass


class EmptyLoss(LionXAError):
    pass


class MissingTargetDomain(LionXAError):
    pass


class NoValidation(LionXAError):
    pass


class CheckpointError(LionXAError):
    pass


# metrics / config
class EmptyMatrix(LionXAError):
    pass


class DegenerateGap(LionXAError):
    pass


class ConfigError(LionXAError):
    pass
