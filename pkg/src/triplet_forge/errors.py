"""Exception hierarchy shared by the library and the command line."""


class TripletForgeError(Exception):
    exit_code = 1


class ConfigError(TripletForgeError, ValueError):
    exit_code = 2


class ArtifactError(TripletForgeError, IOError):
    exit_code = 3


class ChecksumError(ArtifactError):
    pass


class TruncatedArtifactError(ArtifactError):
    pass


class UnknownFormatError(ArtifactError):
    """Raised for an unknown magic tag or an unsupported version."""


class MissingArtifactError(ArtifactError):
    def __init__(self, path, producer):
        super().__init__(f"{path} not found; produce it with `triplet-forge {producer}`")
        self.path = path
        self.producer = producer


class NumericError(TripletForgeError, ArithmeticError):
    exit_code = 4


class TrainingDivergedError(NumericError):
    def __init__(self, message, model=None, trace=None):
        super().__init__(message)
        self.model = model
        self.trace = trace


class InsufficientAudioError(TripletForgeError, ValueError):
    exit_code = 2


class DomainMismatchError(TripletForgeError, ValueError):
    exit_code = 2
