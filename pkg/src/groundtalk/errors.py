"""Exception types shared across the package."""


class GroundTalkError(Exception):
    """Base class for every error raised deliberately by groundtalk."""


class DimensionError(GroundTalkError, ValueError):
    pass


class ConfigurationError(GroundTalkError, ValueError):
    pass


class TrainingDivergence(GroundTalkError, FloatingPointError):
    """A non-finite gradient or loss appeared during optimisation."""

    def __init__(self, message, parameter=None, epoch=None, batch=None):
        ctx = []
        if parameter is not None:
            ctx.append(f"parameter={parameter}")
        if epoch is not None:
            ctx.append(f"epoch={epoch}")
        if batch is not None:
            ctx.append(f"batch={batch}")
        if ctx:
            message = f"{message} ({', '.join(ctx)})"
        super().__init__(message)
        self.parameter = parameter
        self.epoch = epoch
        self.batch = batch


class CheckpointError(GroundTalkError):
    pass


class MissingCheckpoint(CheckpointError, FileNotFoundError):
    pass


class VocabularyMismatch(CheckpointError):
    pass
