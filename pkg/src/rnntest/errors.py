"""Exception hierarchy shared across the package."""


class RnnTestError(Exception):
    """Base class for every error raised by rnntest."""


class ConfigurationError(RnnTestError):
    """Shapes, config fields or objective settings are inconsistent."""


class InputError(RnnTestError):
    """An input sequence is malformed (out-of-vocabulary id, bad length)."""


class StepSelectionError(RnnTestError):
    """A time step cannot be used by the adversary objective."""


class CoverageMismatchError(RnnTestError):
    """A coverage metric was applied to a trace that lacks the needed states."""


class TrainingError(RnnTestError):
    """Training diverged.

    The epoch in which the loss became non-finite is kept on ``epoch``.
    """

    def __init__(self, message, epoch):
        super().__init__(f"{message} (epoch {epoch})")
        self.epoch = epoch


class MetricError(RnnTestError):
    """A metric was asked for on empty or invalid data."""


class IngestionError(RnnTestError):
    """A corpus or dataset file could not be read."""


class CheckpointError(RnnTestError):
    """A checkpoint file is corrupt or has an unknown format version."""


class VocabularyError(RnnTestError):
    """Adversarial data and model disagree on the token vocabulary."""
