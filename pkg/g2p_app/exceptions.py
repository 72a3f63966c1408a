"""Typed errors raised by the rg2p pipeline.

Management commands map these onto exit codes: input problems exit with 2,
numeric/runtime failures with 3.
"""


class G2PError(Exception):
    """Base class for every pipeline error."""

    exit_code = 3


class InputError(G2PError):
    """Bad user input: files, arguments, configuration."""

    exit_code = 2


class DimensionError(G2PError, ValueError):
    pass


class ConfigurationError(InputError, ValueError):
    pass


class ArgumentError(InputError, ValueError):
    pass


class LengthError(ArgumentError):
    pass


class NumericError(G2PError, ArithmeticError):
    pass


class GraphError(G2PError, RuntimeError):
    pass


class EmptyLexiconError(InputError):
    pass


class EmptyCorpusError(InputError):
    pass


class AlignmentError(InputError):
    pass


class ContextDisabledError(ConfigurationError):
    pass


class CheckpointError(InputError):
    pass


class TrainingDivergedError(NumericError):
    def __init__(self, step, batch_ids, loss, stage=None):
        self.step = step
        self.batch_ids = list(batch_ids)
        self.loss = loss
        self.stage = stage
        super().__init__(
            f'non-finite loss {loss!r} at step {step} (stage {stage}), '
            f'batch ids {self.batch_ids}'
        )


class VocabularyMismatchError(InputError):
    pass
