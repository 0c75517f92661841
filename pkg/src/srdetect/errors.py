"""Exception types shared across the toolkit."""


class EmptyInputError(ValueError):
    """A required input (directory, split, corpus) has nothing in it."""


class InsufficientDataError(ValueError):
    """The manifest cannot satisfy a sampler's preconditions."""


class DivergedTrainingError(RuntimeError):
    """A loss or gradient became non-finite."""


class CheckpointError(ValueError):
    """A checkpoint file is corrupt or written in an unsupported format."""
