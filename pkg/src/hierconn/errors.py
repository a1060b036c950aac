"""Exception hierarchy.

Two broad families matter for the CLI exit-code contract: ``DataError``
(bad or inconsistent inputs, exit code 2) and ``NumericalError`` (runtime
numerical failures, exit code 3). Everything derives from ``HierconnError``.
"""


class HierconnError(Exception):
    """Base class for all package errors."""


class DataError(HierconnError):
    """Invalid, inconsistent, or unusable input data."""


class NumericalError(HierconnError):
    """A numerical failure at runtime (non-finite values, failed checks)."""


# -- data family ------------------------------------------------------------

class ParseError(DataError):
    """A manifest, config, or matrix file could not be parsed."""


class ShapeMismatch(DataError):
    """Array shapes inconsistent with the declared contract."""


class InvariantViolation(DataError):
    """A domain-type invariant failed validation."""

    def __init__(self, message, subject_id=None):
        if subject_id is not None:
            message = f"subject {subject_id!r}: {message}"
        super().__init__(message)
        self.subject_id = subject_id


class InvalidSpec(DataError):
    """A synthetic-dataset spec violates its own invariants."""


class TooFewSubjects(DataError):
    """Not enough subjects per class for the requested split."""


class EmptyDataset(DataError):
    """An operation received an empty subject set."""


class EmptyVector(DataError):
    """An operation received a zero-length vector."""


class InvalidTarget(DataError):
    """A classification target is out of range or not a distribution."""


class SingleClassPresent(DataError):
    """Ranking metrics are undefined when only one class is present."""


class MissingAtlasLabels(DataError):
    """The dataset carries no atlas labels but the operation needs them."""


class UnknownKey(DataError):
    """A config document contains a key the schema does not define."""

    def __init__(self, key_path):
        super().__init__(f"unknown config key {key_path!r}")
        self.key_path = key_path


class InvalidValue(DataError):
    """A config value fails its field's validation."""

    def __init__(self, key_path, message):
        super().__init__(f"config key {key_path!r}: {message}")
        self.key_path = key_path


# -- numerical family --------------------------------------------------------

class NonFiniteInput(NumericalError):
    """NaN or infinity in data that must be finite."""


class ZeroVarianceNode(DataError):
    """A time-series row is constant, so its correlations are undefined."""

    def __init__(self, row_index):
        super().__init__(f"row {row_index} has zero variance")
        self.row_index = row_index


class NonFiniteActivation(NumericalError):
    """A model stage produced NaN or infinity; the step is aborted."""


class NonFiniteGradient(NumericalError):
    """A backward pass produced NaN or infinity; the batch is skipped."""


class ZeroNormToken(NumericalError):
    """A subgraph token has zero norm and cannot be L2-normalized."""

    def __init__(self, index):
        super().__init__(f"subgraph token {index} has zero norm")
        self.index = index
