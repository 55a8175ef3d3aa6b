"""Exception hierarchy with machine-parseable error categories.

Every error raised by the package carries a kebab-case ``category`` that the
CLI prints as the first token of its single-line error output.
"""


class LitettsError(Exception):
    """Base class; ``category`` is a stable machine-parseable identifier."""

    category = "internal-error"

    def __init__(self, message, category=None):
        super().__init__(message)
        if category is not None:
            self.category = category


class ConfigNotFoundError(LitettsError):
    category = "config-not-found"


class ConfigError(LitettsError):
    """Raised with every violated field listed at once."""

    category = "config-invalid"

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class ManifestError(LitettsError):
    category = "manifest-invalid"


class AudioError(LitettsError):
    category = "audio-invalid"


class CheckpointError(LitettsError):
    category = "checkpoint-invalid"


class VocabularyCollisionError(LitettsError):
    category = "vocab-collision"


class PlacementError(LitettsError):
    """Unknown attachment point, double injection, or empty freeze pattern."""

    category = "adapter-plan-invalid"


class TrainingError(LitettsError):
    category = "training-failed"


class EvaluationError(LitettsError):
    category = "evaluation-failed"
