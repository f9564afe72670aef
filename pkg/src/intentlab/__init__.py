"""Social-media intent recognition with localization-aware training.

Subpackages cover the intent taxonomy and its content/difficulty grouping,
object/context mask preparation, CAM-based localization supervision, the
hashtag retrieval channel, the classifier itself, training, evaluation
studies, and annotation quality checks.
"""

__version__ = "0.1.0"

from .errors import ConfigError, InputError, IntentLabError, NumericError

__all__ = ["ConfigError", "InputError", "IntentLabError", "NumericError",
           "__version__"]
