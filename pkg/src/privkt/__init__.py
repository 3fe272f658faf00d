"""Private knowledge transfer with a teacher, a student and a discriminator.

The student learns from a frozen private teacher through a clipped and
noised distillation loss plus an adversarial loss; an RDP accountant tracks
the privacy spent.
"""

__version__ = "0.1.0"

from .errors import ConfigError, FormatError, NumericError, UsageError  # noqa: E402
from .kernels import BACKEND  # noqa: E402

__all__ = ["BACKEND", "ConfigError", "FormatError", "NumericError", "UsageError", "__version__"]
