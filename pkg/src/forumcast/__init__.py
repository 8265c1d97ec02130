"""Forum sentiment indices and a highway BiLSTM for next-day close forecasting."""

from .errors import DivergenceError, ForumcastError, SchemaError, SingularDesignError, ValidationError

__version__ = "0.1.0"

__all__ = [
    "DivergenceError",
    "ForumcastError",
    "SchemaError",
    "SingularDesignError",
    "ValidationError",
    "__version__",
]
