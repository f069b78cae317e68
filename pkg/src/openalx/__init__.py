"""openalx: a reproducible active-learning benchmark for tabular data."""

__version__ = "0.1.0"

from .runner import aggregate, compare, load_experiment, load_initial_conditions, run  # noqa: E402

__all__ = ["__version__", "aggregate", "compare", "load_experiment", "load_initial_conditions", "run"]
