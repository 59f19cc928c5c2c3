import logging
import math

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def get_logger(name):
    """Return the module logger used across the toolkit."""
    return logging.getLogger(name)


def setup_logging(verbose=False):
    """
    Configure the root handler once for command-line runs.

    Args:
        verbose: Emit DEBUG messages when True, INFO otherwise
    """
    level = logging.DEBUG if verbose else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT)


def format_rate(value, digits=1):
    """
    Format an error rate percentage for tables.

    Args:
        value: Percentage or None when the rate is undefined
        digits: Number of decimals

    Returns:
        str: Formatted percentage, "--" for absent values
    """
    if value is None:
        return "--"
    return f"{value:.{digits}f}"


def validate_range(name, value, min_val=None, max_val=None):
    """
    Check that a numerical setting is finite and inside [min_val, max_val].

    Args:
        name: Setting name used in the error message
        value: Value to check
        min_val: Inclusive lower bound, or None
        max_val: Inclusive upper bound, or None

    Returns:
        float: The validated value

    Raises:
        ValueError: If the value is not a finite number or out of range
    """
    try:
        val = float(value)
    except (TypeError, ValueError):
        raise ValueError(f"{name} must be a number, got {value!r}")
    if not math.isfinite(val):
        raise ValueError(f"{name} must be finite, got {value!r}")
    if min_val is not None and val < min_val:
        raise ValueError(f"{name} must be >= {min_val}, got {val}")
    if max_val is not None and val > max_val:
        raise ValueError(f"{name} must be <= {max_val}, got {val}")
    return val


def parse_bool(value):
    """Interpret the usual textual spellings of a boolean flag."""
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"Not a boolean value: {value!r}")
