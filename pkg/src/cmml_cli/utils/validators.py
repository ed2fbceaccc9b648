"""Input validation utilities."""

from typing import Iterable

from cmml_cli.utils.exceptions import ValidationError


def validate_positive(name: str, value: float) -> bool:
    """Validate a strictly positive size or rate."""
    if value <= 0:
        raise ValidationError(f"Invalid {name}: {value}. Must be greater than 0.")
    return True


def validate_choice(name: str, value: str, choices: Iterable[str]) -> bool:
    """Validate an enumerated option."""
    options = list(choices)
    if value not in options:
        raise ValidationError(
            f"Invalid {name}: '{value}'. Must be one of: {', '.join(options)}"
        )
    return True


def validate_fraction(name: str, value: float) -> bool:
    """Validate a value within the open unit interval."""
    if not 0.0 < value < 1.0:
        raise ValidationError(f"Invalid {name}: {value}. Must be between 0 and 1.")
    return True
