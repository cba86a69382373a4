"""Jinja2 environment for the packaged prompt templates.

Licensed under the Apache License, Version 2.0
"""

from functools import lru_cache
from typing import Any, Sequence

import jinja2

# Prompts render reals with a fixed number of decimals
DEFAULT_PRECISION = 4


def format_real(value: float, precision: int = DEFAULT_PRECISION) -> str:
    """Fixed-point, locale-independent rendering. Values that round to zero print unsigned."""
    text = f"{float(value):.{precision}f}"
    if text.startswith("-") and float(text) == 0.0:
        return text[1:]
    return text


def format_vector(values: Sequence[float], precision: int = DEFAULT_PRECISION) -> str:
    return ", ".join(format_real(v, precision) for v in values)


@lru_cache(maxsize=1)
def get_environment() -> jinja2.Environment:
    env = jinja2.Environment(
        loader=jinja2.PackageLoader("sasopt", "templates"),
        autoescape=False,
        undefined=jinja2.StrictUndefined,
        trim_blocks=True,
        lstrip_blocks=True,
    )
    env.filters["fmt"] = format_real
    env.filters["fmt_vec"] = format_vector
    return env


def render(template_name: str, **context: Any) -> str:
    return get_environment().get_template(template_name).render(**context)
