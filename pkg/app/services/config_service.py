"""Flat key=value run files: parsing into RunConfig and rendering back."""
import logging
from typing import Dict, Tuple

from pydantic import ValidationError

from app.schemas.run_config_schema import MANDATORY_KEYS, RUN_KEYS, RunConfig
from app.utils.exceptions import ConfigurationError

logger = logging.getLogger(__name__)

RANGE_KEYS = ("signal_grid", "distances")
INTEGER_KEYS = ("cutoff", "phase_nodes")
FLOAT_KEYS = ("dark_count", "det_efficiency", "fiber_loss_db_km", "f", "N")


def _number(text: str, key: str, line: int, kind=float):
    try:
        return kind(text.strip())
    except ValueError:
        raise ConfigurationError(f"malformed number '{text.strip()}'", key=key, line=line) from None


def _convert(key: str, value: str, line: int):
    if key in RANGE_KEYS:
        parts = value.split(":")
        if len(parts) != 3:
            raise ConfigurationError(f"expected start:stop:step, got '{value}'", key=key, line=line)
        return tuple(_number(part, key, line) for part in parts)
    if key == "decoys":
        return tuple(_number(part, key, line) for part in value.split(",")) if value else ()
    if key in INTEGER_KEYS:
        return _number(value, key, line, int)
    if key in FLOAT_KEYS:
        return _number(value, key, line)
    return value


def _read_pairs(text: str) -> Tuple[Dict[str, str], Dict[str, int]]:
    values, lines = {}, {}
    for number, raw in enumerate(text.splitlines(), start=1):
        content = raw.split("#", 1)[0].strip()
        if not content:
            continue
        if "=" not in content:
            raise ConfigurationError(f"expected key=value, got '{content}'", line=number)
        key, value = (part.strip() for part in content.split("=", 1))
        if key not in RUN_KEYS:
            raise ConfigurationError("unknown key", key=key, line=number)
        if key in values:
            raise ConfigurationError(f"duplicate key, first set on line {lines[key]}", key=key, line=number)
        values[key], lines[key] = value, number
    return values, lines


def _translate(error: ValidationError, lines: Dict[str, int]) -> ConfigurationError:
    first = error.errors()[0]
    cause = first.get("ctx", {}).get("error")
    if isinstance(cause, ConfigurationError) and cause.key is not None:
        message = str(cause).split(": ", 1)[-1]
        return ConfigurationError(message, key=cause.key, line=lines.get(cause.key))
    key = str(first["loc"][0]) if first["loc"] else None
    message = first["msg"].removeprefix("Value error, ")
    return ConfigurationError(message, key=key, line=lines.get(key))


def parse_config(text: str) -> RunConfig:
    """
    Parse a run file.

    Args:
        text: ``key=value`` lines; ``#`` starts a comment.

    Returns:
        RunConfig: Validated configuration with defaults for optional keys.

    Raises:
        ConfigurationError: For unknown, duplicate or missing keys, malformed numbers and
        violated invariants, naming the key and its line.
    """
    values, lines = _read_pairs(text)
    missing = [key for key in MANDATORY_KEYS if key not in values]
    if missing:
        raise ConfigurationError("missing mandatory key", key=missing[0])
    converted = {key: _convert(key, value, lines[key]) for key, value in values.items()}
    try:
        config = RunConfig(**converted)
    except ValidationError as error:
        raise _translate(error, lines) from error
    logger.debug(f"Parsed run configuration: {config}")
    return config


def _render_range(values) -> str:
    return ":".join(repr(float(v)) for v in values)


def render_config(config: RunConfig) -> str:
    """Run-file text that parses back to ``config``."""
    lines = [
        f"protocol={config.protocol}",
        f"decoys={','.join(repr(float(mu)) for mu in config.decoys)}",
        f"signal_grid={_render_range(config.signal_grid)}",
        f"dark_count={config.dark_count!r}",
        f"det_efficiency={config.det_efficiency!r}",
        f"fiber_loss_db_km={config.fiber_loss_db_km!r}",
        f"f={config.f!r}",
        f"distances={_render_range(config.distances)}",
    ]
    if config.N is not None:
        lines.append(f"N={config.N!r}")
    lines += [f"cutoff={config.cutoff}", f"phase_nodes={config.phase_nodes}", f"out={config.out}"]
    return "\n".join(lines) + "\n"
