import logging
import re
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Optional, Sequence, Union

from dotenv import load_dotenv
from pydantic import ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from gmfg.exceptions import ConfigError

# Load environment variables from .env file
load_dotenv()

logger = logging.getLogger(__name__)


class Settings(BaseSettings):
    """Process-wide settings read from GMFG_* environment variables."""

    threads: int = 1
    log_level: str = "INFO"
    output_dir: str = "runs"

    model_config = SettingsConfigDict(
        env_file=".env",
        env_prefix="GMFG_",
        case_sensitive=False,
        extra="ignore",
    )


settings = Settings()


_TOML_LINE = re.compile(r"line (\d+)")
_TABLE = re.compile(r"^\s*\[\s*([A-Za-z0-9_.\-]+)\s*\]\s*(#.*)?$")
_KEY = re.compile(r"^\s*([A-Za-z0-9_\-]+)\s*=")


def locate_key(text: str, loc: Sequence[Union[str, int]]) -> Optional[int]:
    """1-based line of ``section.key`` in a TOML document, or of the section header alone."""
    names = [str(part) for part in loc if isinstance(part, str)]
    if not names:
        return None
    section, key = names[0], names[1] if len(names) > 1 else None
    current = None
    header = None
    for number, line in enumerate(text.splitlines(), start=1):
        table = _TABLE.match(line)
        if table:
            current = table.group(1)
            if current == section:
                header = number
            continue
        match = _KEY.match(line)
        if not match:
            continue
        name = match.group(1)
        if current is None and name == section:
            return number
        if current == section and key is not None and name == key:
            return number
    return header


def _first_error_line(text: str, error: ValidationError) -> tuple[Optional[int], str]:
    first = error.errors()[0]
    where = ".".join(str(part) for part in first["loc"])
    return locate_key(text, first["loc"]), f"{where}: {first['msg']}"


def load_experiment_config(path: Union[str, Path], overrides: Optional[dict[str, Any]] = None):
    """Parse and validate a TOML experiment file; errors carry the offending line."""
    from gmfg.schemas import ExperimentConfig

    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        match = _TOML_LINE.search(str(exc))
        raise ConfigError(f"invalid TOML: {exc}", int(match.group(1)) if match else None) from exc

    for dotted, value in (overrides or {}).items():
        section, key = dotted.split(".", 1)
        raw.setdefault(section, {})[key] = value

    try:
        config = ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        line, message = _first_error_line(text, exc)
        raise ConfigError(message, line, {"errors": exc.error_count()}) from exc
    logger.debug(f"Loaded experiment config {path}")
    return config
