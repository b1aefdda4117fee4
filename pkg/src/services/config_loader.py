"""
Plain-text ``key = value`` configuration for the teacher-student loop.

Blank lines and ``#`` comments are ignored. Unknown keys are rejected, missing
keys keep their defaults, and every value is validated by ``SgpConfig``.
"""
import dataclasses
import logging
import os
from typing import Dict, Optional, Tuple

from models.errors import ConfigError
from models.sgp_config import SgpConfig, format_eta_schedule, parse_eta_schedule

logger = logging.getLogger(__name__)

# alternative spellings accepted in config files
KEY_ALIASES = {
    'confidence': 'ransac_confidence',
    'max_iterations': 'ransac_max_iterations',
    'T': 'iterations',
    'lambda': 'lambda_triplet',
    'c_bar': 'inlier_threshold',
}
AUTO = 'auto'
_TRUE = ('true', 'yes', 'on', '1')
_FALSE = ('false', 'no', 'off', '0')

_FIELDS = [f for f in dataclasses.fields(SgpConfig) if f.init]
CONFIG_KEYS = tuple(f.name for f in _FIELDS)
_OPTIONAL_FLOATS = ('icp_threshold', 'fpfh_radius')


def _parse_bool(key: str, text: str) -> bool:
    lowered = text.lower()
    if lowered in _TRUE:
        return True
    if lowered in _FALSE:
        return False
    raise ConfigError(key, f"expected true or false, got '{text}'")


def _parse_value(key: str, text: str):
    default = getattr(SgpConfig(), key)
    try:
        if key == 'eta_schedule':
            return parse_eta_schedule(text)
        if key == 'hidden_dims':
            return tuple(int(part) for part in text.split(',') if part.strip())
        if key in _OPTIONAL_FLOATS:
            return None if text.lower() == AUTO else float(text)
        if isinstance(default, bool):
            return _parse_bool(key, text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        return text
    except ConfigError:
        raise
    except ValueError:
        raise ConfigError(key, f"cannot parse value '{text}'")


def parse_config_text(text: str, source: str = '<config>') -> Tuple[SgpConfig, Dict[str, str]]:
    """
    Parse configuration text.

    Returns:
        Tuple of (SgpConfig, mapping of canonical key to the spelling used in the file)

    Raises:
        ConfigError: On malformed lines, unknown or repeated keys, or invalid values
    """
    values = {}
    spelled = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ConfigError(f"{source}:{number}", f"expected 'key = value', got '{raw.strip()}'")
        key, value = (part.strip() for part in line.split('=', 1))
        canonical = KEY_ALIASES.get(key, key)
        if canonical not in CONFIG_KEYS:
            raise ConfigError(key, "unknown configuration key")
        if canonical in values:
            raise ConfigError(key, "key given more than once")
        values[canonical] = _parse_value(key if key == canonical else canonical, value)
        spelled[canonical] = key
    try:
        return SgpConfig(**values), spelled
    except ConfigError as e:
        # report the spelling the user wrote
        if e.key in spelled and spelled[e.key] != e.key:
            raise ConfigError(spelled[e.key], e.message)
        raise


def load_config(path: Optional[str] = None, **overrides) -> SgpConfig:
    """
    Load an ``SgpConfig`` from ``path`` (defaults when None), then apply overrides.

    Raises:
        ConfigError: If the file holds an invalid configuration
        OSError: If the file cannot be read
    """
    if path is None:
        config = SgpConfig()
    else:
        with open(path, 'r', encoding='utf-8') as f:
            config, _ = parse_config_text(f.read(), source=os.path.basename(path))
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if overrides:
        unknown = [k for k in overrides if k not in CONFIG_KEYS]
        if unknown:
            raise ConfigError(unknown[0], "unknown configuration key")
        config = config.with_overrides(**overrides)
    logger.debug("Loaded configuration from %s", path or 'defaults')
    return config


def _format_value(value) -> str:
    if value is None:
        return AUTO
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple) and (not value or isinstance(value[0], int)):
        return ','.join(str(v) for v in value)
    return str(value)


def config_to_text(config: SgpConfig) -> str:
    """Every key in declaration order; ``parse_config_text`` reproduces ``config`` exactly."""
    lines = []
    for key in CONFIG_KEYS:
        value = getattr(config, key)
        text = format_eta_schedule(value) if key == 'eta_schedule' else _format_value(value)
        lines.append(f"{key} = {text}")
    return '\n'.join(lines) + '\n'


def write_config_snapshot(config: SgpConfig, path: str) -> None:
    """
    Write the configuration snapshot atomically.

    Raises:
        PermissionError: If the file cannot be written due to permissions
        OSError: If another I/O error occurs
    """
    temp_path = f"{path}.tmp"
    try:
        with open(temp_path, 'w', encoding='utf-8', newline='\n') as f:
            f.write(config_to_text(config))
        os.replace(temp_path, path)
    except PermissionError:
        if os.path.exists(temp_path):
            os.remove(temp_path)
        raise PermissionError(f"Cannot write configuration snapshot {path}, check file permissions")
    except OSError as e:
        if os.path.exists(temp_path):
            os.remove(temp_path)
        raise OSError(f"Error writing configuration snapshot {path}: {e}")
