import os

# Load .env file if available (for local development)
try:
    from dotenv import dotenv_values, load_dotenv
    load_dotenv()
except ImportError:
    dotenv_values = None  # python-dotenv not installed, config files cannot be parsed

_APP_DIR = os.path.dirname(os.path.abspath(__file__))
DATA_DIR = os.environ.get("DATA_DIR") or os.path.join(_APP_DIR, "data")

os.makedirs(DATA_DIR, exist_ok=True)

OUTPUT_DIR = os.environ.get("TRAJGEN_OUTPUT_DIR") or os.path.join(DATA_DIR, "runs")
CONFIG_EXAMPLE_PATH = os.path.join(DATA_DIR, "train.cfg.example")

MODES = ("sample", "generate")
INIT_SAMPLERS = ("historic", "historic_unit", "box")

# Keys that have no meaningful default and must come from the file or the flags.
REQUIRED_KEYS = ("system", "mode")


class ConfigError(ValueError):
    """Raised for unknown, malformed or missing configuration keys."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


def get_default_config():
    """Return the default configuration dictionary.

    ``system`` and ``mode`` default to ``None``; ``train`` refuses to run until
    both are supplied by a config file or a flag.

    Returns:
        dict: Defaults for every recognised key.
    """
    return {
        "system": None,
        "mode": None,
        "horizon_k": 30,
        "batch_q": 100,
        "episodes_e": 400,
        "learning_rate": 0.005,
        "cost_weight": 0.1,
        "sigma0": 0.5,
        "sigma_decay": 0.99,
        "sigma_min": 0.01,
        "seed": 0,
        "data_seed": 1,
        "input_scale": 1.0,
        "init_sampler": "historic",
        "init_scale": 1.0,
        "t0": 0,
        "baseline": False,
        "decentralized": False,
        "max_grad_norm": 0.0,
        "cost_ceiling": 1e12,
        "rank_retries": 5,
        "rank_rtol": 0.0,
        "eig_rtol": 0.0,
        "log_every": 50,
        "keep_thetas": False,
        "jobs": 1,
        "test_states": 800,
        "test_scale": 1.0,
        "control_gain_dt": 1.0,
        "voltage_relaxation": 0.5,
    }


def _coerce(key, raw, default):
    """Convert a raw string value to the type of ``default``."""
    if raw is None:
        raise ConfigError(f"config key '{key}' has no value", key=key)
    text = str(raw).strip()
    try:
        if isinstance(default, bool):
            lowered = text.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ConfigError(f"invalid value for config key '{key}': {text!r}", key=key)
    return text


def merge_config(config, overrides):
    """Apply ``overrides`` on top of ``config``, coercing and validating each key.

    ``None`` values in ``overrides`` are skipped so unset CLI flags never mask
    values from the file.

    Args:
        config: Base configuration dictionary (modified copy is returned).
        overrides: Mapping of key to raw value.

    Returns:
        dict: The merged configuration.

    Raises:
        ConfigError: On an unknown key or an unparseable value.
    """
    defaults = get_default_config()
    merged = dict(config)
    for key, raw in overrides.items():
        if raw is None:
            continue
        if key not in defaults:
            raise ConfigError(f"unknown config key: {key}", key=key)
        default = defaults[key]
        if default is None:
            merged[key] = str(raw).strip()
        elif isinstance(raw, type(default)) and not isinstance(raw, str):
            merged[key] = raw
        else:
            merged[key] = _coerce(key, raw, default)
    return merged


def validate_config(config):
    """Check required keys and value ranges.

    Raises:
        ConfigError: Naming the first offending key.
    """
    for key in REQUIRED_KEYS:
        if not config.get(key):
            raise ConfigError(f"missing config key: {key}", key=key)
    if config["mode"] not in MODES:
        raise ConfigError(f"config key 'mode' must be one of {MODES}, got {config['mode']!r}", key="mode")
    if config["init_sampler"] not in INIT_SAMPLERS:
        raise ConfigError(
            f"config key 'init_sampler' must be one of {INIT_SAMPLERS}, got {config['init_sampler']!r}",
            key="init_sampler",
        )
    for key in ("horizon_k", "batch_q"):
        if config[key] < 1:
            raise ConfigError(f"config key '{key}' must be >= 1", key=key)
    if config["episodes_e"] < 0:
        raise ConfigError("config key 'episodes_e' must be >= 0", key="episodes_e")
    if config["learning_rate"] <= 0:
        raise ConfigError("config key 'learning_rate' must be > 0", key="learning_rate")
    if config["sigma0"] <= 0 or config["sigma_min"] <= 0:
        raise ConfigError("exploration noise must stay positive", key="sigma0")


def load_config(path=None, overrides=None):
    """Load a flat ``key=value`` configuration file on top of the defaults.

    Args:
        path: Optional config file path. ``None`` means defaults only.
        overrides: Optional mapping applied after the file (CLI flags).

    Returns:
        dict: The merged, type-coerced configuration. Required keys are
        not checked here; call :func:`validate_config` before training.

    Raises:
        ConfigError: On unknown keys, bad values, or an unreadable file.
    """
    config = get_default_config()
    if path:
        if dotenv_values is None:
            raise ConfigError("python-dotenv is required to read config files")
        if not os.path.isfile(path):
            raise ConfigError(f"config file not found: {path}")
        config = merge_config(config, dict(dotenv_values(path)))
    if overrides:
        config = merge_config(config, overrides)
    return config


def save_config(config, path):
    """Write the configuration dictionary as ``key=value`` lines.

    Args:
        config: The configuration dictionary to persist.
        path: Destination file.
    """
    with open(path, "w", encoding="utf-8") as f:
        for key, value in config.items():
            if value is None:
                continue
            if isinstance(value, bool):
                value = "true" if value else "false"
            f.write(f"{key}={value}\n")


def output_dir(path=None):
    """Return (and create) the directory run artifacts are written to."""
    target = path or OUTPUT_DIR
    os.makedirs(target, exist_ok=True)
    return target


def load_overrides(path):
    """Only the keys set in a config file, coerced; defaults are not filled in.

    Raises:
        ConfigError: On unknown keys, bad values, or an unreadable file.
    """
    if dotenv_values is None:
        raise ConfigError("python-dotenv is required to read config files")
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    return merge_config({}, dict(dotenv_values(path)))
