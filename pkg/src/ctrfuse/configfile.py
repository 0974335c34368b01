"""Tiny key=value config files used by the command line.

Lines are ``key=value``; blank lines and ``#`` comments are ignored. Every
command validates its keys against an allow-list so typos fail loudly.
"""


class ConfigError(ValueError):
    pass


def read_config(path, allowed: set[str] | None = None) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key = key.strip()
            if allowed is not None and key not in allowed:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            values[key] = value.strip()
    return values


def get_int(cfg: dict, key: str, default: int) -> int:
    try:
        return int(cfg[key]) if key in cfg else default
    except ValueError as exc:
        raise ConfigError(f"config key {key!r} must be an integer") from exc


def get_float(cfg: dict, key: str, default: float) -> float:
    try:
        return float(cfg[key]) if key in cfg else default
    except ValueError as exc:
        raise ConfigError(f"config key {key!r} must be a number") from exc


def get_str(cfg: dict, key: str, default: str) -> str:
    return cfg.get(key, default)


def get_list(cfg: dict, key: str) -> list[str]:
    raw = cfg.get(key, "")
    return [item.strip() for item in raw.split(",") if item.strip()]


def get_float_list(cfg: dict, key: str) -> list[float]:
    try:
        return [float(v) for v in get_list(cfg, key)]
    except ValueError as exc:
        raise ConfigError(f"config key {key!r} must be a comma list of numbers") from exc


def get_int_list(cfg: dict, key: str) -> list[int]:
    try:
        return [int(v) for v in get_list(cfg, key)]
    except ValueError as exc:
        raise ConfigError(f"config key {key!r} must be a comma list of integers") from exc
