"""Flat ``key = value`` configuration files with ``[section]`` headers.

Keys that appear before any header belong to ``[train]``.  Blank lines and
lines starting with ``#`` or ``;`` are ignored.  Every error names the line.
"""

from dataclasses import fields

from .errors import InvalidArgument
from .training import TrainConfig

SECTIONS = {
    "train": {f.name for f in fields(TrainConfig)},
    "codec": {"threads", "chunk"},
    "eval": {"metric"},
}

CODEC_DEFAULTS = {"threads": 1, "chunk": 32}
EVAL_DEFAULTS = {"metric": "msssim"}


class ConfigError(InvalidArgument):
    def __init__(self, msg, line=None, source="<config>"):
        where = f"{source}:{line}: " if line is not None else f"{source}: "
        super().__init__(where + msg)
        self.line = line


def parse(text, source="<config>"):
    """-> {section: {key: (raw value, line number)}}"""
    out = {name: {} for name in SECTIONS}
    section = "train"
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {line!r}", n, source)
            section = line[1:-1].strip()
            if section not in SECTIONS:
                raise ConfigError(f"unknown section [{section}]", n, source)
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", n, source)
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in SECTIONS[section]:
            raise ConfigError(f"unknown key {key!r} in [{section}]", n, source)
        if key in out[section]:
            raise ConfigError(f"duplicate key {key!r} (first set on line {out[section][key][1]})",
                              n, source)
        out[section][key] = (value, n)
    return out


def _convert(name, value, default):
    if name == "lr_drops":
        if value.lower() in ("", "auto", "none"):
            return None
        return tuple(int(v) for v in value.replace(",", " ").split())
    if name == "out_dir":
        return None if value.lower() in ("", "none") else value
    if isinstance(default, bool):
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return value


def train_config(parsed, source="<config>", **overrides):
    """Build a TrainConfig from parsed ``[train]`` entries plus overrides."""
    defaults = TrainConfig()
    kwargs = {}
    for key, (value, line) in parsed["train"].items():
        try:
            kwargs[key] = _convert(key, value, getattr(defaults, key))
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}", line, source) from None
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return TrainConfig(**kwargs)
    except InvalidArgument as exc:
        raise ConfigError(str(exc), None, source) from None


def section_values(parsed, section, defaults, source="<config>"):
    out = dict(defaults)
    for key, (value, line) in parsed[section].items():
        try:
            out[key] = _convert(key, value, defaults[key])
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}", line, source) from None
    return out


def load(path):
    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None, path) from None
    return parse(text, path)


def dump_defaults():
    """Every setting with its default value, as a loadable config file."""
    d = TrainConfig()
    lines = ["[train]"]
    for f in fields(TrainConfig):
        v = getattr(d, f.name)
        if f.name == "lr_drops":
            v = "auto"
        elif isinstance(v, tuple):
            v = ", ".join(str(x) for x in v)
        lines.append(f"{f.name} = {'none' if v is None else v}")
    lines.append("")
    lines.append("[codec]")
    lines += [f"{k} = {v}" for k, v in CODEC_DEFAULTS.items()]
    lines.append("")
    lines.append("[eval]")
    lines += [f"{k} = {v}" for k, v in EVAL_DEFAULTS.items()]
    return "\n".join(lines) + "\n"
