"""Flat ``key = value`` run configuration files.

UTF-8 text, one pair per line, ``#`` starts a comment.  Unknown keys are
rejected by name; required keys must all be present.  The resolved config
(defaults filled in) can be written back out as a snapshot.
"""

from __future__ import annotations

from dataclasses import fields

from .training import TrainConfig


class ConfigError(ValueError):
    pass


_REQUIRED = ("task", "seed", "steps", "batch_size", "lr",
             "encoder", "dim", "heads", "pooling")

_PARSERS = {
    "task": str,
    "encoder": lambda v: tuple(b.strip() for b in v.split(",")),
    "pooling": str,
    "select": str,
    "lr": float,
    "lr_decay_factor": float,
    "grad_clip": float,
    "mog_mu_range": float,
    "mog_sigma": float,
}
_FIELD_NAMES = {f.name for f in fields(TrainConfig)}


def parse_kv_text(text: str) -> dict[str, str]:
    kv: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        if k in kv:
            raise ConfigError(f"line {lineno}: duplicate key {k!r}")
        kv[k] = v
    return kv


def parse_run_config(text: str, seed_override: int | None = None) -> TrainConfig:
    kv = parse_kv_text(text)
    unknown = kv.keys() - _FIELD_NAMES
    if unknown:
        raise ConfigError(f"unknown config key {sorted(unknown)[0]!r}")
    missing = set(_REQUIRED) - kv.keys()
    if missing:
        raise ConfigError(f"missing required config key {sorted(missing)[0]!r}")
    args = {}
    for k, v in kv.items():
        parser = _PARSERS.get(k, int)
        try:
            args[k] = parser(v)
        except ValueError as e:
            raise ConfigError(f"bad value for {k!r}: {v!r}") from e
    if seed_override is not None:
        args["seed"] = int(seed_override)
    try:
        return TrainConfig(**args)
    except ValueError as e:
        raise ConfigError(str(e)) from e


def load_run_config(path, seed_override: int | None = None) -> TrainConfig:
    with open(path, encoding="utf-8") as f:
        return parse_run_config(f.read(), seed_override)


def resolved_text(cfg: TrainConfig) -> str:
    lines = []
    for f in fields(TrainConfig):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
