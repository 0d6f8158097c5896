"""Training hyperparameters and the flat ``key=value`` config file format."""

from dataclasses import dataclass, fields, replace


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of the dual-branch head.

    Compensation and proxy settings (m=2, L=2, phi=0.8, momentum 0.9,
    alpha0=0.5, beta0=6.0, a 3:1 uniform-to-balanced batch ratio) are the
    usual large-scale values. Learning rate, epochs and batch sizes are
    sized for training a head on fixed features.
    """

    epochs: int = 30
    batch_uniform: int = 96
    batch_balanced: int = 32
    lr_initial: float = 0.05
    momentum: float = 0.9
    phi: float = 0.8
    m: int = 2
    alpha0: float = 0.5
    beta0: float = 6.0
    tau: float = 8.0
    num_proxies: int = 2
    head_threshold: float = 100
    seed: int = 0

    def validate(self):
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.batch_uniform < 1 or self.batch_balanced < 1:
            raise ValueError("batch sizes must be positive")
        if not self.lr_initial > 0:
            raise ValueError("lr_initial must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if not 0.0 <= self.phi <= 1.0:
            raise ValueError("phi must lie in [0, 1]")
        if self.m < 1:
            raise ValueError("m must be at least 1")
        if self.alpha0 < 0 or self.beta0 < 0:
            raise ValueError("alpha0 and beta0 must be non-negative")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.num_proxies < 1:
            raise ValueError("num_proxies must be at least 1")
        if self.head_threshold < 0:
            raise ValueError("head_threshold must be non-negative")
        return self

    def with_overrides(self, **overrides):
        return replace(self, **{k: v for k, v in overrides.items() if v is not None}).validate()


_FIELD_TYPES = {f.name: f.type for f in fields(TrainConfig)}
_CASTS = {"int": int, "float": float, int: int, float: float}


def parse_value(key, text):
    if key not in _FIELD_TYPES:
        raise KeyError(f"unknown config key {key!r}; expected one of {sorted(_FIELD_TYPES)}")
    cast = _CASTS[_FIELD_TYPES[key]]
    if cast is int:
        value = float(text)
        if not value.is_integer():
            raise ValueError(f"{key} must be an integer, got {text!r}")
        return int(value)
    return cast(text)


def parse_config_text(text, base=None):
    """Parse ``key=value`` lines (``#`` starts a comment) on top of ``base``."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        try:
            values[key] = parse_value(key, value)
        except (KeyError, ValueError) as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    return replace(base or TrainConfig(), **values).validate()


def load_config(path, base=None):
    with open(path) as fh:
        return parse_config_text(fh.read(), base)


def format_config(config):
    return "".join(f"{f.name}={getattr(config, f.name)}\n" for f in fields(config))
