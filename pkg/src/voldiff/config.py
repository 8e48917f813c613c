"""Run configuration: defaults, key-value config files and the echoed effective config.

Config files are plain text, one ``key = value`` per line, ``#`` starts a
comment.  Keys are the :class:`RunConfig` field names except ``lambda``,
which maps to :attr:`RunConfig.lambda_sparse`.  Unknown keys are rejected.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from typing import Optional

VARIANT_TAGS = ("nerf", "nerf_bf", "nerf_w_nn", "neuraldiff", "neuraldiff_a",
                "neuraldiff_c", "neuraldiff_ca")
PRECISIONS = ("float32", "float64")

# config-file spelling -> field name
_ALIASES = {"lambda": "lambda_sparse"}
_REVERSE = {v: k for k, v in _ALIASES.items()}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    variant: str = "neuraldiff_ca"
    epochs: int = 10
    max_steps: int = 0              # 0: run every epoch in full
    batch_rays: int = 1048
    samples_coarse: int = 64
    samples_fine: int = 64
    lambda_sparse: float = 0.01
    beta_min: float = 0.03
    lr0: float = 5e-4
    seed: int = 0
    near: Optional[float] = None    # None: take the scene's bounds
    far: Optional[float] = None
    far_cap: Optional[float] = None
    p_basis: int = 6
    d_code: int = 17
    appearance_width: int = 48
    freq_xyz: int = 10
    freq_code: int = 10
    freq_dir: int = 4
    freq_time: int = 10
    trunk_layers: int = 8
    trunk_width: int = 256
    trunk_skip: int = 4
    head_layers: int = 1
    head_width: int = 128
    fg_layers: int = 4
    fg_width: int = 128
    actor_layers: int = 4
    actor_width: int = 128
    coarse_layers: int = 8
    coarse_width: int = 256
    precision: str = "float32"
    val_rays: int = 1024
    chunk_rays: int = 2048
    deterministic: bool = False
    workers: int = 1

    def validate(self) -> "RunConfig":
        if self.variant not in VARIANT_TAGS:
            raise ConfigError(f"variant: unknown tag {self.variant!r} (choose from {', '.join(VARIANT_TAGS)})")
        if self.precision not in PRECISIONS:
            raise ConfigError(f"precision: must be one of {PRECISIONS}")
        positive = ("batch_rays", "samples_coarse", "p_basis", "d_code",
                    "freq_xyz", "freq_code", "freq_dir", "freq_time", "trunk_layers",
                    "trunk_width", "head_layers", "head_width", "fg_layers", "fg_width",
                    "actor_layers", "actor_width", "coarse_layers", "coarse_width",
                    "val_rays", "chunk_rays", "workers")
        for k in positive:
            if getattr(self, k) <= 0:
                raise ConfigError(f"{k}: must be positive")
        for k in ("epochs", "max_steps", "samples_fine", "lambda_sparse", "seed", "appearance_width"):
            if getattr(self, k) < 0:
                raise ConfigError(f"{k}: must be nonnegative")
        if self.samples_coarse < 2:
            raise ConfigError("samples_coarse: need at least 2")
        if self.beta_min <= 0:
            raise ConfigError("beta_min: must be positive")
        if self.lr0 <= 0:
            raise ConfigError("lr0: must be positive")
        if self.p_basis % 2 or self.p_basis < 2:
            raise ConfigError("p_basis: must be even and >= 2")
        if not 0 <= self.trunk_skip < self.trunk_layers:
            raise ConfigError("trunk_skip: must lie in [0, trunk_layers)")
        if self.near is not None and self.far is not None and not 0 < self.near < self.far:
            raise ConfigError("near/far: need 0 < near < far")
        return self

    def updated(self, **changes) -> "RunConfig":
        return replace(self, **changes).validate()

    def to_dict(self):
        return {_REVERSE.get(f.name, f.name): getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d, base: Optional["RunConfig"] = None) -> "RunConfig":
        base = base or cls()
        types = {f.name: f.type for f in fields(cls)}
        changes = {}
        for key, value in d.items():
            name = _ALIASES.get(key, key)
            if name not in types:
                raise ConfigError(f"unknown config key {key!r}")
            changes[name] = _coerce(key, value, getattr(cls(), name), types[name])
        return replace(base, **changes).validate()


def _coerce(key, value, default, annotation):
    if value is None or (isinstance(value, str) and value.strip().lower() in ("none", "")):
        if "Optional" in str(annotation):
            return None
        raise ConfigError(f"{key}: a value is required")
    try:
        if isinstance(default, bool) or annotation in (bool, "bool"):
            if isinstance(value, bool):
                return value
            v = str(value).strip().lower()
            if v in ("1", "true", "yes", "on"):
                return True
            if v in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if annotation in (int, "int"):
            f = float(value)
            if f != int(f):
                raise ValueError(value)
            return int(f)
        if annotation in (str, "str"):
            return str(value).strip()
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot parse {value!r}") from None


def parse_config_text(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def load_config(path, base: Optional[RunConfig] = None) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return RunConfig.from_dict(parse_config_text(fh.read()), base)


def format_config(cfg: RunConfig) -> str:
    lines = []
    for k, v in cfg.to_dict().items():
        lines.append(f"{k} = {'none' if v is None else repr(v) if isinstance(v, float) else v}")
    return "\n".join(lines) + "\n"


def save_config(cfg: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_config(cfg))


# Small networks and sample counts for single-core runs on 64x64 scenes.  The
# per-frame appearance code is off: with a small background it absorbed the
# moving objects, and the synthetic scenes have no lighting changes to explain.
# A higher learning rate makes 4 epochs (about 15 minutes) enough.
DESK_PRESET = dict(
    trunk_layers=4, trunk_width=64, trunk_skip=2, head_layers=1, head_width=32,
    fg_layers=2, fg_width=64, actor_layers=2, actor_width=64, coarse_layers=3,
    coarse_width=32, samples_coarse=32, samples_fine=32, batch_rays=512,
    appearance_width=0, lr0=2e-3, epochs=4,
)


def desk_config(**overrides) -> RunConfig:
    return RunConfig().updated(**{**DESK_PRESET, **overrides})
