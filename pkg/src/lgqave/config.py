"""Run configuration: one flat key/value file plus CLI flag overrides.

Config files are flat TOML (``key = value`` lines, # comments). Unknown
keys are rejected. Flag overrides win over file values, which win over
defaults; sub-configs (training, synthetic data, forward settings) are
views over the merged result, so their invariants double as validation.
"""

try:
    import tomllib
except ImportError:  # Python 3.10
    import tomli as tomllib

from dataclasses import dataclass, fields

from .errors import ConfigError
from .model import ForwardSettings, ModelDims
from .synthbench import SynthConfig
from .training import TrainConfig

# config-file key -> attribute (lambda is a Python keyword)
KEY_ALIASES = {"lambda": "lambda_"}


@dataclass
class RunConfig:
    """Merged view of every knob a run can set."""

    seed: int = 0
    d: int = 64
    edge_width: int = 510
    beta: float = 0.4
    gamma: float = 0.9
    lambda_: float = 1.0
    lr0: float = 5e-5
    epochs: int = 30
    batch_size: int = 64
    mask_keep_rate: float = 0.9
    pool: str = "mean"
    temperature: float = 1.0
    sampling: bool = True
    grounding: bool = True
    local_repr: bool = True
    global_repr: bool = True
    n_episodes: int = 2000
    T: int = 32
    n_object_classes: int = 8
    n_answer_options: int = 5
    C: int = 64
    noise_std: float = 0.1
    out: str = ""

    def validate(self):
        self.train_config()
        self.synth_config()
        self.settings()
        return self

    def train_config(self):
        return TrainConfig(
            seed=self.seed,
            lambda_=self.lambda_,
            lr0=self.lr0,
            epochs=self.epochs,
            batch_size=self.batch_size,
            beta=self.beta,
            gamma=self.gamma,
            mask_keep_rate=self.mask_keep_rate,
            pool=self.pool,
            temperature=self.temperature,
            sampling=self.sampling,
            grounding=self.grounding,
            local_repr=self.local_repr,
            global_repr=self.global_repr,
        )

    def synth_config(self):
        return SynthConfig(
            seed=self.seed,
            n_episodes=self.n_episodes,
            T=self.T,
            n_object_classes=self.n_object_classes,
            n_answer_options=self.n_answer_options,
            C=self.C,
            noise_std=self.noise_std,
        )

    def settings(self):
        return ForwardSettings(
            beta=self.beta,
            gamma=self.gamma,
            pool=self.pool,
            sampling=self.sampling,
            grounding=self.grounding,
            local_repr=self.local_repr,
            global_repr=self.global_repr,
        )

    def dims(self, c_visual, c_text):
        return ModelDims(
            c_visual=c_visual, c_text=c_text, d=self.d, edge_width=self.edge_width
        )


_FIELD_TYPES = {
    f.name: (f.type if isinstance(f.type, str) else f.type.__name__) for f in fields(RunConfig)
}


def _coerce(key, value):
    want = _FIELD_TYPES[key]
    if want == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"key {key!r} expects a boolean, got {value!r}")
        return value
    if want == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"key {key!r} expects an integer, got {value!r}")
        return value
    if want == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"key {key!r} expects a number, got {value!r}")
        return float(value)
    if want == "str":
        if not isinstance(value, str):
            raise ConfigError(f"key {key!r} expects a string, got {value!r}")
        return value
    raise ConfigError(f"unhandled config type for {key!r}")


def apply_kv(cfg, mapping, source):
    for raw_key, value in mapping.items():
        key = KEY_ALIASES.get(raw_key, raw_key)
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{source}: unknown key {raw_key!r}")
        setattr(cfg, key, _coerce(key, value))
    return cfg


def load_config(path=None, overrides=None):
    """RunConfig from an optional file plus an override mapping."""
    cfg = RunConfig()
    if path:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config {path}: {exc}") from exc
        for key, value in data.items():
            if isinstance(value, dict):
                raise ConfigError(f"config {path}: nested tables not allowed ({key!r})")
        apply_kv(cfg, data, f"config {path}")
    if overrides:
        apply_kv(cfg, overrides, "flags")
    return cfg.validate()
