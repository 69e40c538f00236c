"""Run configuration: flat JSON with dotted keys, validated before use."""

import hashlib
import json
import zlib
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .exceptions import InputError

TRAINABLE_METHODS = ("baseline", "factorized", "jcf", "jcf_shared")
SCHEMA_VERSION = 1


@dataclass
class PoolingSection:
    method: str = "jcf_shared"
    reduced_dim: int = 32
    out_dim: int = 32
    n_words: int = 8
    rank: int = 4
    normalize_output: bool = True


@dataclass
class CodebookSection:
    mode: str = "soft"
    temperature: float = 0.1
    dual: bool = False
    init_iters: int = 10


@dataclass
class DatasetSection:
    n_instances: int = 64
    samples_per_instance: int = 16
    raw_dim: int = 128
    locations: int = 16
    n_modes: int = 2
    cluster_spread: float = 1.0
    noise_scale: float = 0.2
    direction_pool: int = 9
    centered: bool = True


@dataclass
class OptimSection:
    lr: float = 0.5
    batch_size: int = 16
    steps: int = 300
    margin: float = 0.1
    freeze: list = field(default_factory=list)


@dataclass
class EvalSection:
    ks: list = field(default_factory=lambda: [1, 2, 4, 8])


@dataclass
class RunConfig:
    pooling: PoolingSection = field(default_factory=PoolingSection)
    codebook: CodebookSection = field(default_factory=CodebookSection)
    dataset: DatasetSection = field(default_factory=DatasetSection)
    optim: OptimSection = field(default_factory=OptimSection)
    eval: EvalSection = field(default_factory=EvalSection)
    seed: int = 0
    output_dir: str = "runs/default"

    # -- flat dotted-key view ---------------------------------------------------

    def to_flat(self):
        flat = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if hasattr(value, "__dataclass_fields__"):
                for k, v in asdict(value).items():
                    flat[f"{f.name}.{k}"] = v
            else:
                flat[f.name] = value
        return flat

    @classmethod
    def from_flat(cls, flat):
        cfg = cls()
        cfg.update(flat)
        return cfg

    def update(self, flat):
        """Apply dotted-key overrides; unknown keys are rejected."""
        known = self.to_flat()
        for key, raw in _flatten(flat).items():
            if key not in known:
                raise InputError(f"unknown config key {key!r}")
            value = _coerce(raw, known[key], key)
            if "." in key:
                section, name = key.split(".", 1)
                setattr(getattr(self, section), name, value)
            else:
                setattr(self, key, value)
        return self

    def hash(self):
        """Hash of the run-defining settings (the output directory is excluded)."""
        flat = self.to_flat()
        flat.pop("output_dir")
        blob = json.dumps(flat, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def validate(self):
        p, c, d, o = self.pooling, self.codebook, self.dataset, self.optim
        if p.method not in TRAINABLE_METHODS:
            raise InputError(f"pooling.method must be one of {TRAINABLE_METHODS}, got {p.method!r}")
        for key, value in (("pooling.reduced_dim", p.reduced_dim), ("pooling.out_dim", p.out_dim),
                           ("pooling.n_words", p.n_words), ("pooling.rank", p.rank),
                           ("dataset.raw_dim", d.raw_dim), ("dataset.locations", d.locations),
                           ("dataset.n_modes", d.n_modes), ("optim.batch_size", o.batch_size)):
            if value < 1:
                raise InputError(f"{key} must be >= 1")
        if p.method == "jcf_shared" and p.rank > p.n_words:
            raise InputError(f"pooling.rank ({p.rank}) must not exceed pooling.n_words ({p.n_words})")
        if c.mode not in ("soft", "hard"):
            raise InputError(f"codebook.mode must be 'soft' or 'hard', got {c.mode!r}")
        if not c.temperature > 0:
            raise InputError("codebook.temperature must be positive")
        if d.n_instances < 2 or d.samples_per_instance < 2:
            raise InputError("dataset needs n_instances >= 2 and samples_per_instance >= 2")
        if d.cluster_spread < 0 or d.noise_scale < 0:
            raise InputError("dataset spreads must be non-negative")
        if o.batch_size % 2:
            raise InputError("optim.batch_size must be even (instance pairs)")
        if o.lr < 0 or o.steps < 0 or not o.margin > 0:
            raise InputError("optim.lr and optim.steps must be >= 0 and optim.margin > 0")
        if not self.eval.ks or any(k < 1 for k in self.eval.ks):
            raise InputError("eval.ks must be a non-empty list of positive integers")
        return self


def _flatten(mapping, prefix=""):
    out = {}
    for key, value in mapping.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            out.update(_flatten(value, name + "."))
        else:
            out[name] = value
    return out


def _coerce(raw, default, key):
    """Convert ``raw`` (JSON value or CLI string) to the type of ``default``."""
    try:
        if isinstance(default, bool):
            if isinstance(raw, str):
                if raw.lower() in ("1", "true", "yes", "on"):
                    return True
                if raw.lower() in ("0", "false", "no", "off"):
                    return False
                raise ValueError(raw)
            if not isinstance(raw, bool):
                raise ValueError(raw)
            return raw
        if isinstance(default, list):
            if isinstance(raw, str):
                raw = [item for item in raw.split(",") if item] if not raw.startswith("[") else json.loads(raw)
            items = list(raw)
            if default and isinstance(default[0], int):
                return [_as_int(item) for item in items]
            return [str(item) for item in items]
        if isinstance(default, int):
            return _as_int(raw)
        if isinstance(default, float):
            if isinstance(raw, bool):
                raise ValueError(raw)
            return float(raw)
        return str(raw)
    except (TypeError, ValueError) as exc:
        raise InputError(f"bad value for {key}: {raw!r}") from exc


def _as_int(raw):
    if isinstance(raw, bool):
        raise ValueError(raw)
    value = float(raw) if isinstance(raw, str) else raw
    if int(value) != value:
        raise ValueError(raw)
    return int(value)


def load_config(path=None, overrides=None):
    """Read a flat (or nested) JSON config file and apply ``key=value`` overrides."""
    cfg = RunConfig()
    if path is not None:
        with open(path) as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise InputError("config file must hold a JSON object")
        cfg.update(data)
    for item in overrides or ():
        if "=" not in item:
            raise InputError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        cfg.update({key.strip(): value.strip()})
    return cfg.validate()


def rng_stream(seed, name):
    """Independent generator for a named purpose (``dataset``, ``init``, ``batches`` ...)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())]))


def stream_seed(seed, name):
    return int(rng_stream(seed, name).integers(2**31 - 1))
