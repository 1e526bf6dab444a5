import hashlib
import json
try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from s2osc.errors import ConfigError


class TrainConfig(BaseModel):
    """Mini-batch SGD settings shared by every trainer"""
    model_config = ConfigDict(frozen=True)

    epochs: int = Field(20, ge=0)
    batch_size: int = Field(64, gt=0)
    learning_rate: float = Field(0.01, gt=0)
    weight_decay: float = Field(0.001, ge=0)
    momentum: float = Field(0.9, ge=0, lt=1)
    seed: int = 0


class SslConfig(BaseModel):
    """Settings of the transductive classifier g"""
    model_config = ConfigDict(frozen=True)

    alpha: float = Field(0.3, ge=0)
    lambda_u: float = Field(0.2, ge=0)
    # tau = 0 is admitted here to express "retain every pseudo-label";
    # experiment configs keep it strictly inside (0, 1)
    tau: float = Field(0.85, ge=0, lt=1)
    temperature: float = Field(3.0, gt=0)
    train: TrainConfig = TrainConfig(epochs=30, batch_size=64, learning_rate=0.005, weight_decay=0.0005)
    variant: Literal['multiclass', 'binary_superclass'] = 'multiclass'
    init_from_f: bool = False
    fold_labeled: Optional[bool] = None

    @property
    def fold_labeled_into_unlabeled(self):
        if self.fold_labeled is not None:
            return self.fold_labeled
        return self.variant == 'binary_superclass'


class ExperimentConfig(BaseModel):
    """Flat experiment manifest; every field is also a CLI flag"""
    model_config = ConfigDict(frozen=True, populate_by_name=True, extra='forbid')

    images_path: Optional[str] = None
    labels_path: Optional[str] = None
    protocol: Literal['osc', 'iosc'] = 'osc'
    known_fraction: float = Field(0.5, gt=0, le=1)
    n_unknown: int = Field(1, ge=1)
    known_holdout: float = Field(0.33, gt=0, lt=1)
    subset_size: Optional[int] = Field(None, ge=1)

    K: int = Field(300, ge=1)
    lambda_: float = Field(1.0, ge=0, alias='lambda')
    alpha: float = Field(0.3, ge=0)
    lambda_u: float = Field(0.2, ge=0)
    tau: float = Field(0.85, gt=0, lt=1)
    temperature: float = Field(3.0, gt=0)
    variant: Literal['auto', 'multiclass', 'binary_superclass'] = 'auto'
    init_from_f: bool = False
    fold_labeled: Optional[bool] = None

    memory_size: int = Field(2000, ge=0)
    use_memory: bool = True
    class_arrival: Literal['single', 'multi'] = 'single'
    eval_fraction: float = Field(0.2, gt=0, lt=1)

    theta: float = Field(0.5, ge=0, le=1)
    n_clusters: Optional[int] = Field(None, ge=1)
    kmeans_max_iter: int = Field(100, ge=1)
    kmeans_tol: float = Field(1e-6, ge=0)
    kmeans_n_init: int = Field(10, ge=1)

    arch: Literal['small_cnn', 'mlp'] = 'small_cnn'
    embed_dim: int = Field(64, ge=1)
    hidden_dim: int = Field(0, ge=0)

    f_epochs: int = Field(20, ge=0)
    f_batch_size: int = Field(64, gt=0)
    f_lr: float = Field(0.01, gt=0)
    f_weight_decay: float = Field(0.001, ge=0)
    g_epochs: int = Field(30, ge=0)
    g_batch_size: int = Field(64, gt=0)
    g_lr: float = Field(0.005, gt=0)
    g_weight_decay: float = Field(0.0005, ge=0)
    u_epochs: int = Field(20, ge=0)
    u_batch_size: int = Field(64, gt=0)
    u_lr: float = Field(0.01, gt=0)
    u_weight_decay: float = Field(0.001, ge=0)
    momentum: float = Field(0.9, ge=0, lt=1)

    k_values: List[int] = [50, 300, 1000, 2000]
    seed: int = 0
    output_dir: str = 'runs/default'

    @model_validator(mode='after')
    def _check_sweep(self):
        if any(k < 1 for k in self.k_values):
            raise ValueError('k_values must all be >= 1')
        return self

    @property
    def resolved_variant(self):
        """Binary super-class path when several unknown classes are declared"""
        if self.variant != 'auto':
            return self.variant
        return 'multiclass' if self.n_unknown == 1 else 'binary_superclass'

    @property
    def resolved_n_clusters(self):
        return self.n_clusters or self.n_unknown

    def f_train_config(self, seed=None):
        return TrainConfig(epochs=self.f_epochs, batch_size=self.f_batch_size, learning_rate=self.f_lr,
                           weight_decay=self.f_weight_decay, momentum=self.momentum,
                           seed=self.seed if seed is None else seed)

    def update_train_config(self, seed=None):
        return TrainConfig(epochs=self.u_epochs, batch_size=self.u_batch_size, learning_rate=self.u_lr,
                           weight_decay=self.u_weight_decay, momentum=self.momentum,
                           seed=self.seed if seed is None else seed)

    def ssl_config(self, seed=None):
        train = TrainConfig(epochs=self.g_epochs, batch_size=self.g_batch_size, learning_rate=self.g_lr,
                            weight_decay=self.g_weight_decay, momentum=self.momentum,
                            seed=self.seed if seed is None else seed)
        return SslConfig(alpha=self.alpha, lambda_u=self.lambda_u, tau=self.tau,
                         temperature=self.temperature, train=train, variant=self.resolved_variant,
                         init_from_f=self.init_from_f, fold_labeled=self.fold_labeled)

    def with_overrides(self, **overrides):
        """New config with the given fields replaced (None values are ignored)"""
        data = self.model_dump(by_alias=True)
        for key, value in overrides.items():
            if value is None:
                continue
            data['lambda' if key == 'lambda_' else key] = value
        return parse_config(data)

    def to_toml(self):
        """Flat TOML text; None fields are omitted"""
        lines = []
        for key, value in self.model_dump(by_alias=True).items():
            if value is None:
                continue
            lines.append(f"{key} = {_toml_value(value)}")
        return '\n'.join(lines) + '\n'

    @classmethod
    def from_toml(cls, text):
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"invalid config file: {e}") from e
        return parse_config(data)

    def digest(self):
        """Stable hash of everything that affects results (output_dir excluded)"""
        data = self.model_dump(by_alias=True)
        data.pop('output_dir', None)
        return hashlib.sha256(json.dumps(data, sort_keys=True).encode()).hexdigest()[:16]


def parse_config(data):
    """Validate a mapping into an ExperimentConfig, raising ConfigError"""
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(str(e)) from e


def load_config(path=None, overrides=None):
    """flags > file > defaults"""
    cfg = ExperimentConfig()
    if path:
        try:
            with open(path, 'r', encoding='utf-8') as fh:
                cfg = ExperimentConfig.from_toml(fh.read())
        except OSError as e:
            raise ConfigError(f"cannot read config file {path}: {e}") from e
    if overrides:
        cfg = cfg.with_overrides(**overrides)
    return cfg


def _toml_value(value):
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return '[' + ', '.join(_toml_value(v) for v in value) + ']'
    return json.dumps(str(value))
