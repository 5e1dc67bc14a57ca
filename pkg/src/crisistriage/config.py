"""Run configuration: one JSON document, overridden by command-line flags.

Precedence is defaults < config file < flags. Backend credentials never come
from here; the endpoint and token are read from ``TRIAGE_BACKEND_URL`` and
``TRIAGE_BACKEND_TOKEN`` at connection time.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Optional

from .augmentation import ChunkConfig
from .evaluation import PipelineConfig
from .modeling import TrainConfig
from .reasoning import TafConfig

SECRET_KEYS = frozenset({"token", "api_key", "apikey", "password", "secret", "authorization", "url", "base_url"})


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TextBackendConfig:
    model: str = "default"
    timeout: float = 60.0
    max_retries: int = 3
    backoff_s: float = 0.5
    temperature: float = 0.0
    max_attempts: int = 2


@dataclass(frozen=True)
class AnnotatorConfig:
    audio_uri_template: Optional[str] = None
    speakers: tuple[str, ...] = ("caller",)
    max_in_flight: int = 4


@dataclass(frozen=True)
class SvmSection:
    c: float = 1.0
    gamma: Any = "scale"
    class_weight: Any = "balanced"
    tolerance: float = 1e-3
    max_passes: int = 100_000


@dataclass(frozen=True)
class AcousticSection:
    features_csv: Optional[str] = None
    audio_dir: Optional[str] = None
    synthetic_audio: bool = False
    sample_rate: int = 8000
    time_scale: float = 0.02


@dataclass(frozen=True)
class RunConfig:
    corpus: Optional[str] = None
    output_dir: str = "runs"
    name: str = "Ours"
    seed: int = 0
    k: int = 5
    use_augmentation: bool = True
    include_annotations: bool = True
    use_auxiliary_loss: bool = True
    reasoning_mode: str = "template"
    aggregation: str = "vote"
    chunk: ChunkConfig = field(default_factory=ChunkConfig)
    taf: TafConfig = field(default_factory=TafConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    model_backend: dict = field(default_factory=dict)
    text_backend: TextBackendConfig = field(default_factory=TextBackendConfig)
    annotator: AnnotatorConfig = field(default_factory=AnnotatorConfig)
    svm: SvmSection = field(default_factory=SvmSection)
    acoustic: AcousticSection = field(default_factory=AcousticSection)

    def __post_init__(self) -> None:
        if self.reasoning_mode not in ("template", "backend"):
            raise ConfigError(f"reasoning_mode must be 'template' or 'backend', got {self.reasoning_mode!r}")
        if self.aggregation not in ("vote", "mean"):
            raise ConfigError(f"aggregation must be 'vote' or 'mean', got {self.aggregation!r}")
        if self.k < 2:
            raise ConfigError("k must be >= 2")

    def pipeline(self) -> PipelineConfig:
        train = replace(
            self.train,
            include_annotations=self.include_annotations,
            use_auxiliary_loss=self.use_auxiliary_loss,
        )
        return PipelineConfig(
            name=self.name,
            k=self.k,
            seed=self.seed,
            chunk=self.chunk,
            taf=self.taf,
            train=train,
            backend=dict(self.model_backend),
            use_augmentation=self.use_augmentation,
            reasoning_mode=self.reasoning_mode,
            aggregation=self.aggregation,
        )

    def to_dict(self) -> dict[str, Any]:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, TafConfig):
                value = value.to_dict()
            elif hasattr(value, "__dataclass_fields__"):
                value = asdict(value)
            out[f.name] = value
        return json.loads(json.dumps(out))  # tuples -> lists


_SECTIONS = {
    "chunk": ChunkConfig,
    "train": TrainConfig,
    "text_backend": TextBackendConfig,
    "annotator": AnnotatorConfig,
    "svm": SvmSection,
    "acoustic": AcousticSection,
}
_TUPLES = {("annotator", "speakers"), ("taf", "level_thresholds")}


def _reject_secrets(data: dict, where: str) -> None:
    for key, value in data.items():
        if key.lower() in SECRET_KEYS:
            raise ConfigError(
                f"{where}{key}: backend endpoints and credentials come from the environment "
                "(TRIAGE_BACKEND_URL, TRIAGE_BACKEND_TOKEN), not from config files"
            )
        if isinstance(value, dict):
            _reject_secrets(value, f"{where}{key}.")


def _section(cls, name: str, data: Any):
    if not isinstance(data, dict):
        raise ConfigError(f"{name}: expected an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{name}: unknown keys {unknown}")
    kwargs = {k: tuple(v) if (name, k) in _TUPLES and isinstance(v, list) else v for k, v in data.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from None


def config_from_dict(data: dict[str, Any], base_dir: str | Path = ".") -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    _reject_secrets(data, "")
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown keys {unknown}")
    kwargs: dict[str, Any] = {}
    for key, value in data.items():
        if key in _SECTIONS:
            kwargs[key] = _section(_SECTIONS[key], key, value)
        elif key == "taf":
            if not isinstance(value, dict) or set(value) - {"level_thresholds"}:
                raise ConfigError("taf: only 'level_thresholds' is configurable")
            try:
                kwargs[key] = TafConfig(tuple(value.get("level_thresholds", (6, 8))))
            except ValueError as exc:
                raise ConfigError(f"taf: {exc}") from None
        elif key == "model_backend":
            if not isinstance(value, dict):
                raise ConfigError("model_backend: expected an object")
            kwargs[key] = dict(value)
        else:
            kwargs[key] = value
    try:
        cfg = RunConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return resolve_paths(cfg, base_dir)


def resolve_paths(cfg: RunConfig, base_dir: str | Path = ".") -> RunConfig:
    """Make input paths absolute relative to ``base_dir`` and check they exist."""
    base = Path(base_dir)

    def check(value: Optional[str], label: str) -> Optional[str]:
        if value is None:
            return None
        p = Path(value)
        if not p.is_absolute():
            p = base / p
        if not p.exists():
            raise ConfigError(f"{label}: path does not exist: {value}")
        return str(p)

    acoustic = replace(
        cfg.acoustic,
        features_csv=check(cfg.acoustic.features_csv, "acoustic.features_csv"),
        audio_dir=check(cfg.acoustic.audio_dir, "acoustic.audio_dir"),
    )
    return replace(cfg, corpus=check(cfg.corpus, "corpus"), acoustic=acoustic)


def load_config(path: str | Path | None, overrides: Optional[dict[str, Any]] = None) -> RunConfig:
    """Read ``path`` (or start from defaults) and apply flag ``overrides``.

    Override keys are top-level names or ``section.key`` (e.g. ``train.epochs``);
    ``None`` values are ignored so unset flags leave file values alone.
    """
    data: dict[str, Any] = {}
    base_dir: Path = Path(".")
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        base_dir = p.parent
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if "." in key:
            section, sub = key.split(".", 1)
            data.setdefault(section, {})
            if not isinstance(data[section], dict):
                raise ConfigError(f"{section}: expected an object")
            data[section][sub] = value
        else:
            data[key] = value
    # flag-supplied paths are relative to the working directory, file paths to the file
    flag_paths = {k for k, v in (overrides or {}).items() if v is not None}
    cfg = config_from_dict({k: v for k, v in data.items() if k != "corpus"}, base_dir)
    corpus = data.get("corpus")
    if corpus is not None:
        cfg = resolve_paths(replace(cfg, corpus=corpus), "." if "corpus" in flag_paths else base_dir)
    return cfg
