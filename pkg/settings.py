import math
import os
from dataclasses import dataclass, field, fields, replace

from dotenv import dotenv_values

from utils import get_logger, parse_bool, validate_range

logger = get_logger(__name__)


class SettingsError(ValueError):
    """Raised for malformed or inconsistent configuration."""


@dataclass(frozen=True)
class ScaleConfig:
    """Acoustic and LM scales applied when combining arc scores."""

    acoustic_scale: float = 0.1
    lm_scale: float = 1.0

    def __post_init__(self):
        for name in ("acoustic_scale", "lm_scale"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise SettingsError(f"{name} must be a positive finite number, got {value!r}")


@dataclass(frozen=True)
class InterpolationConfig:
    """How KN and neural LM probabilities are mixed during rescoring."""

    kn_weight: float = 0.6
    scales: ScaleConfig = field(default_factory=ScaleConfig)
    nbest_size: int = 100
    state_cap: int = 50_000

    def __post_init__(self):
        if not 0.0 <= self.kn_weight <= 1.0:
            raise SettingsError(f"kn_weight must lie in [0, 1], got {self.kn_weight}")
        if self.nbest_size < 1:
            raise SettingsError(f"nbest_size must be >= 1, got {self.nbest_size}")
        if self.state_cap < 1:
            raise SettingsError(f"state_cap must be >= 1, got {self.state_cap}")


@dataclass(frozen=True)
class NeuralLMConfig:
    """Size, optimisation and letter-feature settings of the recurrent LM."""

    dim: int = 32
    epochs: int = 5
    learning_rate: float = 0.1
    seed: int = 1
    clip_norm: float = 5.0
    init_scale: float = 0.1
    letter_features: bool = False
    ngram_min: int = 2
    ngram_max: int = 5
    hash_slots: int = 10_000

    def __post_init__(self):
        if self.dim < 1:
            raise SettingsError(f"dim must be >= 1, got {self.dim}")
        if self.epochs < 0:
            raise SettingsError(f"epochs must be >= 0, got {self.epochs}")
        if not self.learning_rate > 0:
            raise SettingsError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 1 <= self.ngram_min <= self.ngram_max:
            raise SettingsError(
                f"letter n-gram range must satisfy 1 <= min <= max, got [{self.ngram_min}, {self.ngram_max}]"
            )
        if self.hash_slots < 1:
            raise SettingsError(f"hash_slots must be >= 1, got {self.hash_slots}")


@dataclass(frozen=True)
class AugmentationConfig:
    """Candidate count and per-class scaling factors for embedding enrichment."""

    k: int = 5
    theta_rare: float = 0.09
    theta_oov: float = 0.01
    strategy: str = "frequent"

    def __post_init__(self):
        if self.k < 1:
            raise SettingsError(f"k must be >= 1, got {self.k}")
        if self.theta_rare < 0 or self.theta_oov < 0:
            raise SettingsError("theta values must be non-negative")
        if self.strategy not in ("frequent", "random"):
            raise SettingsError(f"Unknown candidate strategy: {self.strategy}")


@dataclass(frozen=True)
class BoostConfig:
    """Additive natural-log bonus given to NE hits in the inverted index."""

    bonus: float = math.log(4.0)

    def __post_init__(self):
        if not (math.isfinite(self.bonus) and self.bonus >= 0):
            raise SettingsError(f"boost bonus must be finite and >= 0, got {self.bonus}")


# Flat defaults of the pipeline config file
DEFAULT_PIPELINE_SETTINGS = {
    "train_corpus": "",
    "test_references": "",
    "lattices": "",
    "ne_list": "",
    "candidate_map": "",
    "lexicon": "",
    "pronunciations": "",
    "seed": 1,
    "frequency_threshold": 10,
    "kn_order": 4,
    "kn_weight": 0.6,
    "nbest": 100,
    "state_cap": 50_000,
    "acoustic_scale": 0.1,
    "lm_scale": 1.0,
    "nlm_dim": 32,
    "nlm_epochs": 5,
    "nlm_learning_rate": 0.1,
    "nlm_clip_norm": 5.0,
    "letter_ngram_min": 2,
    "letter_ngram_max": 5,
    "letter_slots": 10_000,
    "num_candidates": 5,
    "candidate_strategy": "frequent",
    "theta_rare": 0.09,
    "theta_oov": 0.01,
    "boost_bonus": math.log(4.0),
    "stage_lexicon": True,
    "stage_nlm": True,
    "stage_letter_features": True,
    "stage_augment": True,
    "stage_boost": True,
    "jobs": 1,
}

_PATH_KEYS = (
    "train_corpus",
    "test_references",
    "lattices",
    "ne_list",
    "candidate_map",
    "lexicon",
    "pronunciations",
)


@dataclass(frozen=True)
class PipelineSettings:
    """Resolved settings of one ablation run."""

    train_corpus: str
    test_references: str
    lattices: str
    ne_list: str
    candidate_map: str = ""
    lexicon: str = ""
    pronunciations: str = ""
    seed: int = 1
    frequency_threshold: int = 10
    kn_order: int = 4
    interpolation: InterpolationConfig = field(default_factory=InterpolationConfig)
    nlm: NeuralLMConfig = field(default_factory=NeuralLMConfig)
    augmentation: AugmentationConfig = field(default_factory=AugmentationConfig)
    boost: BoostConfig = field(default_factory=BoostConfig)
    stage_lexicon: bool = True
    stage_nlm: bool = True
    stage_letter_features: bool = True
    stage_augment: bool = True
    stage_boost: bool = True
    jobs: int = 1

    @property
    def scales(self):
        return self.interpolation.scales

    def with_stages(self, **toggles):
        """Return a copy with some stage toggles changed."""
        unknown = set(toggles) - {f.name for f in fields(self) if f.name.startswith("stage_")}
        if unknown:
            raise SettingsError(f"Unknown stage toggles: {sorted(unknown)}")
        return replace(self, **toggles)


def _coerce(key, raw):
    default = DEFAULT_PIPELINE_SETTINGS[key]
    try:
        if isinstance(default, bool):
            return parse_bool(raw)
        if isinstance(default, int):
            return int(str(raw).strip())
        if isinstance(default, float):
            return validate_range(key, raw)
        return str(raw).strip()
    except ValueError as e:
        raise SettingsError(f"Invalid value for {key}: {e}")


def settings_from_dict(values, base_dir="."):
    """
    Build PipelineSettings from a flat mapping of config keys.

    Args:
        values: Mapping of config keys to raw (string or typed) values
        base_dir: Directory relative file paths are resolved against

    Returns:
        PipelineSettings: Validated settings
    """
    unknown = sorted(set(values) - set(DEFAULT_PIPELINE_SETTINGS))
    if unknown:
        raise SettingsError(f"Unknown config keys: {', '.join(unknown)}")

    merged = dict(DEFAULT_PIPELINE_SETTINGS)
    for key, raw in values.items():
        if raw is None:
            raise SettingsError(f"Config key {key} has no value")
        merged[key] = _coerce(key, raw)

    for key in _PATH_KEYS:
        if merged[key] and not os.path.isabs(merged[key]):
            merged[key] = os.path.normpath(os.path.join(base_dir, merged[key]))
    for key in ("train_corpus", "test_references", "lattices", "ne_list"):
        if not merged[key]:
            raise SettingsError(f"Config key {key} is required")

    if not 1 <= merged["kn_order"] <= 5:
        raise SettingsError(f"kn_order must lie in [1, 5], got {merged['kn_order']}")
    if merged["frequency_threshold"] < 1:
        raise SettingsError("frequency_threshold must be >= 1")
    if merged["jobs"] < 1:
        raise SettingsError("jobs must be >= 1")

    interpolation = InterpolationConfig(
        kn_weight=merged["kn_weight"],
        scales=ScaleConfig(merged["acoustic_scale"], merged["lm_scale"]),
        nbest_size=merged["nbest"],
        state_cap=merged["state_cap"],
    )
    nlm = NeuralLMConfig(
        dim=merged["nlm_dim"],
        epochs=merged["nlm_epochs"],
        learning_rate=merged["nlm_learning_rate"],
        seed=merged["seed"],
        clip_norm=merged["nlm_clip_norm"],
        ngram_min=merged["letter_ngram_min"],
        ngram_max=merged["letter_ngram_max"],
        hash_slots=merged["letter_slots"],
    )
    augmentation = AugmentationConfig(
        k=merged["num_candidates"],
        theta_rare=merged["theta_rare"],
        theta_oov=merged["theta_oov"],
        strategy=merged["candidate_strategy"],
    )
    return PipelineSettings(
        train_corpus=merged["train_corpus"],
        test_references=merged["test_references"],
        lattices=merged["lattices"],
        ne_list=merged["ne_list"],
        candidate_map=merged["candidate_map"],
        lexicon=merged["lexicon"],
        pronunciations=merged["pronunciations"],
        seed=merged["seed"],
        frequency_threshold=merged["frequency_threshold"],
        kn_order=merged["kn_order"],
        interpolation=interpolation,
        nlm=nlm,
        augmentation=augmentation,
        boost=BoostConfig(merged["boost_bonus"]),
        stage_lexicon=merged["stage_lexicon"],
        stage_nlm=merged["stage_nlm"],
        stage_letter_features=merged["stage_letter_features"],
        stage_augment=merged["stage_augment"],
        stage_boost=merged["stage_boost"],
        jobs=merged["jobs"],
    )


def load_settings(path):
    """
    Read a flat key=value pipeline config file.

    Only the file is consulted; environment variables are ignored.

    Args:
        path: Path of the config file

    Returns:
        PipelineSettings: Validated settings with paths resolved against
        the config file's directory
    """
    if not os.path.isfile(path):
        raise FileNotFoundError(f"Config file not found: {path}")
    values = dotenv_values(path, interpolate=False)
    logger.info(f"Loaded {len(values)} settings from {path}")
    return settings_from_dict(values, base_dir=os.path.dirname(os.path.abspath(path)))


def write_settings(path, values):
    """Write a flat key=value config file, keys in default order."""
    with open(path, "w", encoding="utf-8") as f:
        for key in DEFAULT_PIPELINE_SETTINGS:
            if key in values:
                value = values[key]
                if isinstance(value, bool):
                    value = "true" if value else "false"
                elif isinstance(value, float):
                    value = repr(value)
                f.write(f"{key}={value}\n")
