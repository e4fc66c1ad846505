"""
Configuration - typed tracker and evaluation settings loaded from flat key=value files
"""
import logging
from enum import Enum
from pathlib import Path
from typing import Dict, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from app.services.errors import ConfigError

logger = logging.getLogger(__name__)


class Variant(str, Enum):
    """Ablation variants: which automatic regularizers are active"""
    STRCF = "strcf"
    ASR = "asr"
    ATR = "atr"
    AUTOTRACK = "autotrack"


class TrackerConfig(BaseModel):
    """Every tunable of the tracker. Defaults are the published AutoTrack settings."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    # automatic regularization
    delta: float = Field(0.2, ge=0)
    nu: float = Field(2e-5, ge=0)
    zeta: float = Field(13.0, ge=0)
    phi: float = Field(3000.0, ge=0)
    log_base: Literal["e", "10"] = "e"
    cease_mode: Literal["skip", "penalize"] = "skip"

    # variant wiring
    variant: Variant = Variant.AUTOTRACK
    temporal_adaptive: bool = True
    theta_fixed: float = Field(15.0, ge=0)

    # ADMM
    admm_iters: int = Field(4, ge=1)
    gamma0: float = Field(1.0, gt=0)
    beta: float = Field(10.0, ge=1)
    gamma_max: float = Field(10000.0, gt=0)

    # search region, features and scale
    cell_size: int = Field(4, ge=1)
    padding: float = Field(4.0, gt=1)
    model_max_side: int = Field(200, ge=8)
    scales: int = Field(5, ge=1)
    scale_step: float = Field(1.01, ge=1)
    scale_damping: float = Field(0.99, gt=0, le=1)
    min_scale_factor: float = Field(0.2, gt=0)
    max_scale_factor: float = Field(5.0, gt=0)
    use_fhog: bool = True
    use_gray: bool = True
    use_cn: bool = False

    # base spatial weights and label
    u_min: float = Field(0.1, ge=0)
    u_slope: float = Field(3.0, ge=0)
    label_sigma_factor: float = Field(0.1, gt=0)

    @model_validator(mode="after")
    def _check_consistency(self):
        if self.gamma_max < self.gamma0:
            raise ValueError("gamma_max must be >= gamma0")
        if self.scales % 2 == 0:
            raise ValueError("scales must be odd")
        if not (self.use_fhog or self.use_gray or self.use_cn):
            raise ValueError("use_fhog, use_gray and use_cn cannot all be false")
        if self.max_scale_factor < self.min_scale_factor:
            raise ValueError("max_scale_factor must be >= min_scale_factor")
        return self


class EvalOptions(BaseModel):
    """Bench and pose options sharing the config file with the tracker"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    pooled_precision: bool = False
    workers: int = Field(1, ge=1)
    precision_threshold: float = Field(20.0, ge=0)
    correspondence_hysteresis: float = Field(3.0, ge=1)


def parse_config_text(text: str) -> Dict[str, str]:
    """Parse flat ``key=value`` text. ``#`` starts a comment; blank lines are ignored."""
    values: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("config-invalid", f"line {lineno}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError("config-invalid", f"line {lineno}: empty key")
        values[key] = value
    return values


def _build(model: type, values: Dict[str, str]) -> BaseModel:
    try:
        return model.model_validate(values)
    except ValidationError as e:
        error = e.errors()[0]
        loc = error.get("loc") or ()
        # model-level checks carry no field location, only their message
        detail = str(loc[0]) if loc else str(error.get("msg", "")).removeprefix("Value error, ")
        raise ConfigError("config-invalid", detail) from e


def settings_from_mapping(values: Dict[str, str]) -> Tuple[TrackerConfig, EvalOptions]:
    tracker_keys = set(TrackerConfig.model_fields)
    eval_keys = set(EvalOptions.model_fields)
    for key in values:
        if key not in tracker_keys and key not in eval_keys:
            raise ConfigError("config-unknown-key", key)

    cfg = _build(TrackerConfig, {k: v for k, v in values.items() if k in tracker_keys})
    options = _build(EvalOptions, {k: v for k, v in values.items() if k in eval_keys})
    return cfg, options


def load_settings(path: Optional[Union[str, Path]] = None) -> Tuple[TrackerConfig, EvalOptions]:
    """Load tracker config and evaluation options; absent keys take their defaults"""
    if path is None:
        return TrackerConfig(), EvalOptions()

    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError("config-invalid", f"cannot read {path}: {e}") from e

    cfg, options = settings_from_mapping(parse_config_text(text))
    logger.info("Loaded config from %s (variant=%s)", path, cfg.variant.value)
    return cfg, options


def load_config(path: Optional[Union[str, Path]] = None) -> TrackerConfig:
    return load_settings(path)[0]


def _format_value(value) -> str:
    if isinstance(value, Enum):
        return str(value.value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dump_config(cfg: TrackerConfig, options: Optional[EvalOptions] = None) -> str:
    """Serialise back to the flat format; loading the output gives an identical config"""
    lines = [f"{key}={_format_value(getattr(cfg, key))}" for key in TrackerConfig.model_fields]
    if options is not None:
        lines += [f"{key}={_format_value(getattr(options, key))}" for key in EvalOptions.model_fields]
    return "\n".join(lines) + "\n"


def config_echo(cfg: TrackerConfig, options: Optional[EvalOptions] = None) -> Dict:
    """The effective config as a JSON-ready dict, embedded in every report"""
    echo = cfg.model_dump(mode="json")
    if options is not None:
        echo.update(options.model_dump(mode="json"))
    return echo
