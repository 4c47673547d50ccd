"""Run configuration: one JSON file plus command-line overrides."""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, Field, ValidationError, model_validator

from argmine.dataset_builder import Scenario, ScenarioConfig
from argmine.errors import ConfigError
from argmine.generators import GeneratorSpec
from argmine.model_trainer import ModelConfig, TrainConfig
from argmine.utils import derive_seed, digest

logger = logging.getLogger(__name__)


class AugmentationConfig(BaseModel):
    generator: Optional[GeneratorSpec] = None
    target_per_class: int = Field(default=665, gt=0)
    batch_size: Optional[int] = Field(default=None, gt=0)
    max_calls: int = Field(default=50, gt=0)


class RunConfig(BaseModel):
    en_dir: Optional[Path] = Field(default=None, description="English Microtext XML directory")
    fa_dir: Optional[Path] = Field(default=None, description="Persian Microtext XML directory")
    pe_dir: Optional[Path] = Field(default=None, description="Persuasive Essays .ann/.txt directory")
    scenario: Scenario = Scenario.ZERO_SHOT
    ratios: Tuple[float, float, float] = (0.7, 0.1, 0.2)
    seed: int = 13
    augmentation: AugmentationConfig = Field(default_factory=AugmentationConfig)
    classifier: ModelConfig = Field(default_factory=ModelConfig)
    training: TrainConfig = Field(default_factory=TrainConfig)
    output_dir: Path = Path("out")
    strict: bool = True
    separate_heads_runs: bool = False
    case_docs: List[str] = Field(default_factory=list, description="Documents to write case reports for")

    @model_validator(mode="after")
    def _check(self):
        for name in ("en_dir", "fa_dir", "pe_dir"):
            path = getattr(self, name)
            if path is not None and not path.is_dir():
                raise ValueError(f"{name} {str(path)!r} is not a directory")
        if self.scenario == Scenario.LLM_AUG and self.augmentation.generator is None:
            raise ValueError("scenario llm_aug needs augmentation.generator")
        if self.scenario == Scenario.CROSS_LINGUAL and self.fa_dir is None:
            raise ValueError("scenario cross_lingual needs fa_dir")
        return self

    def seed_for(self, subsystem: str) -> int:
        return derive_seed(self.seed, subsystem)

    def scenario_config(self) -> ScenarioConfig:
        return ScenarioConfig(scenario=self.scenario, ratios=self.ratios, seed=self.seed_for("splits"))

    def digest(self) -> str:
        return digest(self.model_dump(mode="json", exclude={"output_dir"}))

    @property
    def run_id(self) -> str:
        return self.digest()[:12]

    @property
    def run_dir(self) -> Path:
        return self.output_dir / self.run_id


def _merge(base: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    out = dict(base)
    for key, value in overrides.items():
        if isinstance(value, dict):
            nested = _merge(out[key] if isinstance(out.get(key), dict) else {}, value)
            if nested:
                out[key] = nested
        elif value is not None:
            out[key] = value
    return out


def load_config(path: Optional[Path] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Parse the JSON config (if any) and apply overrides; overrides win."""
    data: Dict[str, Any] = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as e:
            raise ConfigError("NOT_FOUND", f"cannot read config {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigError("PARSE_ERROR", f"{path} is not valid JSON: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError("PARSE_ERROR", f"{path} must hold a JSON object")
    data = _merge(data, overrides or {})
    try:
        cfg = RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError("INVALID_CONFIG", str(e), {"errors": e.errors(include_url=False)}) from e
    logger.debug("Run config %s: %s", cfg.run_id, cfg.model_dump_json())
    return cfg
