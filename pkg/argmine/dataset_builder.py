"""Stance and relation examples, document-level splits and training scenarios."""

import json
import logging
import math
import random
from collections import Counter
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator

from argmine.argument_graph import (
    ArgumentGraph,
    RelationType,
    Stance,
    adu_text,
    argumentative_edges,
    undercut_endpoints,
)
from argmine.corpus_io import Corpus, pair_parallel
from argmine.errors import CorpusError, DatasetError
from argmine.utils import digest, read_jsonl, write_jsonl

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")


class Scenario(str, Enum):
    ZERO_SHOT = "zero_shot"
    LLM_AUG = "llm_aug"
    CROSS_LINGUAL = "cross_lingual"


class StanceExample(BaseModel):
    model_config = ConfigDict(frozen=True)

    doc_id: str
    adu_id: str
    text: str = Field(min_length=1)
    label: Stance
    language: str = "en"
    origin: str = Field(default="corpus", description="corpus, or synthetic:<generator>")


class RelationExample(BaseModel):
    model_config = ConfigDict(frozen=True)

    doc_id: str
    edge_id: str
    text_a: str = Field(description="Source ADU text")
    text_b: str = Field(description="Target ADU text (attacked inference source for undercuts)")
    label: RelationType
    language: str = "en"

    @field_validator("label")
    @classmethod
    def _no_segment(cls, v: RelationType) -> RelationType:
        if v == RelationType.SEGMENT:
            raise ValueError("segment relations are not classification labels")
        return v


class SplitAssignment(BaseModel):
    assignment: Dict[str, str] = Field(description="doc_id -> train/val/test")
    seed: int

    def ids(self, split: str) -> List[str]:
        return sorted(k for k, v in self.assignment.items() if v == split)


class ScenarioConfig(BaseModel):
    scenario: Scenario = Scenario.ZERO_SHOT
    ratios: Tuple[float, float, float] = (0.7, 0.1, 0.2)
    seed: int = 13
    allow_empty: bool = False


class BundleManifest(BaseModel):
    scenario: Scenario
    seed: int
    config: dict
    sizes: Dict[str, int]
    stance_histogram: Dict[str, Dict[str, int]]
    test_languages: List[str]
    digest: str


class DatasetBundle(BaseModel):
    scenario: Scenario
    stance_train: List[StanceExample] = Field(default_factory=list)
    stance_val: List[StanceExample] = Field(default_factory=list)
    stance_test: List[StanceExample] = Field(default_factory=list)
    relation_train: List[RelationExample] = Field(default_factory=list)
    relation_val: List[RelationExample] = Field(default_factory=list)
    relation_test: List[RelationExample] = Field(default_factory=list)
    splits: Optional[SplitAssignment] = None
    manifest: Optional[BundleManifest] = None

    def examples(self, task: str, split: str) -> list:
        return getattr(self, f"{task}_{split}")


def extract_stance_examples(g: ArgumentGraph) -> List[StanceExample]:
    return [
        StanceExample(doc_id=g.doc_id, adu_id=a.id, text=adu_text(g, a.id), label=a.stance, language=g.language)
        for a in g.adus
    ]


def extract_relation_examples(g: ArgumentGraph) -> List[RelationExample]:
    examples = []
    for e in argumentative_edges(g):
        if e.rel == RelationType.UNDERCUT:
            source, target = undercut_endpoints(g, e)
        else:
            source, target = e.source, e.target
        examples.append(RelationExample(doc_id=g.doc_id, edge_id=e.id, text_a=adu_text(g, source),
                                        text_b=adu_text(g, target), label=e.rel, language=g.language))
    return examples


def make_splits(corpus_ids: Sequence[str], ratios: Sequence[float], seed: int,
                allow_empty: bool = False) -> SplitAssignment:
    """Seeded document-level split.

    Train and val sizes are floored; the remainder goes to test.
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise DatasetError("BAD_RATIOS", f"ratios {tuple(ratios)} must be three non-negative values summing to 1")
    ids = sorted(set(corpus_ids))
    random.Random(seed).shuffle(ids)
    n = len(ids)
    n_train = math.floor(ratios[0] * n + 1e-9)
    n_val = math.floor(ratios[1] * n + 1e-9)
    sizes = {"train": n_train, "val": n_val, "test": n - n_train - n_val}
    empty = [name for name, size in sizes.items() if size == 0]
    if empty and not allow_empty:
        raise DatasetError("EMPTY_SPLIT", f"split(s) {', '.join(empty)} would be empty", {"sizes": sizes})

    assignment = {}
    for i, doc_id in enumerate(ids):
        assignment[doc_id] = "train" if i < n_train else "val" if i < n_train + n_val else "test"
    return SplitAssignment(assignment=assignment, seed=seed)


def label_histogram(examples: Iterable) -> Dict[str, int]:
    counts = Counter(e.label.value for e in examples)
    return dict(sorted(counts.items()))


def _collect(corpus: Corpus, splits: SplitAssignment, keep: Iterable[str]) -> Dict[str, tuple]:
    keep = set(keep)
    out = {s: ([], []) for s in SPLITS}
    for g in corpus.documents:
        split = splits.assignment.get(g.doc_id)
        if split is None:
            logger.warning("%s document %s has no split assignment; skipped", corpus.language, g.doc_id)
            continue
        if split not in keep:
            continue
        out[split][0].extend(extract_stance_examples(g))
        out[split][1].extend(extract_relation_examples(g))
    return out


def assemble_scenario(cfg: ScenarioConfig, en: Corpus, fa: Optional[Corpus] = None,
                      synth: Optional[List[StanceExample]] = None) -> DatasetBundle:
    """Build the train/val/test example lists for one training scenario."""
    splits = make_splits(en.doc_ids(), cfg.ratios, cfg.seed, allow_empty=cfg.allow_empty)

    fa_splits: Tuple[str, ...] = ("test",)
    if cfg.scenario == Scenario.LLM_AUG and not synth:
        raise DatasetError("MISSING_SYNTH", "llm_aug needs accepted synthetic ADUs")
    if cfg.scenario == Scenario.CROSS_LINGUAL:
        if fa is None:
            raise DatasetError("UNPAIRED_FA", "cross_lingual needs the Persian corpus")
        try:
            pair_parallel(en, fa)
        except CorpusError as e:
            raise DatasetError("UNPAIRED_FA", str(e), e.details) from e
        fa_splits = SPLITS
    if fa is None:
        logger.warning("No Persian corpus given; only the English test set is available")

    parts = {"en": _collect(en, splits, SPLITS)}
    if fa is not None:
        parts["fa"] = _collect(fa, splits, fa_splits)

    lists = {}
    for split in SPLITS:
        lists[f"stance_{split}"] = [x for lang in parts for x in parts[lang][split][0]]
        lists[f"relation_{split}"] = [x for lang in parts for x in parts[lang][split][1]]
    if cfg.scenario == Scenario.LLM_AUG:
        # synthetic ADUs only ever join the stance task
        lists["stance_train"] = lists["stance_train"] + [s.model_copy(update={"language": "en"}) for s in synth]

    bundle = DatasetBundle(scenario=cfg.scenario, splits=splits, **lists)
    bundle.manifest = build_manifest(bundle, cfg, sorted(parts))
    logger.info("Assembled %s bundle: %s", cfg.scenario.value, bundle.manifest.sizes)
    return bundle


def _content_records(bundle: DatasetBundle) -> Dict[str, List[dict]]:
    return {
        f"{task}_{split}": [x.model_dump(mode="json") for x in bundle.examples(task, split)]
        for task in ("stance", "relation") for split in SPLITS
    }


def build_manifest(bundle: DatasetBundle, cfg: ScenarioConfig, test_languages: List[str]) -> BundleManifest:
    config = cfg.model_dump(mode="json")
    contents = _content_records(bundle)
    return BundleManifest(
        scenario=bundle.scenario,
        seed=cfg.seed,
        config=config,
        sizes={name: len(records) for name, records in contents.items()},
        stance_histogram={s: label_histogram(bundle.examples("stance", s)) for s in SPLITS},
        test_languages=test_languages,
        digest=digest(config, contents),
    )


def save_bundle(bundle: DatasetBundle, directory) -> Dict[str, str]:
    """Persist each example list as JSONL plus manifest.json; returns file digests."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    digests = {}
    for name, records in _content_records(bundle).items():
        digests[f"{name}.jsonl"] = write_jsonl(directory / f"{name}.jsonl", records)
    if bundle.splits is not None:
        (directory / "splits.json").write_text(bundle.splits.model_dump_json(indent=2), encoding="utf-8")
    manifest = bundle.manifest.model_dump(mode="json") if bundle.manifest else {}
    (directory / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return digests


def load_bundle(directory) -> DatasetBundle:
    directory = Path(directory)
    manifest = BundleManifest.model_validate_json((directory / "manifest.json").read_text(encoding="utf-8"))
    lists = {}
    for task, model in (("stance", StanceExample), ("relation", RelationExample)):
        for split in SPLITS:
            path = directory / f"{task}_{split}.jsonl"
            lists[f"{task}_{split}"] = [model.model_validate(r) for r in read_jsonl(path)] if path.exists() else []
    splits = None
    if (directory / "splits.json").exists():
        splits = SplitAssignment.model_validate_json((directory / "splits.json").read_text(encoding="utf-8"))
    return DatasetBundle(scenario=manifest.scenario, splits=splits, manifest=manifest, **lists)
