"""Class balancing with synthetic ADUs.

The plan tops every stance up to the same target count T. Candidates come
from a generator, go through a rule filter standing in for manual spot
checks, and are requested again until the plan is met or the call budget
runs out.
"""

import csv
import logging
import re
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from pydantic import BaseModel, Field, model_validator
from tqdm import tqdm

from argmine.argument_graph import Stance
from argmine.dataset_builder import StanceExample
from argmine.errors import AugmentationError
from argmine.generators import Generator, GeneratorSpec, make_generator, render_prompt
from argmine.utils import read_jsonl, write_jsonl

logger = logging.getLogger(__name__)

DEFAULT_TARGET = 665
MIN_TOKENS = 3
MAX_TOKENS = 128

SCRIPTS = {
    "en": re.compile(r"[A-Za-z\u00C0-\u024F]"),
    "fa": re.compile(r"[\u0600-\u06FF\u0750-\u077F\uFB50-\uFDFF\uFE70-\uFEFF]"),
}
_letters = re.compile(r"[^\W\d_]")


class RejectionReason(str, Enum):
    EMPTY = "EMPTY"
    TOO_SHORT = "TOO_SHORT"
    TOO_LONG = "TOO_LONG"
    DUPLICATE = "DUPLICATE"
    WRONG_LANGUAGE = "WRONG_LANGUAGE"


class AugmentationPlan(BaseModel):
    target_per_class: int = Field(gt=0)
    counts: Dict[Stance, int]
    deficits: Dict[Stance, int]


class SyntheticADU(BaseModel):
    text: str
    stance: Stance
    generator_name: str
    accepted: bool = False
    rejection_reason: Optional[RejectionReason] = None

    @model_validator(mode="after")
    def _accepted_iff_no_reason(self):
        if self.accepted == (self.rejection_reason is not None):
            raise ValueError("accepted must be true exactly when there is no rejection reason")
        return self


class GenerationBatch(BaseModel):
    candidates: List[SyntheticADU] = Field(default_factory=list)
    warnings: List[dict] = Field(default_factory=list)


class AugmentationRun(BaseModel):
    plan: AugmentationPlan
    accepted: List[SyntheticADU] = Field(default_factory=list)
    rejected: List[SyntheticADU] = Field(default_factory=list)
    generator_calls: int = 0
    warnings: List[dict] = Field(default_factory=list)


def plan_balance(counts: Dict, T: int) -> AugmentationPlan:
    if T <= 0:
        raise AugmentationError("BAD_TARGET", f"T must be positive, got {T}")
    try:
        counts = {Stance(k): int(v) for k, v in counts.items()}
    except ValueError as e:
        raise AugmentationError("UNKNOWN_LABEL", f"cannot plan for stance counts {counts!r}: {e}") from e
    for s in Stance:
        counts.setdefault(s, 0)
    if T < max(counts.values()):
        raise AugmentationError("TARGET_TOO_SMALL", f"T={T} is below the largest class count {max(counts.values())}")
    return AugmentationPlan(target_per_class=T, counts=counts,
                            deficits={s: max(0, T - c) for s, c in counts.items()})


def generate(spec: GeneratorSpec, stance: Stance, n: int, topic_hints: Sequence[str] = (),
             generator: Optional[Generator] = None) -> GenerationBatch:
    """Ask the generator for ``n`` candidates; a short answer is a warning, not an error."""
    if n <= 0:
        return GenerationBatch()
    generator = generator or make_generator(spec)
    topic = "; ".join(topic_hints) if topic_hints else "a current public policy question"
    texts = generator.complete(render_prompt(spec, stance, topic), stance, n, topic)[:n]
    batch = GenerationBatch(candidates=[
        SyntheticADU(text=t, stance=stance, generator_name=spec.name, accepted=True) for t in texts
    ])
    if len(texts) < n:
        warning = {"code": "GENERATION_SHORTFALL", "stance": stance.value, "requested": n, "received": len(texts)}
        batch.warnings.append(warning)
        logger.warning("%s returned %d of %d %s candidates", spec.name, len(texts), n, stance.value)
    return batch


def _dedup_key(text: str) -> str:
    return " ".join(text.casefold().split())


def _script_ratio(text: str, language: str) -> float:
    letters = _letters.findall(text)
    if not letters:
        return 0.0
    return sum(1 for ch in letters if SCRIPTS[language].match(ch)) / len(letters)


def filter_malformed(cands: Iterable[SyntheticADU], existing_texts: Iterable[str] = (), language: str = "en",
                     min_tokens: int = MIN_TOKENS, max_tokens: int = MAX_TOKENS,
                     script_threshold: float = 0.5) -> Tuple[List[SyntheticADU], List[SyntheticADU]]:
    """Split candidates into accepted and rejected by the malformed-output rules."""
    seen = {_dedup_key(t) for t in existing_texts}
    accepted, rejected = [], []
    for c in cands:
        tokens = len(c.text.split())
        reason = None
        if not c.text.strip():
            reason = RejectionReason.EMPTY
        elif tokens < min_tokens:
            reason = RejectionReason.TOO_SHORT
        elif tokens > max_tokens:
            reason = RejectionReason.TOO_LONG
        elif language in SCRIPTS and _script_ratio(c.text, language) < script_threshold:
            reason = RejectionReason.WRONG_LANGUAGE
        elif _dedup_key(c.text) in seen:
            reason = RejectionReason.DUPLICATE
        if reason is None:
            seen.add(_dedup_key(c.text))
            accepted.append(c.model_copy(update={"accepted": True, "rejection_reason": None}))
        else:
            rejected.append(c.model_copy(update={"accepted": False, "rejection_reason": reason}))
    return accepted, rejected


def run_augmentation(corpus_counts: Dict, spec: GeneratorSpec, T: int = DEFAULT_TARGET,
                     existing_texts: Iterable[str] = (), topic_hints: Sequence[str] = (),
                     batch_size: Optional[int] = None, max_calls: int = 50, language: str = "en",
                     generator: Optional[Generator] = None, progress: bool = False) -> AugmentationRun:
    """Generate, filter and retry until every class reaches T."""
    plan = plan_balance(corpus_counts, T)
    generator = generator or make_generator(spec)
    run = AugmentationRun(plan=plan)
    existing = list(existing_texts)

    for stance in Stance:
        need = plan.deficits[stance]
        got: List[SyntheticADU] = []
        calls = 0
        bar = tqdm(total=need, desc=f"augment {stance.value}", disable=not progress)
        while len(got) < need and calls < max_calls:
            topics = [topic_hints[calls % len(topic_hints)]] if topic_hints else []
            n = need - len(got) if batch_size is None else min(batch_size, need - len(got))
            calls += 1
            try:
                batch = generate(spec, stance, n, topics, generator=generator)
            except AugmentationError as e:
                if e.code != "FIXTURE_EXHAUSTED":
                    raise
                logger.warning("Fixture exhausted for %s after %d accepted", stance.value, len(got))
                break
            run.warnings.extend(batch.warnings)
            accepted, rejected = filter_malformed(
                batch.candidates, existing + [a.text for a in run.accepted + got], language=language)
            accepted = accepted[:need - len(got)]
            got.extend(accepted)
            run.rejected.extend(rejected)
            bar.update(len(accepted))
        bar.close()
        run.accepted.extend(got)

    run.generator_calls = generator.calls
    achieved = {s.value: sum(1 for a in run.accepted if a.stance == s) for s in Stance}
    deficits = {s.value: d for s, d in plan.deficits.items()}
    if any(achieved[s] < deficits[s] for s in achieved):
        raise AugmentationError("SHORTFALL", f"achieved {achieved} of deficits {deficits}",
                                {"achieved": achieved, "run": run.model_dump(mode="json")})
    logger.info("Accepted %s synthetic ADUs in %d generator calls", achieved, run.generator_calls)
    return run


def to_stance_examples(accepted: Iterable[SyntheticADU]) -> List[StanceExample]:
    examples = []
    for i, a in enumerate(accepted):
        origin = f"synthetic:{a.generator_name}"
        examples.append(StanceExample(doc_id=origin, adu_id=f"{a.generator_name}-{i:05d}", text=a.text,
                                      label=a.stance, language="en", origin=origin))
    return examples


def export_review_csv(rejected: Iterable[SyntheticADU], path) -> None:
    """Rejected candidates with reasons, for optional human review."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["generator", "stance", "reason", "text"])
        for r in rejected:
            writer.writerow([r.generator_name, r.stance.value, r.rejection_reason.value, r.text])


def save_synthetic(adus: Iterable[SyntheticADU], path) -> str:
    return write_jsonl(Path(path), (a.model_dump(mode="json") for a in adus))


def load_synthetic(path) -> List[SyntheticADU]:
    return [SyntheticADU.model_validate(r) for r in read_jsonl(Path(path))]
