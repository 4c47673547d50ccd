"""Shared-encoder classifier with a stance head and a relation head.

Both heads are single linear layers over the first-token ([CLS]) embedding of
the encoder. Training alternates mini-batches of the two tasks in proportion
to their sizes; each step back-propagates only the active task's loss, so the
other head is left untouched.
"""

import copy
import json
import logging
import math
import random
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from tokenizers import Tokenizer, models, normalizers, pre_tokenizers, processors, trainers
from torch import nn
from tqdm import tqdm
from transformers import AutoConfig, AutoModel, AutoTokenizer, PreTrainedTokenizerFast, XLMRobertaConfig, XLMRobertaModel

from argmine.argument_graph import RELATION_LABELS, STANCE_LABELS
from argmine.dataset_builder import DatasetBundle
from argmine.errors import ModelError
from argmine.evaluation import build_report

logger = logging.getLogger(__name__)

TASKS = ("stance", "relation")
TINY_ENCODER = "tiny"
DEFAULT_ENCODER = "xlm-roberta-base"
SPECIAL_TOKENS = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"]


class ModelConfig(BaseModel):
    encoder_id: str = Field(default=DEFAULT_ENCODER,
                            description="Local path, model-registry id, or 'tiny' for the 2-layer test profile")
    n_stance_classes: int = 2
    n_relation_classes: int = 4
    max_length: int = Field(default=128, gt=0, description="Token budget per input, special tokens included")

    @field_validator("n_stance_classes")
    @classmethod
    def _two_stances(cls, v: int) -> int:
        if v != 2:
            raise ValueError("the stance head always has two outputs (pro, con)")
        return v


class TrainConfig(BaseModel):
    learning_rate: float = Field(default=5e-6, gt=0)
    batch_size: int = Field(default=16, gt=0)
    max_epochs: int = Field(default=100, gt=0)
    early_stop_patience: int = Field(default=3, ge=1)
    weight_decay: float = 0.01
    grad_clip: Optional[float] = 1.0
    seed: int = 13
    device: str = "cpu"
    progress: bool = False


class EpochRecord(BaseModel):
    epoch: int
    train_loss: float
    eval_loss: float
    task_losses: Dict[str, float] = Field(default_factory=dict, description="Validation loss per task")
    task_macro_f1: Dict[str, float] = Field(default_factory=dict, description="Validation macro-F1 per task")


class Prediction(BaseModel):
    model_config = ConfigDict(frozen=True)

    label: str
    probabilities: List[float]
    classes: List[str]

    @model_validator(mode="after")
    def _normalised(self):
        if len(self.probabilities) != len(self.classes):
            raise ValueError("one probability per class is required")
        if any(p < 0 for p in self.probabilities) or abs(sum(self.probabilities) - 1.0) > 1e-6:
            raise ValueError("probabilities must be non-negative and sum to 1")
        if self.label != self.classes[int(np.argmax(self.probabilities))]:
            raise ValueError("label must be the argmax class")
        return self


class TwoHeadClassifier(nn.Module):
    def __init__(self, encoder: nn.Module, n_stance: int, n_relation: int):
        super().__init__()
        hidden = getattr(encoder.config, "hidden_size", None)
        if not hidden:
            raise ModelError("SHAPE_MISMATCH", "encoder config has no hidden_size")
        self.encoder = encoder
        self.stance_head = nn.Linear(hidden, n_stance)
        self.relation_head = nn.Linear(hidden, n_relation)

    def forward(self, task: str, **inputs) -> torch.Tensor:
        summary = self.encoder(**inputs).last_hidden_state[:, 0]
        head = self.stance_head if task == "stance" else self.relation_head
        return head(summary)


class ArgumentClassifier:
    """Network, tokenizer and config travelling together"""

    def __init__(self, net: TwoHeadClassifier, tokenizer, config: ModelConfig, device: str = "cpu"):
        self.net = net.to(device)
        self.tokenizer = tokenizer
        self.config = config
        self.device = device

    def classes(self, task: str) -> List[str]:
        if task == "stance":
            return [s.value for s in STANCE_LABELS]
        labels = [r.value for r in RELATION_LABELS]
        # extra relation outputs beyond the four known labels get placeholder names
        return (labels + [f"relation_{i}" for i in range(len(labels), self.config.n_relation_classes)])[
            :self.config.n_relation_classes]


class TrainedModel(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    classifier: ArgumentClassifier
    train_config: Optional[TrainConfig] = None
    tasks: List[str] = Field(default_factory=lambda: list(TASKS))
    initial_eval_loss: Optional[float] = None
    history: List[EpochRecord] = Field(default_factory=list)
    best_epoch: Optional[int] = None
    truncated: Dict[str, int] = Field(default_factory=dict, description="Training inputs cut at max_length, per task")

    @property
    def config(self) -> ModelConfig:
        return self.classifier.config


class EarlyStopping:
    """Tracks the best validation loss and decides when to stop."""

    def __init__(self, patience: int):
        if patience < 1:
            raise ValueError("patience must be at least 1")
        self.patience = patience
        self.best_loss = math.inf
        self.best_epoch = -1
        self.bad_epochs = 0
        self.best_state = None

    def step(self, epoch: int, loss: float, state_fn: Optional[Callable[[], dict]] = None) -> bool:
        """Record one epoch; returns True when training should stop."""
        if loss < self.best_loss:
            self.best_loss, self.best_epoch, self.bad_epochs = loss, epoch, 0
            if state_fn is not None:
                self.best_state = copy.deepcopy(state_fn())
        else:
            self.bad_epochs += 1
        return self.bad_epochs >= self.patience


def build_tiny_tokenizer(texts: Sequence[str], max_length: int) -> PreTrainedTokenizerFast:
    tok = Tokenizer(models.WordLevel(unk_token="[UNK]"))
    tok.normalizer = normalizers.Sequence([normalizers.NFKC(), normalizers.Lowercase()])
    tok.pre_tokenizer = pre_tokenizers.Whitespace()
    tok.train_from_iterator(list(texts), trainers.WordLevelTrainer(special_tokens=SPECIAL_TOKENS))
    cls_id, sep_id = tok.token_to_id("[CLS]"), tok.token_to_id("[SEP]")
    tok.post_processor = processors.TemplateProcessing(
        single="[CLS] $A [SEP]",
        pair="[CLS] $A [SEP] $B:0 [SEP]:0",
        special_tokens=[("[CLS]", cls_id), ("[SEP]", sep_id)],
    )
    return PreTrainedTokenizerFast(
        tokenizer_object=tok, unk_token="[UNK]", pad_token="[PAD]", cls_token="[CLS]", sep_token="[SEP]",
        model_max_length=max_length, model_input_names=["input_ids", "attention_mask"],
    )


def tiny_encoder_config(tokenizer, cfg: ModelConfig) -> XLMRobertaConfig:
    return XLMRobertaConfig(
        vocab_size=max(len(tokenizer), len(SPECIAL_TOKENS)),
        hidden_size=32,
        num_hidden_layers=2,
        num_attention_heads=2,
        intermediate_size=64,
        max_position_embeddings=cfg.max_length + 8,
        type_vocab_size=1,
        pad_token_id=tokenizer.pad_token_id,
        bos_token_id=tokenizer.cls_token_id,
        eos_token_id=tokenizer.sep_token_id,
    )


def _check_shapes(cfg: ModelConfig):
    if cfg.n_relation_classes < 2:
        raise ModelError("SHAPE_MISMATCH", f"n_relation_classes={cfg.n_relation_classes} is below 2")
    if cfg.n_relation_classes != len(RELATION_LABELS):
        logger.warning("Relation head built with %d outputs; the corpus defines %d relation labels",
                       cfg.n_relation_classes, len(RELATION_LABELS))


def build_model(cfg: ModelConfig, vocab_texts: Sequence[str] = (), seed: Optional[int] = None,
                device: str = "cpu") -> ArgumentClassifier:
    """Encoder plus two linear heads. ``vocab_texts`` only matters for the tiny profile."""
    _check_shapes(cfg)
    if seed is not None:
        torch.manual_seed(seed)
    if cfg.encoder_id == TINY_ENCODER:
        tokenizer = build_tiny_tokenizer(vocab_texts, cfg.max_length)
        encoder = XLMRobertaModel(tiny_encoder_config(tokenizer, cfg), add_pooling_layer=False)
    else:
        try:
            tokenizer = AutoTokenizer.from_pretrained(cfg.encoder_id)
            encoder = AutoModel.from_pretrained(cfg.encoder_id)
        except (OSError, ValueError) as e:
            raise ModelError("ENCODER_NOT_FOUND", f"cannot resolve encoder {cfg.encoder_id!r}: {e}") from e
    net = TwoHeadClassifier(encoder, cfg.n_stance_classes, cfg.n_relation_classes)
    logger.info("Built %s classifier (hidden %d)", cfg.encoder_id, encoder.config.hidden_size)
    return ArgumentClassifier(net, tokenizer, cfg, device=device)


def _classifier(model: Union[ArgumentClassifier, TrainedModel]) -> ArgumentClassifier:
    return model.classifier if isinstance(model, TrainedModel) else model


def _encode(clf: ArgumentClassifier, texts_a: List[str], texts_b: Optional[List[str]] = None) -> Dict[str, torch.Tensor]:
    for t in texts_a + (texts_b or []):
        if not t or not t.strip():
            raise ModelError("TOKENIZE_ERROR", "cannot tokenize empty text")
    enc = clf.tokenizer(texts_a, texts_b, padding=True, truncation=True, max_length=clf.config.max_length,
                        return_tensors="pt")
    return {k: v.to(clf.device) for k, v in enc.items()}


def count_truncated(clf: ArgumentClassifier, texts_a: List[str], texts_b: Optional[List[str]] = None) -> int:
    """How many inputs exceed max_length before truncation."""
    if not texts_a:
        return 0
    ids = clf.tokenizer(texts_a, texts_b, truncation=False)["input_ids"]
    return sum(1 for x in ids if len(x) > clf.config.max_length)


def _inputs(task: str, examples) -> Tuple[List[str], Optional[List[str]]]:
    if task == "stance":
        return [e.text for e in examples], None
    return [e.text_a for e in examples], [e.text_b for e in examples]


def _targets(clf: ArgumentClassifier, task: str, examples) -> torch.Tensor:
    classes = clf.classes(task)
    return torch.tensor([classes.index(e.label.value) for e in examples], dtype=torch.long, device=clf.device)


def make_optimizer(clf: ArgumentClassifier, tcfg: TrainConfig) -> torch.optim.Optimizer:
    return torch.optim.AdamW(clf.net.parameters(), lr=tcfg.learning_rate, weight_decay=tcfg.weight_decay)


def train_step(clf: ArgumentClassifier, optimizer: torch.optim.Optimizer, task: str, examples,
               grad_clip: Optional[float] = None) -> float:
    """One optimizer step on one task's mini-batch; returns the batch loss."""
    clf.net.train()
    optimizer.zero_grad(set_to_none=True)
    texts_a, texts_b = _inputs(task, examples)
    logits = clf.net(task, **_encode(clf, texts_a, texts_b))
    loss = nn.functional.cross_entropy(logits, _targets(clf, task, examples))
    if not torch.isfinite(loss):
        return float("nan")
    loss.backward()
    if grad_clip:
        nn.utils.clip_grad_norm_([p for p in clf.net.parameters() if p.grad is not None], grad_clip)
    optimizer.step()
    return loss.item()


@torch.no_grad()
def _logits(clf: ArgumentClassifier, task: str, examples, batch_size: int) -> torch.Tensor:
    clf.net.eval()
    chunks = []
    for i in range(0, len(examples), batch_size):
        texts_a, texts_b = _inputs(task, examples[i:i + batch_size])
        chunks.append(clf.net(task, **_encode(clf, texts_a, texts_b)))
    return torch.cat(chunks)


def validate_task(clf: ArgumentClassifier, task: str, examples, batch_size: int = 16) -> Tuple[float, float]:
    """Mean cross-entropy and macro-F1 on a labelled split."""
    logits = _logits(clf, task, examples, batch_size)
    loss = nn.functional.cross_entropy(logits, _targets(clf, task, examples)).item()
    classes = clf.classes(task)
    preds = [classes[i] for i in logits.argmax(dim=-1).tolist()]
    report = build_report([e.label.value for e in examples], preds, classes)
    return loss, report.macro.f1


def _evaluate(clf: ArgumentClassifier, val: Dict[str, list], batch_size: int) -> Tuple[float, Dict, Dict]:
    losses, f1s = {}, {}
    for task, examples in val.items():
        losses[task], f1s[task] = validate_task(clf, task, examples, batch_size)
    total = sum(len(v) for v in val.values())
    eval_loss = sum(losses[t] * len(val[t]) for t in val) / total
    return eval_loss, losses, f1s


def _schedule(sizes: Dict[str, int], batch_size: int, rng: random.Random) -> List[Tuple[str, List[int]]]:
    """Shuffled mini-batches of all tasks; each task appears in proportion to its size."""
    batches = []
    for task, n in sizes.items():
        order = list(range(n))
        rng.shuffle(order)
        batches += [(task, order[i:i + batch_size]) for i in range(0, n, batch_size)]
    rng.shuffle(batches)
    return batches


def train(model: Union[ArgumentClassifier, TrainedModel], bundle: DatasetBundle, tcfg: TrainConfig,
          tasks: Sequence[str] = TASKS) -> TrainedModel:
    """Joint training with early stopping on the size-weighted validation loss."""
    clf = _classifier(model)
    train_sets, val_sets = {}, {}
    for task in tasks:
        tr, va = bundle.examples(task, "train"), bundle.examples(task, "val")
        if tr and va:
            train_sets[task], val_sets[task] = tr, va
        else:
            logger.warning("Skipping %s task: train=%d val=%d", task, len(tr), len(va))
    if not train_sets:
        raise ModelError("EMPTY_TRAIN", "no task has both training and validation examples")

    truncated = {}
    for task, examples in train_sets.items():
        truncated[task] = count_truncated(clf, *_inputs(task, examples))
        if truncated[task]:
            logger.warning("%d %s training inputs exceed %d tokens and were truncated",
                           truncated[task], task, clf.config.max_length)

    torch.manual_seed(tcfg.seed)
    rng = random.Random(tcfg.seed)
    optimizer = make_optimizer(clf, tcfg)
    stopper = EarlyStopping(tcfg.early_stop_patience)
    initial_eval_loss, _, _ = _evaluate(clf, val_sets, tcfg.batch_size)
    history: List[EpochRecord] = []
    sizes = {t: len(v) for t, v in train_sets.items()}

    for epoch in tqdm(range(tcfg.max_epochs), desc="epochs", disable=not tcfg.progress):
        step_losses = []
        for task, idx in _schedule(sizes, tcfg.batch_size, rng):
            loss = train_step(clf, optimizer, task, [train_sets[task][i] for i in idx], tcfg.grad_clip)
            if not math.isfinite(loss):
                raise ModelError("DIVERGENCE", f"non-finite {task} loss in epoch {epoch}", {"epoch": epoch})
            step_losses.append(loss)
        eval_loss, task_losses, task_f1 = _evaluate(clf, val_sets, tcfg.batch_size)
        if not math.isfinite(eval_loss):
            raise ModelError("DIVERGENCE", f"non-finite validation loss in epoch {epoch}", {"epoch": epoch})
        history.append(EpochRecord(epoch=epoch, train_loss=float(np.mean(step_losses)), eval_loss=eval_loss,
                                   task_losses=task_losses, task_macro_f1=task_f1))
        logger.info("epoch %d train_loss=%.4f eval_loss=%.4f %s", epoch, history[-1].train_loss, eval_loss,
                    {t: round(f, 3) for t, f in task_f1.items()})
        if stopper.step(epoch, eval_loss, clf.net.state_dict):
            logger.info("Early stop after epoch %d (best %d)", epoch, stopper.best_epoch)
            break

    clf.net.load_state_dict(stopper.best_state)
    clf.net.eval()
    return TrainedModel(classifier=clf, train_config=tcfg, tasks=list(train_sets),
                        initial_eval_loss=initial_eval_loss, history=history, best_epoch=stopper.best_epoch,
                        truncated=truncated)


def _predictions(clf: ArgumentClassifier, task: str, texts_a: List[str], texts_b: Optional[List[str]],
                 batch_size: int) -> List[Prediction]:
    classes = clf.classes(task)
    out = []
    clf.net.eval()
    with torch.no_grad():
        for i in range(0, len(texts_a), batch_size):
            chunk_b = texts_b[i:i + batch_size] if texts_b is not None else None
            logits = clf.net(task, **_encode(clf, texts_a[i:i + batch_size], chunk_b))
            probs = torch.softmax(logits.double(), dim=-1).cpu().numpy()
            for row in probs:
                out.append(Prediction(label=classes[int(row.argmax())], probabilities=row.tolist(), classes=classes))
    return out


def predict_stance_batch(model, texts: Sequence[str], batch_size: int = 32) -> List[Prediction]:
    return _predictions(_classifier(model), "stance", list(texts), None, batch_size)


def predict_relation_batch(model, pairs: Sequence[Tuple[str, str]], batch_size: int = 32) -> List[Prediction]:
    return _predictions(_classifier(model), "relation", [a for a, _ in pairs], [b for _, b in pairs], batch_size)


def predict_stance(model, text: str) -> Prediction:
    return predict_stance_batch(model, [text])[0]


def predict_relation(model, text_a: str, text_b: str) -> Prediction:
    return predict_relation_batch(model, [(text_a, text_b)])[0]


def save_model(model: Union[ArgumentClassifier, TrainedModel], path) -> Path:
    """Checkpoint directory: weights, config echo, encoder config, tokenizer and history."""
    trained = model if isinstance(model, TrainedModel) else TrainedModel(classifier=model)
    clf = trained.classifier
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
        torch.save(clf.net.state_dict(), path / "weights.pt")
        (path / "model_config.json").write_text(clf.config.model_dump_json(indent=2), encoding="utf-8")
        clf.net.encoder.config.save_pretrained(path / "encoder")
        clf.tokenizer.save_pretrained(path / "tokenizer")
        history = trained.model_dump(mode="json", exclude={"classifier"})
        (path / "history.json").write_text(json.dumps(history, indent=2), encoding="utf-8")
    except OSError as e:
        raise ModelError("IO_ERROR", f"cannot write checkpoint to {path}: {e}") from e
    logger.info("Saved checkpoint to %s", path)
    return path


def load_model(path, expected: Optional[ModelConfig] = None, device: str = "cpu") -> TrainedModel:
    path = Path(path)
    try:
        cfg = ModelConfig.model_validate_json((path / "model_config.json").read_text(encoding="utf-8"))
        if expected is not None and (expected.n_stance_classes, expected.n_relation_classes) != (
                cfg.n_stance_classes, cfg.n_relation_classes):
            raise ModelError("CONFIG_MISMATCH",
                             f"checkpoint has {cfg.n_relation_classes} relation classes, "
                             f"expected {expected.n_relation_classes}")
        if cfg.encoder_id == TINY_ENCODER:
            tokenizer = PreTrainedTokenizerFast.from_pretrained(
                path / "tokenizer", model_input_names=["input_ids", "attention_mask"])
            encoder = XLMRobertaModel(XLMRobertaConfig.from_pretrained(path / "encoder"), add_pooling_layer=False)
        else:
            tokenizer = AutoTokenizer.from_pretrained(path / "tokenizer")
            encoder = AutoModel.from_config(AutoConfig.from_pretrained(path / "encoder"))
        state = torch.load(path / "weights.pt", map_location=device)
        history = json.loads((path / "history.json").read_text(encoding="utf-8"))
    except OSError as e:
        raise ModelError("IO_ERROR", f"cannot read checkpoint {path}: {e}") from e

    net = TwoHeadClassifier(encoder, cfg.n_stance_classes, cfg.n_relation_classes)
    try:
        net.load_state_dict(state)
    except RuntimeError as e:
        raise ModelError("CONFIG_MISMATCH", f"weights in {path} do not fit the saved config: {e}") from e
    net.eval()
    return TrainedModel(classifier=ArgumentClassifier(net, tokenizer, cfg, device=device), **history)
