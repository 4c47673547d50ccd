"""Precision / recall / F1, results tables and case-study reports."""

import csv
import io
import json
import logging
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, model_validator

from argmine.argument_graph import ArgumentGraph, argumentative_edges
from argmine.errors import EvaluationError

logger = logging.getLogger(__name__)

SCENARIO_ORDER = ("zero_shot", "llm_aug", "cross_lingual")
EVAL_SET_ORDER = ("EN", "FA")
MISMATCH_MARK = "*"

ReportKey = Tuple[str, str]


class ConfusionMatrix(BaseModel):
    """Rows are gold labels, columns predicted labels"""
    classes: List[str]
    counts: List[List[int]]

    @model_validator(mode="after")
    def _square(self):
        n = len(self.classes)
        if len(self.counts) != n or any(len(row) != n for row in self.counts):
            raise ValueError("counts must be a square matrix over classes")
        if any(c < 0 for row in self.counts for c in row):
            raise ValueError("counts must be non-negative")
        return self

    def total(self) -> int:
        return int(np.asarray(self.counts, dtype=np.int64).sum())

    def supports(self) -> Dict[str, int]:
        return {c: int(sum(row)) for c, row in zip(self.classes, self.counts)}


class ClassMetrics(BaseModel):
    precision: float = Field(ge=0, le=1)
    recall: float = Field(ge=0, le=1)
    f1: float = Field(ge=0, le=1)
    support: int = Field(ge=0)


class MacroMetrics(BaseModel):
    precision: float
    recall: float
    f1: float


class MetricsReport(BaseModel):
    per_class: Dict[str, ClassMetrics] = Field(default_factory=dict)
    macro: Optional[MacroMetrics] = None
    confusion: Optional[ConfusionMatrix] = None


class CaseRow(BaseModel):
    item_id: str = Field(description="ADU id, or edge id for relation rows")
    gold: str
    predicted: Dict[str, str] = Field(default_factory=dict, description="model name -> predicted label")
    mismatch: Dict[str, bool] = Field(default_factory=dict)


class CaseReport(BaseModel):
    doc_id: str
    models: List[str]
    stance_rows: List[CaseRow] = Field(default_factory=list)
    relation_rows: List[CaseRow] = Field(default_factory=list)

    def mismatches(self, model: str, kind: str = "stance") -> List[str]:
        rows = self.stance_rows if kind == "stance" else self.relation_rows
        return [r.item_id for r in rows if r.mismatch.get(model)]


def _label(x) -> str:
    return str(getattr(x, "value", x))


def confusion(golds: Sequence, preds: Sequence, classes: Sequence) -> ConfusionMatrix:
    golds, preds, classes = [_label(g) for g in golds], [_label(p) for p in preds], [_label(c) for c in classes]
    if len(golds) != len(preds):
        raise EvaluationError("LENGTH_MISMATCH", f"{len(golds)} gold labels but {len(preds)} predictions")
    index = {c: i for i, c in enumerate(classes)}
    unknown = sorted({x for x in golds + preds if x not in index})
    if unknown:
        raise EvaluationError("UNKNOWN_LABEL", f"labels {unknown} are not in {classes}", {"labels": unknown})
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for g, p in zip(golds, preds):
        counts[index[g], index[p]] += 1
    return ConfusionMatrix(classes=classes, counts=counts.tolist())


def per_class_metrics(cm: ConfusionMatrix) -> Dict[str, ClassMetrics]:
    """One-vs-rest scores per class; a zero denominator yields 0."""
    counts = np.asarray(cm.counts, dtype=np.int64)
    out = {}
    for i, c in enumerate(cm.classes):
        tp = int(counts[i, i])
        fp = int(counts[:, i].sum()) - tp
        fn = int(counts[i, :].sum()) - tp
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * tp / (2 * tp + fp + fn) if tp else 0.0
        out[c] = ClassMetrics(precision=precision, recall=recall, f1=f1, support=tp + fn)
    return out


def macro_average(per_class: Mapping[str, ClassMetrics]) -> MacroMetrics:
    """Unweighted mean over every class, zero-support classes included."""
    if not per_class:
        raise EvaluationError("EMPTY_REPORT", "macro average needs at least one class")
    values = list(per_class.values())
    return MacroMetrics(
        precision=float(np.mean([m.precision for m in values])),
        recall=float(np.mean([m.recall for m in values])),
        f1=float(np.mean([m.f1 for m in values])),
    )


def build_report(golds: Sequence, preds: Sequence, classes: Sequence) -> MetricsReport:
    cm = confusion(golds, preds, classes)
    per_class = per_class_metrics(cm)
    return MetricsReport(per_class=per_class, macro=macro_average(per_class), confusion=cm)


def evaluate_model(model, bundle, split: str, task: str, language: Optional[str] = None,
                   batch_size: int = 32) -> MetricsReport:
    """Predict every example of one split (optionally one language) and score it."""
    from argmine.model_trainer import _classifier, predict_relation_batch, predict_stance_batch

    examples = [e for e in bundle.examples(task, split) if language is None or e.language == language]
    if not examples:
        raise EvaluationError("EMPTY_SPLIT", f"no {task} examples in {split}"
                                             + (f" for {language}" if language else ""))
    if task == "stance":
        preds = predict_stance_batch(model, [e.text for e in examples], batch_size)
    else:
        preds = predict_relation_batch(model, [(e.text_a, e.text_b) for e in examples], batch_size)
    report = build_report([e.label for e in examples], [p.label for p in preds], _classifier(model).classes(task))
    logger.info("%s/%s%s macro-F1 %.3f over %d examples", task, split, f"/{language}" if language else "",
                report.macro.f1, len(examples))
    return report


def percent(x: float) -> str:
    """Percentage with one decimal, halves rounded up."""
    value = Decimal(str(round(x * 100, 10)))
    return str(value.quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


def _row_key(key: ReportKey):
    model, eval_set = key
    scenario = model.split(":", 1)[0]
    rank = SCENARIO_ORDER.index(scenario) if scenario in SCENARIO_ORDER else len(SCENARIO_ORDER)
    set_rank = EVAL_SET_ORDER.index(eval_set) if eval_set in EVAL_SET_ORDER else len(EVAL_SET_ORDER)
    return rank, model, set_rank, eval_set


def _ordered(reports: Mapping[ReportKey, MetricsReport]) -> List[Tuple[ReportKey, MetricsReport]]:
    rows = []
    for key in sorted(reports, key=_row_key):
        report = reports[key]
        if not report.per_class:
            logger.warning("No per-class metrics for %s on %s; row skipped", *key)
            continue
        rows.append((key, report))
    return rows


def _format(header: Sequence[str], rows: List[Sequence[str]]) -> str:
    widths = [max(len(str(r[i])) for r in [header, *rows]) for i in range(len(header))]
    lines = ["  ".join(str(v).ljust(w) for v, w in zip(header, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(str(v).ljust(w) for v, w in zip(r, widths)).rstrip() for r in rows]
    return "\n".join(lines) + "\n"


def results_rows(reports: Mapping[ReportKey, MetricsReport]) -> List[List[str]]:
    rows = []
    for (model, eval_set), report in _ordered(reports):
        macro = report.macro or macro_average(report.per_class)
        rows.append([model, eval_set, percent(macro.precision), percent(macro.recall), percent(macro.f1)])
    return rows


def render_results_table(reports: Mapping[ReportKey, MetricsReport]) -> str:
    """Macro P/R/F1 per (model, evaluation set)."""
    return _format(["Model", "Eval. set", "P", "R", "F1"], results_rows(reports))


def per_class_rows(reports: Mapping[ReportKey, MetricsReport]) -> List[List[str]]:
    rows = []
    for (model, eval_set), report in _ordered(reports):
        for label, m in report.per_class.items():
            rows.append([model, eval_set, label, percent(m.precision), percent(m.recall), percent(m.f1),
                         str(m.support)])
    return rows


def render_per_class_table(reports: Mapping[ReportKey, MetricsReport]) -> str:
    return _format(["Model", "Eval. set", "Label", "P", "R", "F1", "Support"], per_class_rows(reports))


def write_reports(reports: Mapping[ReportKey, MetricsReport], directory, stem: str = "results") -> Dict[str, Path]:
    """Text tables, a CSV of per-class rows and the raw reports as JSON."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {"txt": directory / f"{stem}.txt", "csv": directory / f"{stem}.csv", "json": directory / f"{stem}.json"}
    paths["txt"].write_text(render_results_table(reports) + "\n" + render_per_class_table(reports), encoding="utf-8")

    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["model", "eval_set", "label", "precision", "recall", "f1", "support"])
    writer.writerows(per_class_rows(reports))
    for model, eval_set, p, r, f1 in results_rows(reports):
        writer.writerow([model, eval_set, "macro", p, r, f1, ""])
    paths["csv"].write_text(buf.getvalue(), encoding="utf-8")

    payload = [{"model": m, "eval_set": s, **reports[(m, s)].model_dump(mode="json")}
               for m, s in sorted(reports, key=_row_key)]
    paths["json"].write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return paths


Predictions = Union[Mapping[str, str], Sequence[str]]


def _aligned(ids: List[str], predictions: Predictions, model: str, kind: str) -> Dict[str, str]:
    if isinstance(predictions, Mapping):
        mapped = {k: _label(v) for k, v in predictions.items()}
    else:
        predictions = list(predictions)
        if len(predictions) != len(ids):
            raise EvaluationError("MISSING_PREDICTION",
                                  f"{model} gives {len(predictions)} {kind} predictions for {len(ids)} items")
        mapped = {i: _label(p) for i, p in zip(ids, predictions)}
    missing = [i for i in ids if i not in mapped]
    if missing:
        raise EvaluationError("MISSING_PREDICTION", f"{model} has no {kind} prediction for {missing}",
                              {"model": model, "missing": missing})
    return mapped


def case_report(g: ArgumentGraph, stance_predictions: Mapping[str, Predictions],
                relation_predictions: Optional[Mapping[str, Predictions]] = None) -> CaseReport:
    """Gold vs predicted labels per ADU (and per argumentative edge) for each model.

    Predictions are keyed by model name; each value maps ADU/edge ids to labels,
    or lists labels in the graph's ADU/edge order.
    """
    models = list(stance_predictions)
    report = CaseReport(doc_id=g.doc_id, models=models)

    adu_ids = [a.id for a in g.adus]
    stance = {m: _aligned(adu_ids, p, m, "stance") for m, p in stance_predictions.items()}
    for a in g.adus:
        predicted = {m: stance[m][a.id] for m in models}
        report.stance_rows.append(CaseRow(item_id=a.id, gold=a.stance.value, predicted=predicted,
                                          mismatch={m: p != a.stance.value for m, p in predicted.items()}))

    if relation_predictions:
        edges = argumentative_edges(g)
        edge_ids = [e.id for e in edges]
        relation = {m: _aligned(edge_ids, p, m, "relation") for m, p in relation_predictions.items()}
        for e in edges:
            predicted = {m: relation[m][e.id] for m in relation}
            report.relation_rows.append(CaseRow(item_id=e.id, gold=e.rel.value, predicted=predicted,
                                                mismatch={m: p != e.rel.value for m, p in predicted.items()}))
    return report


def _case_block(title: str, rows: List[CaseRow], models: List[str]) -> str:
    header = [title] + [r.item_id for r in rows]
    body = [["Gold"] + [r.gold for r in rows]]
    for m in models:
        body.append([m] + [r.predicted[m] + (MISMATCH_MARK if r.mismatch[m] else "") for r in rows if m in r.predicted])
    return _format(header, body)


def render_case_report(report: CaseReport) -> str:
    """Plain-text tables; a trailing * marks a wrong prediction."""
    out = [f"Case {report.doc_id}", _case_block("ADU", report.stance_rows, report.models)]
    if report.relation_rows:
        rel_models = [m for m in report.models if m in report.relation_rows[0].predicted]
        out.append(_case_block("Edge", report.relation_rows, rel_models))
    return "\n".join(out)
