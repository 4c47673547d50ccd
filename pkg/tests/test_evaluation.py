import csv
import json
import random

import pytest

from conftest import synthetic_corpus

from argmine.argument_graph import Stance
from argmine.dataset_builder import ScenarioConfig, assemble_scenario
from argmine.errors import EvaluationError
from argmine.evaluation import (
    ClassMetrics,
    ConfusionMatrix,
    MetricsReport,
    build_report,
    case_report,
    confusion,
    evaluate_model,
    macro_average,
    per_class_metrics,
    percent,
    render_case_report,
    render_results_table,
    write_reports,
)
from argmine.model_trainer import ModelConfig, build_model, predict_stance_batch

STANCES = ["pro", "con"]

# Per-label P/R/F1 (pro, then con) and the macro row reported for each model and evaluation set.
# Values are percentages; three con cells printed as fractions (0.781, 0.222, 0.293) are scaled to 78.1, 22.2, 29.3.
PUBLISHED = [
    ("zero_shot", "EN", (78.1, 98.9, 87.3), (66.7, 7.4, 13.3), (72.4, 53.1, 50.3)),
    ("zero_shot", "FA", (78.3, 100, 87.8), (100, 7.4, 13.8), (89.1, 53.7, 50.8)),
    ("llm_aug:gpt", "EN", (79.6, 91.1, 85.0), (42.9, 22.2, 29.3), (61.2, 56.7, 57.1)),
    ("llm_aug:gemini", "EN", (83.1, 71.1, 76.6), (35.0, 51.9, 41.8), (59.1, 61.5, 59.2)),
    ("llm_aug:claude", "EN", (79.2, 84.4, 81.7), (33.3, 25.9, 29.2), (56.3, 55.2, 55.4)),
    ("llm_aug:deepseek", "EN", (77.4, 98.9, 86.8), (50.0, 3.7, 6.9), (63.7, 51.3, 46.9)),
    ("llm_aug:gpt", "FA", (84.5, 91.1, 87.7), (60.0, 44.4, 51.1), (72.3, 67.8, 69.4)),
    ("llm_aug:gemini", "FA", (82.0, 81.1, 81.6), (39.3, 40.7, 40.0), (60.7, 60.9, 60.8)),
    ("llm_aug:claude", "FA", (76.5, 97.8, 85.9), (0, 0, 0), (38.3, 48.9, 42.9)),
    ("llm_aug:deepseek", "FA", (79.4, 94.4, 86.3), (50.0, 18.5, 27.0), (64.7, 56.5, 56.7)),
    ("cross_lingual", "FA", (84.9, 100, 91.8), (100, 40.7, 57.9), (92.5, 70.4, 74.9)),
]


def zero_shot_en():
    """90 pro and 27 con gold labels; 89/1 and 25/2 predicted."""
    golds = ["pro"] * 90 + ["con"] * 27
    preds = ["pro"] * 89 + ["con"] + ["pro"] * 25 + ["con"] * 2
    return golds, preds


def test_confusion_counts():
    cm = confusion(["pro", "pro", "con"], ["pro", "con", "con"], STANCES)
    assert cm.counts == [[1, 1], [0, 1]]
    assert cm.total() == 3
    assert cm.supports() == {"pro": 2, "con": 1}


def test_confusion_accepts_enums_and_empty_input():
    cm = confusion([Stance.PRO, Stance.CON], [Stance.PRO, Stance.CON], list(Stance))
    assert cm.counts == [[1, 0], [0, 1]]
    assert confusion([], [], STANCES).counts == [[0, 0], [0, 0]]


def test_confusion_errors():
    with pytest.raises(EvaluationError) as exc:
        confusion(["pro"], [], STANCES)
    assert exc.value.code == "LENGTH_MISMATCH"
    with pytest.raises(EvaluationError) as exc:
        confusion(["pro"], ["neutral"], STANCES)
    assert exc.value.code == "UNKNOWN_LABEL"
    assert exc.value.details["labels"] == ["neutral"]


def test_confusion_matrix_must_be_square():
    with pytest.raises(ValueError):
        ConfusionMatrix(classes=STANCES, counts=[[1, 2]])
    with pytest.raises(ValueError):
        ConfusionMatrix(classes=STANCES, counts=[[1, -1], [0, 0]])


def test_minority_class_metrics():
    golds, preds = zero_shot_en()
    cm = confusion(golds, preds, STANCES)
    assert cm.counts == [[89, 1], [25, 2]]
    per_class = per_class_metrics(cm)
    assert per_class["con"].precision == pytest.approx(2 / 3)
    assert per_class["con"].recall == pytest.approx(2 / 27)
    assert [percent(x) for x in (per_class["con"].precision, per_class["con"].recall, per_class["con"].f1)] == [
        "66.7", "7.4", "13.3"]
    assert [percent(x) for x in (per_class["pro"].precision, per_class["pro"].recall, per_class["pro"].f1)] == [
        "78.1", "98.9", "87.3"]
    assert (per_class["pro"].support, per_class["con"].support) == (90, 27)


def test_perfect_and_absent_classes():
    report = build_report(["pro", "con"], ["pro", "con"], ["pro", "con", "neutral"])
    assert report.per_class["pro"] == ClassMetrics(precision=1.0, recall=1.0, f1=1.0, support=1)
    assert report.per_class["neutral"] == ClassMetrics(precision=0.0, recall=0.0, f1=0.0, support=0)


def test_majority_baseline_halves_macro_f1():
    golds = ["pro"] * 30 + ["con"] * 9
    report = build_report(golds, ["pro"] * len(golds), STANCES)
    assert report.per_class["con"].recall == 0.0
    assert report.macro.f1 == pytest.approx(report.per_class["pro"].f1 / 2)


def test_macro_examples():
    pro = ClassMetrics(precision=0.5, recall=0.5, f1=0.873, support=90)
    con = ClassMetrics(precision=0.5, recall=0.5, f1=0.133, support=27)
    assert percent(macro_average({"pro": pro, "con": con}).f1) == "50.3"
    pro, con = pro.model_copy(update={"f1": 0.918}), con.model_copy(update={"f1": 0.579})
    assert percent(macro_average({"pro": pro, "con": con}).f1) == "74.9"
    assert macro_average({"pro": pro}).f1 == 0.918
    with pytest.raises(EvaluationError) as exc:
        macro_average({})
    assert exc.value.code == "EMPTY_REPORT"


@pytest.mark.parametrize("model, eval_set, pro, con, macro", PUBLISHED)
def test_macro_reproduces_published_rows(model, eval_set, pro, con, macro):
    def metrics(values, support):
        p, r, f1 = (v / 100 for v in values)
        return ClassMetrics(precision=p, recall=r, f1=f1, support=support)

    result = macro_average({"pro": metrics(pro, 90), "con": metrics(con, 27)})
    for got, expected in zip((result.precision, result.recall, result.f1), macro):
        assert abs(got * 100 - expected) <= 0.05 + 1e-9


def test_against_sklearn():
    metrics = pytest.importorskip("sklearn.metrics")
    rng = random.Random(11)
    classes = ["support", "rebuttal", "undercut", "example"]
    for _ in range(50):
        n = rng.randint(1, 40)
        golds = [rng.choice(classes) for _ in range(n)]
        preds = [rng.choice(classes) for _ in range(n)]
        report = build_report(golds, preds, classes)
        p, r, f1, support = metrics.precision_recall_fscore_support(golds, preds, labels=classes, zero_division=0)
        for i, c in enumerate(classes):
            m = report.per_class[c]
            assert (m.precision, m.recall, m.f1) == pytest.approx((p[i], r[i], f1[i]), abs=1e-9)
            assert m.support == support[i]
        mp, mr, mf, _ = metrics.precision_recall_fscore_support(golds, preds, labels=classes, average="macro",
                                                                zero_division=0)
        assert (report.macro.precision, report.macro.recall, report.macro.f1) == pytest.approx((mp, mr, mf), abs=1e-9)
        assert report.confusion.counts == metrics.confusion_matrix(golds, preds, labels=classes).tolist()


def test_metric_bounds():
    rng = random.Random(3)
    for _ in range(100):
        n = rng.randint(1, 30)
        report = build_report([rng.choice(STANCES) for _ in range(n)], [rng.choice(STANCES) for _ in range(n)],
                              STANCES)
        for m in report.per_class.values():
            if m.precision == 0 or m.recall == 0:
                assert m.f1 == 0
            else:
                assert min(m.precision, m.recall) - 1e-12 <= m.f1 <= max(m.precision, m.recall) + 1e-12


@pytest.mark.parametrize("x, text", [(0.7485, "74.9"), (0.503, "50.3"), (0.5, "50.0"), (1.0, "100.0"),
                                     (0.0, "0.0"), (0.00049, "0.0"), (0.0005, "0.1")])
def test_percent(x, text):
    assert percent(x) == text


def test_results_table():
    golds, preds = zero_shot_en()
    zero_shot = build_report(golds, preds, STANCES)
    reports = {
        ("cross_lingual", "FA"): build_report(["pro", "con"], ["pro", "con"], STANCES),
        ("llm_aug:gpt", "EN"): build_report(["pro", "con"], ["pro", "pro"], STANCES),
        ("zero_shot", "FA"): zero_shot,
        ("zero_shot", "EN"): zero_shot,
    }
    lines = render_results_table(reports).splitlines()
    assert lines[0].split() == ["Model", "Eval.", "set", "P", "R", "F1"]
    rows = [line.split() for line in lines[2:]]
    assert [r[:2] for r in rows] == [["zero_shot", "EN"], ["zero_shot", "FA"], ["llm_aug:gpt", "EN"],
                                     ["cross_lingual", "FA"]]
    assert rows[0][2:] == ["72.4", "53.1", "50.3"]
    assert rows[3][2:] == ["100.0", "100.0", "100.0"]


def test_results_table_skips_empty_reports(caplog):
    reports = {("zero_shot", "EN"): build_report(["pro"], ["pro"], STANCES), ("zero_shot", "FA"): MetricsReport()}
    lines = render_results_table(reports).splitlines()
    assert len(lines) == 3
    assert "row skipped" in caplog.text


def test_write_reports(tmp_path):
    golds, preds = zero_shot_en()
    paths = write_reports({("zero_shot", "EN"): build_report(golds, preds, STANCES)}, tmp_path, stem="stance")
    assert sorted(p.name for p in paths.values()) == ["stance.csv", "stance.json", "stance.txt"]
    with open(paths["csv"], newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["model", "eval_set", "label", "precision", "recall", "f1", "support"]
    assert rows[-1] == ["zero_shot", "EN", "macro", "72.4", "53.1", "50.3", ""]
    payload = json.loads(paths["json"].read_text(encoding="utf-8"))
    assert payload[0]["model"] == "zero_shot"
    assert payload[0]["confusion"]["counts"] == [[89, 1], [25, 2]]
    assert "72.4" in paths["txt"].read_text(encoding="utf-8")


def test_case1_report(case1_fa):
    report = case_report(case1_fa, {
        "zero_shot": ["pro", "pro", "pro", "pro", "pro"],
        "llm_aug:gpt": ["pro", "con", "con", "pro", "pro"],
        "cross_lingual": {"a1": "pro", "a2": "con", "a3": "pro", "a4": "pro", "a5": "pro"},
    }, {
        "zero_shot": {"c1": "support", "c2": "undercut", "c3": "support", "c4": "example"},
        "llm_aug:gpt": {"c1": "rebuttal", "c2": "rebuttal", "c3": "support", "c4": "example"},
    })
    assert [r.gold for r in report.stance_rows] == ["pro", "con", "pro", "pro", "pro"]
    assert report.mismatches("zero_shot") == ["a2"]
    assert report.mismatches("llm_aug:gpt") == ["a3"]
    assert report.mismatches("cross_lingual") == []
    assert [r.gold for r in report.relation_rows] == ["rebuttal", "undercut", "support", "example"]
    assert report.mismatches("zero_shot", "relation") == ["c1"]
    assert report.mismatches("llm_aug:gpt", "relation") == ["c2"]

    text = render_case_report(report)
    lines = text.splitlines()
    assert lines[0] == "Case micro_d14"
    assert ["Gold", "pro", "con", "pro", "pro", "pro"] in [line.split() for line in lines]
    assert ["zero_shot", "pro", "pro*", "pro", "pro", "pro"] in [line.split() for line in lines]
    assert ["llm_aug:gpt", "rebuttal", "rebuttal*", "support", "example"] in [line.split() for line in lines]


def test_case2_report(case2_fa):
    report = case_report(case2_fa, {
        "zero_shot": ["pro", "pro", "pro", "pro"],
        "llm_aug:gpt": ["pro", "con", "con", "pro"],
    })
    assert report.mismatches("zero_shot") == ["a2", "a3"]
    assert report.mismatches("llm_aug:gpt") == []
    assert report.relation_rows == []
    assert all(r.mismatch[m] == (r.gold != r.predicted[m]) for r in report.stance_rows for m in report.models)


def test_case_report_missing_predictions(case1):
    with pytest.raises(EvaluationError) as exc:
        case_report(case1, {"zero_shot": ["pro", "pro", "pro", "pro"]})
    assert exc.value.code == "MISSING_PREDICTION"
    with pytest.raises(EvaluationError) as exc:
        case_report(case1, {"zero_shot": {"a1": "pro", "a2": "con", "a3": "pro", "a4": "pro"}})
    assert exc.value.details["missing"] == ["a5"]


@pytest.fixture(scope="module")
def untrained():
    bundle = assemble_scenario(ScenarioConfig(), synthetic_corpus(20))
    clf = build_model(ModelConfig(encoder_id="tiny", max_length=32), [e.text for e in bundle.stance_train], seed=1)
    return clf, bundle


def test_evaluate_model_matches_hand_built_pipeline(untrained):
    clf, bundle = untrained
    report = evaluate_model(clf, bundle, "test", "stance")
    preds = [p.label for p in predict_stance_batch(clf, [e.text for e in bundle.stance_test])]
    expected = build_report([e.label.value for e in bundle.stance_test], preds, STANCES)
    assert report.macro.f1 == pytest.approx(expected.macro.f1, abs=1e-9)
    assert report.confusion == expected.confusion
    relation = evaluate_model(clf, bundle, "test", "relation")
    assert list(relation.per_class) == ["support", "rebuttal", "undercut", "example"]
    assert relation.confusion.total() == len(bundle.relation_test)


def test_evaluate_model_empty_split(untrained):
    clf, bundle = untrained
    with pytest.raises(EvaluationError) as exc:
        evaluate_model(clf, bundle, "test", "stance", language="fa")
    assert exc.value.code == "EMPTY_SPLIT"
