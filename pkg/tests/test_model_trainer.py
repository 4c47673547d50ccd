import json

import pytest
import torch

from conftest import synthetic_corpus

from argmine.argument_graph import Stance
from argmine.dataset_builder import DatasetBundle, Scenario, ScenarioConfig, assemble_scenario
from argmine.errors import ModelError
from argmine.model_trainer import (
    EarlyStopping,
    ModelConfig,
    Prediction,
    TrainConfig,
    build_model,
    load_model,
    make_optimizer,
    predict_relation,
    predict_relation_batch,
    predict_stance,
    predict_stance_batch,
    save_model,
    train,
    train_step,
    validate_task,
)

TINY = ModelConfig(encoder_id="tiny", max_length=32)
FAST = TrainConfig(learning_rate=2e-3, batch_size=8, max_epochs=3, early_stop_patience=3, seed=5)


def vocab(bundle):
    return [e.text for e in bundle.stance_train]


def restored_eval_loss(model, bundle):
    losses = {}
    for task in model.tasks:
        examples = bundle.examples(task, "val")
        losses[task] = (validate_task(model.classifier, task, examples, batch_size=8)[0], len(examples))
    return sum(loss * n for loss, n in losses.values()) / sum(n for _, n in losses.values())


@pytest.fixture(scope="module")
def bundle():
    return assemble_scenario(ScenarioConfig(scenario=Scenario.ZERO_SHOT), synthetic_corpus(20))


@pytest.fixture(scope="module")
def trained(bundle):
    return train(build_model(TINY, vocab(bundle), seed=1), bundle, FAST)


def test_tiny_encoder_shapes(bundle):
    clf = build_model(TINY, vocab(bundle), seed=1)
    assert clf.net.encoder.config.hidden_size == 32
    assert clf.net.encoder.config.num_hidden_layers == 2
    assert clf.classes("stance") == ["pro", "con"]
    assert clf.classes("relation") == ["support", "rebuttal", "undercut", "example"]
    enc = clf.tokenizer(["free buses are good"], return_tensors="pt")
    assert clf.net("stance", **enc).shape == (1, 2)
    assert clf.net("relation", **enc).shape == (1, 4)


def test_extra_relation_outputs_warn(bundle, caplog):
    clf = build_model(ModelConfig(encoder_id="tiny", n_relation_classes=5), vocab(bundle), seed=1)
    assert clf.net.relation_head.out_features == 5
    assert clf.classes("relation")[-1] == "relation_4"
    assert "5 outputs" in caplog.text


def test_too_few_relation_outputs():
    with pytest.raises(ModelError) as exc:
        build_model(ModelConfig(encoder_id="tiny", n_relation_classes=1), ["a b c"])
    assert exc.value.code == "SHAPE_MISMATCH"


def test_stance_head_is_binary():
    with pytest.raises(ValueError):
        ModelConfig(n_stance_classes=3)


def test_unknown_encoder(tmp_path):
    with pytest.raises(ModelError) as exc:
        build_model(ModelConfig(encoder_id=str(tmp_path / "no_such_encoder")))
    assert exc.value.code == "ENCODER_NOT_FOUND"


def test_training_lowers_validation_loss(trained, bundle):
    assert len(trained.history) <= 3
    restored = restored_eval_loss(trained, bundle)
    assert restored < trained.initial_eval_loss
    assert restored == pytest.approx(min(r.eval_loss for r in trained.history), abs=1e-6)
    assert trained.history[trained.best_epoch].eval_loss == min(r.eval_loss for r in trained.history)
    assert trained.tasks == ["stance", "relation"]
    assert set(trained.history[0].task_losses) == {"stance", "relation"}
    assert all(0.0 <= f <= 1.0 for r in trained.history for f in r.task_macro_f1.values())


def test_eval_loss_is_size_weighted(trained, bundle):
    record = trained.history[0]
    n_stance, n_relation = len(bundle.stance_val), len(bundle.relation_val)
    expected = (record.task_losses["stance"] * n_stance + record.task_losses["relation"] * n_relation) / (
        n_stance + n_relation)
    assert record.eval_loss == pytest.approx(expected)


def test_predictions_are_distributions(trained, bundle):
    texts = [e.text for e in bundle.stance_test]
    for p in predict_stance_batch(trained, texts):
        assert sum(p.probabilities) == pytest.approx(1.0, abs=1e-6)
        assert p.label in ("pro", "con")
    pairs = [(e.text_a, e.text_b) for e in bundle.relation_test]
    for p in predict_relation_batch(trained, pairs):
        assert len(p.probabilities) == 4
        assert sum(p.probabilities) == pytest.approx(1.0, abs=1e-6)


def test_prediction_is_deterministic(trained):
    text = "good helpful benefit fair safe item3"
    assert predict_stance(trained, text) == predict_stance(trained, text)


def test_batched_and_single_predictions_agree(trained, bundle):
    texts = [e.text for e in bundle.stance_test[:6]] + ["short text"]
    batched = predict_stance_batch(trained, texts, batch_size=4)
    for text, p in zip(texts, batched):
        single = predict_stance(trained, text)
        assert single.label == p.label
        assert single.probabilities == pytest.approx(p.probabilities, abs=1e-5)
    a, b = bundle.relation_test[0].text_a, bundle.relation_test[0].text_b
    assert predict_relation(trained, a, b).probabilities == pytest.approx(
        predict_relation_batch(trained, [(a, b)])[0].probabilities, abs=1e-9)


def test_empty_text_is_rejected(trained):
    with pytest.raises(ModelError) as exc:
        predict_stance(trained, "   ")
    assert exc.value.code == "TOKENIZE_ERROR"


def test_prediction_label_must_be_argmax():
    with pytest.raises(ValueError):
        Prediction(label="pro", probabilities=[0.2, 0.8], classes=["pro", "con"])
    with pytest.raises(ValueError):
        Prediction(label="pro", probabilities=[0.7, 0.7], classes=["pro", "con"])


def test_truncation_keeps_the_prefix(bundle):
    clf = build_model(ModelConfig(encoder_id="tiny", max_length=8), vocab(bundle), seed=2)
    head = "good helpful benefit fair safe cheap"
    long_a = head + " bad harmful risk unfair dangerous"
    long_b = head + " healthy useful popular efficient good fair"
    a, b = predict_stance(clf, long_a), predict_stance(clf, long_b)
    assert a.probabilities == pytest.approx(b.probabilities, abs=1e-9)


def test_truncated_inputs_are_counted(bundle):
    clf = build_model(ModelConfig(encoder_id="tiny", max_length=6), vocab(bundle), seed=2)
    model = train(clf, bundle, TrainConfig(learning_rate=1e-3, batch_size=16, max_epochs=1, seed=1))
    # every synthetic ADU has six words, so [CLS] + 6 + [SEP] exceeds six tokens
    assert model.truncated["stance"] == len(bundle.stance_train)


def test_train_step_only_moves_the_active_head(bundle):
    clf = build_model(TINY, vocab(bundle), seed=3)
    optimizer = make_optimizer(clf, FAST)
    relation_before = {k: v.clone() for k, v in clf.net.relation_head.state_dict().items()}
    stance_before = {k: v.clone() for k, v in clf.net.stance_head.state_dict().items()}
    loss = train_step(clf, optimizer, "stance", bundle.stance_train[:8])
    assert loss > 0
    for k, v in clf.net.relation_head.state_dict().items():
        assert torch.equal(v, relation_before[k])
    assert any(not torch.equal(v, stance_before[k]) for k, v in clf.net.stance_head.state_dict().items())


def test_single_task_training_leaves_other_head(bundle):
    clf = build_model(TINY, vocab(bundle), seed=3)
    relation_before = {k: v.clone() for k, v in clf.net.relation_head.state_dict().items()}
    model = train(clf, bundle, FAST.model_copy(update={"max_epochs": 1}), tasks=("stance",))
    assert model.tasks == ["stance"]
    assert set(model.history[0].task_losses) == {"stance"}
    for k, v in model.classifier.net.relation_head.state_dict().items():
        assert torch.equal(v, relation_before[k])


def test_early_stopping():
    stopper = EarlyStopping(patience=1)
    assert not stopper.step(0, 1.0)
    assert stopper.step(1, 1.5)
    assert (stopper.best_epoch, stopper.best_loss) == (0, 1.0)

    stopper = EarlyStopping(patience=2)
    assert [stopper.step(e, loss) for e, loss in enumerate([3.0, 2.0, 2.5, 1.0, 1.2, 1.1])] == [
        False, False, False, False, False, True]
    assert stopper.best_epoch == 3
    with pytest.raises(ValueError):
        EarlyStopping(patience=0)


def test_early_stopping_keeps_a_copy_of_the_best_state():
    state = {"w": torch.ones(2)}
    stopper = EarlyStopping(patience=3)
    stopper.step(0, 1.0, lambda: state)
    state["w"] += 1
    stopper.step(1, 2.0, lambda: state)
    assert torch.equal(stopper.best_state["w"], torch.ones(2))


def test_training_stops_when_validation_worsens(bundle):
    # validation holds the training texts with their labels swapped
    swapped = {Stance.PRO: Stance.CON, Stance.CON: Stance.PRO}
    flipped = bundle.model_copy(update={
        "stance_val": [e.model_copy(update={"label": swapped[e.label]}) for e in bundle.stance_train],
        "relation_val": [],
    })
    cfg = FAST.model_copy(update={"max_epochs": 12, "early_stop_patience": 1})
    model = train(build_model(TINY, vocab(bundle), seed=6), flipped, cfg, tasks=("stance",))
    assert len(model.history) <= model.best_epoch + 1 + 1
    assert len(model.history) < 12
    assert restored_eval_loss(model, flipped) == pytest.approx(model.history[model.best_epoch].eval_loss, abs=1e-6)


def test_same_seed_same_history(bundle):
    cfg = FAST.model_copy(update={"max_epochs": 2})
    first = train(build_model(TINY, vocab(bundle), seed=4), bundle, cfg)
    second = train(build_model(TINY, vocab(bundle), seed=4), bundle, cfg)
    assert first.history == second.history
    assert first.initial_eval_loss == second.initial_eval_loss


def test_empty_training_data():
    clf = build_model(TINY, ["some text here"], seed=1)
    with pytest.raises(ModelError) as exc:
        train(clf, DatasetBundle(scenario=Scenario.ZERO_SHOT), FAST)
    assert exc.value.code == "EMPTY_TRAIN"


def test_save_and_load_round_trip(trained, bundle, tmp_path):
    save_model(trained, tmp_path / "ckpt")
    assert json.loads((tmp_path / "ckpt" / "model_config.json").read_text())["encoder_id"] == "tiny"
    loaded = load_model(tmp_path / "ckpt", expected=TINY)
    assert loaded.history == trained.history
    assert loaded.best_epoch == trained.best_epoch
    texts = [e.text for e in bundle.stance_val]
    for before, after in zip(predict_stance_batch(trained, texts), predict_stance_batch(loaded, texts)):
        assert after.probabilities == pytest.approx(before.probabilities, abs=1e-6)
    pairs = [(e.text_a, e.text_b) for e in bundle.relation_val]
    for before, after in zip(predict_relation_batch(trained, pairs), predict_relation_batch(loaded, pairs)):
        assert after.probabilities == pytest.approx(before.probabilities, abs=1e-6)


def test_load_with_other_head_sizes(trained, tmp_path):
    save_model(trained, tmp_path / "ckpt")
    with pytest.raises(ModelError) as exc:
        load_model(tmp_path / "ckpt", expected=ModelConfig(encoder_id="tiny", n_relation_classes=5))
    assert exc.value.code == "CONFIG_MISMATCH"

    config_path = tmp_path / "ckpt" / "model_config.json"
    config = json.loads(config_path.read_text())
    config["n_relation_classes"] = 5
    config_path.write_text(json.dumps(config))
    with pytest.raises(ModelError) as exc:
        load_model(tmp_path / "ckpt")
    assert exc.value.code == "CONFIG_MISMATCH"


def test_checkpoint_io_errors(trained, tmp_path):
    blocker = tmp_path / "not_a_dir"
    blocker.write_text("x")
    with pytest.raises(ModelError) as exc:
        save_model(trained, blocker / "ckpt")
    assert exc.value.code == "IO_ERROR"
    with pytest.raises(ModelError) as exc:
        load_model(tmp_path / "missing")
    assert exc.value.code == "IO_ERROR"
