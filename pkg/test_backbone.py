import numpy as np
import pytest
import torch

from conftest import blob_examples
from s2osc.agents.backbone import BackboneAgent, as_batch_tensor, extend_head, softmax_T
from s2osc.errors import (DegenerateTaskError, FormatError, InputError, MissingClassError, ParameterError,
                          PreconditionError)
from s2osc.models.example import Example
from s2osc.models.experiment_config import TrainConfig
from s2osc.services.checkpoint_service import load_checkpoint, save_checkpoint

FAST = TrainConfig(epochs=5, batch_size=16, learning_rate=0.05, weight_decay=0.0, seed=0)


@pytest.fixture
def known_train():
    return blob_examples(n_classes=3, per_class=20)


def test_softmax_T_spot_value():
    out = softmax_T([0.9, 0.1], 3)
    assert out == pytest.approx([0.6753, 0.3247], abs=1e-3)


def test_softmax_T_identity_and_argmax():
    rng = np.random.default_rng(0)
    probs = rng.dirichlet(np.ones(6), size=1000)
    assert np.allclose(softmax_T(probs, 1), probs)
    for T in (0.5, 2.0, 7.0):
        tempered = softmax_T(probs, T)
        assert np.allclose(tempered.sum(axis=1), 1)
        assert np.array_equal(tempered.argmax(axis=1), probs.argmax(axis=1))


def test_softmax_T_rejects_non_positive_temperature():
    with pytest.raises(ParameterError):
        softmax_T([0.5, 0.5], 0)


def test_pretrain_f_reduces_loss(known_train):
    f = BackboneAgent('small_cnn', {'embed_dim': 16}).pretrain_f(known_train, FAST)
    assert f.class_ids == [0, 1, 2]
    losses = [row['loss'] for row in f.training_log]
    assert losses[0] == pytest.approx(np.log(3), rel=0.3)
    assert losses[-1] < losses[0]


def test_pretrain_f_is_deterministic(known_train):
    backbone = BackboneAgent('small_cnn', {'embed_dim': 16})
    a = backbone.pretrain_f(known_train, FAST)
    b = backbone.pretrain_f(known_train, FAST)
    assert a.tag() == b.tag()


def test_pretrain_f_preconditions(known_train):
    backbone = BackboneAgent('mlp')
    with pytest.raises(PreconditionError):
        backbone.pretrain_f([], FAST)
    with pytest.raises(DegenerateTaskError):
        backbone.pretrain_f([x for x in known_train if x.label == 0], FAST)


def test_pretrain_f_fits_separable_blobs():
    data = blob_examples(n_classes=2, per_class=30, seed=3)
    backbone = BackboneAgent('small_cnn', {'embed_dim': 16})
    f = backbone.pretrain_f(data, FAST.model_copy(update={'epochs': 30}))
    predicted = [f.class_ids[k] for k in backbone.predict_proba(f, data).argmax(axis=1)]
    assert np.mean([p == x.label for p, x in zip(predicted, data)]) >= 0.99


def test_predict_proba_rows_sum_to_one(known_train):
    backbone = BackboneAgent('mlp', {'hidden_dim': 8})
    model = backbone.new_model((1, 8, 8), [0, 1, 2], seed=1)
    probs = backbone.predict_proba(model, known_train)
    assert probs.shape == (60, 3)
    assert np.allclose(probs.sum(axis=1), 1)
    assert backbone.embed(model, known_train).shape == (60, 8)


def test_batch_shape_mismatch(known_train):
    backbone = BackboneAgent('mlp')
    model = backbone.new_model((1, 8, 8), [0, 1, 2], seed=1)
    with pytest.raises(InputError):
        backbone.predict_proba(model, [Example(np.zeros((1, 4, 4)), 0, 0)])
    with pytest.raises(InputError):
        as_batch_tensor([np.zeros((1, 8, 8))], model)


def test_compute_centers(known_train):
    backbone = BackboneAgent('mlp')
    model = backbone.new_model((1, 8, 8), [0, 1, 2], seed=1)
    centers = backbone.compute_centers(model, known_train)
    assert centers.class_ids == [0, 1, 2]
    # without a hidden layer the embedding is the flattened input
    expected = np.mean([x.pixels.ravel() for x in known_train if x.label == 1], axis=0)
    assert np.allclose(centers.centers[1], expected, atol=1e-6)
    with pytest.raises(MissingClassError):
        backbone.compute_centers(model, [x for x in known_train if x.label != 2])


def test_extend_head_keeps_old_outputs(known_train):
    backbone = BackboneAgent('small_cnn', {'embed_dim': 16})
    model = backbone.new_model((1, 8, 8), [0, 1, 2], seed=2)
    extended = extend_head(model, [7])
    assert extended.class_ids == [0, 1, 2, 7]
    x = as_batch_tensor(known_train[:5], model)
    with torch.no_grad():
        old, new = model.logits(x), extended.logits(x)
    assert torch.allclose(new[:, :3], old)
    assert torch.all(new[:, 3] == 0)
    # the source model is untouched
    assert model.n_classes == 3


def test_checkpoint_round_trip(tmp_path, known_train):
    backbone = BackboneAgent('small_cnn', {'embed_dim': 16})
    model = backbone.new_model((1, 8, 8), [0, 1, 2], seed=3)
    centers = backbone.compute_centers(model, known_train)
    path = save_checkpoint(tmp_path / 'f.ckpt', model, centers)

    loaded, loaded_centers = load_checkpoint(path)
    assert loaded.class_ids == model.class_ids
    assert loaded.tag() == model.tag()
    assert np.allclose(backbone.predict_logits(loaded, known_train), backbone.predict_logits(model, known_train))
    assert np.allclose(loaded_centers.matrix(), centers.matrix(), atol=1e-6)


def test_checkpoint_rejects_foreign_file(tmp_path):
    path = tmp_path / 'not.ckpt'
    path.write_bytes(b'PK\x03\x04' + b'\x00' * 32)
    with pytest.raises(FormatError):
        load_checkpoint(path)
