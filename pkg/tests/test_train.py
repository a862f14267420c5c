import logging

import numpy as np
import pytest
import torch

from mammocnn.models import ALEXNET, BASELINE, GOOGLENET, ModelConfig, build_network
from mammocnn.patches import PatchSet
from mammocnn.train import (
    ADAM, VANILLA_SGD, Checkpoint, TrainConfig, TrainingDiverged, preset, preset_arch, train,
)

SIDE = 16


def _items(n, seed=0):
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 2
    px = rng.random((n, SIDE, SIDE)).astype(np.float32) * 0.5
    px[labels == 1, 4:12, 4:12] += 0.4  # a bright square marks the positive class
    return PatchSet(ids=[f"i{k}" for k in range(n)], labels=labels.tolist(), pixels=px)


def _net(seed=0):
    torch.manual_seed(seed)
    return build_network(ModelConfig(BASELINE, input_side=SIDE))


def test_zero_epochs_returns_initial_weights():
    net = _net()
    before = {k: v.clone() for k, v in net.state_dict().items()}
    best, curve, last = train(net, _items(8), _items(4, 1), TrainConfig(max_epochs=0))
    assert len(curve) == 0 and curve.val == [] and best.epoch == 0
    for k, v in best.weights.items():
        if k.startswith("body."):
            torch.testing.assert_close(v, before[k])


def test_presets():
    assert (preset("googlenet_ft").optimizer, preset("googlenet_ft").base_lr) == (VANILLA_SGD, 1e-2)
    assert preset("alexnet_ft").dropout_rate == 0.5
    assert preset("baseline").batch_size == 64 and preset("baseline").optimizer == ADAM
    assert 30 <= preset("baseline").max_epochs <= 35 and 30 <= preset("alexnet_ft").max_epochs <= 35
    assert preset("googlenet_ft").max_epochs == 30
    assert [preset_arch(n) for n in ("baseline", "alexnet_ft", "googlenet_ft")] == [BASELINE, ALEXNET, GOOGLENET]
    with pytest.raises(ValueError, match="unknown preset"):
        preset("resnet")


def test_non_finite_loss_aborts_with_diagnostic():
    items = _items(8)
    items.pixels[3, 0, 0] = np.nan
    with pytest.raises(TrainingDiverged, match=r"iteration 1 .*lr .*batch \["):
        train(_net(), items, None, TrainConfig(max_epochs=2, batch_size=8))


def test_no_val_returns_last_epoch():
    best, curve, last = train(_net(), _items(8), None, TrainConfig(max_epochs=2, batch_size=4))
    assert best is last and best.epoch == 2 and best.val_accuracy is None and curve.val == []


def test_same_seed_same_run():
    cfg = TrainConfig(max_epochs=2, batch_size=4, seed=5)
    a = train(_net(), _items(8), _items(4, 1), cfg)[1]
    b = train(_net(), _items(8), _items(4, 1), cfg)[1]
    assert [r.train_loss for r in a.iterations] == [r.train_loss for r in b.iterations]


def test_best_is_max_val_earliest_on_ties():
    best, curve, _ = train(_net(), _items(16), _items(8, 1), TrainConfig(max_epochs=4, batch_size=4))
    accs = [a for _, a in curve.val]
    assert best.val_accuracy == max(accs) and best.epoch == accs.index(max(accs)) + 1


def test_effective_lr_logged(caplog):
    with caplog.at_level(logging.INFO, logger="mammocnn"):
        _, curve, _ = train(_net(), _items(4), None, TrainConfig(max_epochs=1, batch_size=4, base_lr=2e-3))
    assert "lr group=fc1 multiplier=1.0 effective_lr=0.002" in caplog.text
    assert curve.effective_lr["block1"] == pytest.approx(2e-3)


def test_lone_batch_skipped_with_batchnorm():
    _, curve, _ = train(_net(), _items(5), None, TrainConfig(max_epochs=1, batch_size=4))
    assert len(curve) == 1


def test_patch_size_mismatch():
    with pytest.raises(ValueError, match="does not match"):
        train(build_network(ModelConfig(BASELINE, input_side=32)), _items(4), None, TrainConfig(max_epochs=1))


def test_checkpoint_roundtrip_and_curve_files(tmp_path):
    net = _net()
    best, curve, last = train(net, _items(8), _items(4, 1), TrainConfig(max_epochs=2, batch_size=4))
    best.save(tmp_path / "ck" / "best")
    back = Checkpoint.load(tmp_path / "ck" / "best")
    assert back.epoch == best.epoch and back.config_fingerprint == best.config_fingerprint
    x = torch.rand(2, 1, SIDE, SIDE)
    net.load_state_dict(best.weights)
    net.eval()
    torch.testing.assert_close(back.network()(x), net(x))
    curve.write(tmp_path)
    assert (tmp_path / "curve.csv").read_text().startswith("iter,epoch,train_loss,train_acc\n")
    assert len((tmp_path / "val.csv").read_text().splitlines()) == 3


def test_stop_callback_ends_early():
    _, curve, last = train(_net(), _items(16), None, TrainConfig(max_epochs=5, batch_size=4),
                           stop=lambda rec: rec.iteration >= 3)
    assert len(curve) == 3 and last.epoch == 1


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(optimizer="RMSPROP")
    with pytest.raises(ValueError):
        TrainConfig(base_lr=0)
