import numpy as np
import pytest

from eddynet import formats
from eddynet.data import PatchPair, SynthConfig, synth_scene
from eddynet.trainer import (HISTORY_HEADER, TrainConfig, TrainingDiverged, checkpoint, evaluate_validation,
                             load_history, train)

SMALL = {"filters": 4, "stages": 2}


def scenes(n, size=16, seed=0):
    rng = np.random.default_rng(seed)
    cfg = SynthConfig(grid_size=size, n_eddies=(1, 2), radius_range=(1.5, 2.5))
    return [PatchPair(g.values, m) for g, m, _ in (synth_scene(cfg, rng) for _ in range(n))]


def cfg(**kw):
    base = dict(batch_size=4, max_epochs=3, model_overrides=SMALL)
    base.update(kw)
    return TrainConfig(**base)


def test_history_records_every_epoch():
    tr, va = scenes(10), scenes(4, seed=1)
    w, hist = train(cfg(), tr, va)
    assert len(hist) == 3
    assert [e.epoch for e in hist.epochs] == [0, 1, 2]
    best = min(hist.epochs, key=lambda e: e.val_loss)
    assert hist.best_epoch == best.epoch
    # the returned snapshot reproduces the best epoch's validation loss
    loss, _ = evaluate_validation(w, va)
    assert loss == pytest.approx(best.val_loss, rel=1e-6)


def test_training_reduces_loss():
    tr, va = scenes(24), scenes(8, seed=1)
    _, hist = train(cfg(max_epochs=12, learning_rate=3e-3), tr, va)
    assert hist.epochs[-1].train_loss < hist.epochs[0].train_loss


@pytest.mark.parametrize("patience", [1, 2, 3])
def test_early_stopping_with_frozen_validation_loss(patience):
    tr, va = scenes(8), scenes(4, seed=1)
    overrides = dict(SMALL, bn_momentum=1.0)
    _, hist = train(cfg(learning_rate=0.0, patience=patience, max_epochs=50, model_overrides=overrides), tr, va)
    assert hist.best_epoch == 0
    assert len(hist) == patience + 1
    assert len({e.val_loss for e in hist.epochs}) == 1


def test_early_stopping_counts_from_best_epoch():
    tr, va = scenes(8), scenes(4, seed=1)
    _, hist = train(cfg(learning_rate=0.0, patience=2, max_epochs=50), tr, va)
    assert len(hist) == hist.best_epoch + 1 + 2


def test_same_seed_gives_identical_artifacts(tmp_path):
    tr, va = scenes(8), scenes(4, seed=1)
    outs = []
    for run in ("a", "b"):
        w, hist = train(cfg(record_time=False, seed=3), tr, va)
        checkpoint(w, hist, tmp_path / run)
        outs.append(((tmp_path / run / "weights.edyn").read_bytes(), (tmp_path / run / "history.csv").read_text()))
    assert outs[0] == outs[1]
    w2, _ = train(cfg(record_time=False, seed=4), tr, va)
    assert formats.weights_to_bytes(w2) != outs[0][0]


def test_history_csv_round_trip(tmp_path):
    w, hist = train(cfg(record_time=False), scenes(8), scenes(4, seed=1))
    _, hpath = checkpoint(w, hist, tmp_path)
    text = hpath.read_text()
    assert text.splitlines()[0] == HISTORY_HEADER
    back = load_history(hpath)
    assert [e.val_loss for e in back.epochs] == [e.val_loss for e in hist.epochs]
    assert back.best_epoch == hist.best_epoch
    assert all(e.seconds == 0 for e in back.epochs)


def test_cce_and_selu_train():
    _, hist = train(cfg(loss="cce", variant="selu", max_epochs=1), scenes(8), scenes(4, seed=1))
    assert np.isfinite(hist.epochs[0].val_loss)


def test_divergence_is_reported():
    tr = scenes(8)
    tr[0] = PatchPair(np.full((16, 16), np.nan, np.float32), tr[0].mask)
    with pytest.raises(TrainingDiverged, match="batch"):
        train(cfg(batch_size=8), tr, scenes(4, seed=1))


def test_input_validation():
    with pytest.raises(ValueError):
        train(cfg(), [], scenes(2))
    with pytest.raises(ValueError):
        train(cfg(batch_size=16), scenes(4), scenes(2))
    with pytest.raises(ValueError):
        TrainConfig(loss="hinge")
