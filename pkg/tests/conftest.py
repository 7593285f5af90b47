"""Shared fixtures: the desk-scale one-shot experiment is trained once per
session and reused by the acceptance criteria."""

import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from pcedge import metrics, synth, trainer

EXPERIMENT_SEED = 11

# The library default lr (1e-5) converges far too slowly for a 30-minute
# desk-scale budget; Adam at 3e-4 reaches the same plateau in a few epochs.
EXPERIMENT_CONFIG = dict(k=16, lr=3e-4, batch_size=256, max_epochs=5,
                         patience=5, seed=EXPERIMENT_SEED, augment=True)

HELD_OUT_SPECS = (
    synth.ShapeSpec("box", size=(0.8, 0.5, 0.3), density=4000, seed=21),
    synth.ShapeSpec("cylinder", size=(0.4, 0.9), density=4000, seed=22),
    synth.ShapeSpec("l_bracket", size=(0.9, 0.7, 0.3, 0.5), density=4000, seed=23),
)


@pytest.fixture(scope="session")
def one_shot_experiment():
    """Train once on a ~20k-point union-of-boxes cloud; evaluate everywhere.

    Returns a dict with the trained parameters, wall-clock seconds, the
    training cloud, and per-shape evaluation reports.
    """
    started = time.perf_counter()
    train_cloud = synth.generate(
        synth.ShapeSpec("union_boxes", density=4000, seed=7)
    ).cloud
    cfg = trainer.TrainConfig(**EXPERIMENT_CONFIG)
    params, log = trainer.train(train_cloud, cfg)

    pred_train, _ = trainer.predict(train_cloud, params, batch=512)
    reports = {"train": metrics.evaluate(pred_train, train_cloud)}
    held_clouds = {}
    for spec in HELD_OUT_SPECS:
        gt = synth.generate(spec).cloud
        held_clouds[spec.kind] = gt
        pred, _ = trainer.predict(gt, params, batch=512)
        reports[spec.kind] = metrics.evaluate(pred, gt)
    return {
        "params": params,
        "log": log,
        "train_cloud": train_cloud,
        "held_clouds": held_clouds,
        "reports": reports,
        "seconds": time.perf_counter() - started,
    }
