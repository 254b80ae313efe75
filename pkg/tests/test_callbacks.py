import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import early_stop_rule

from hybridct.callbacks import EarlyStopping, ReduceLROnPlateau, replay


def test_stop_after_five_stale_epochs():
    r = replay([0.50, 0.40, 0.41, 0.42, 0.43, 0.44, 0.45])
    assert r["stop_epoch"] == 7 and r["early_stopped"]
    assert r["best_epoch"] == 2


def test_improving_run_never_stops():
    losses = list(np.linspace(1.0, 0.1, 20))
    r = replay(losses, max_epochs=20)
    assert r["stop_epoch"] == 20 and not r["early_stopped"]
    assert r["best_epoch"] == 20
    assert r["lr_trace"] == [1e-4] * 20


def test_lr_halves_and_floors():
    # one improvement, then a long plateau; early stopping disabled
    r = replay([1.0] + [1.0] * 40, es_patience=10**6)
    trace = r["lr_trace"]
    distinct = sorted(set(trace), reverse=True)
    expected = [1e-4]
    while expected[-1] > 1e-6:
        expected.append(max(expected[-1] * 0.5, 1e-6))
    assert distinct == pytest.approx(expected, rel=0, abs=0)
    assert distinct[:3] == [1e-4, 5e-5, 2.5e-5]
    assert min(trace) == 1e-6
    # reductions every 3 stale epochs: epochs 1-4 at 1e-4, epoch 5 first at 5e-5
    assert trace[:5] == [1e-4, 1e-4, 1e-4, 1e-4, 5e-5]


def test_min_delta_counts_tiny_gains_as_stale():
    es = EarlyStopping(patience=2, min_delta=1e-4)
    assert es.update(1, 0.5)
    assert not es.update(2, 0.49995)
    assert not es.update(3, 0.49991)
    assert es.should_stop and es.stopped_epoch == 3 and es.best_epoch == 1


def test_plateau_reset_on_improvement():
    p = ReduceLROnPlateau(lr=1e-4, patience=3)
    for e, loss in enumerate([1.0, 1.0, 1.0, 0.5, 0.6, 0.6], start=1):
        p.update(e, loss)
    assert p.lr == 1e-4 and p.reductions == []


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0.0, 2.0, allow_nan=False), min_size=1, max_size=40))
def test_matches_rule_oracle(losses):
    got = replay(losses)
    want = early_stop_rule(losses)
    assert got == want
