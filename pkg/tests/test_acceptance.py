"""Acceptance suite: one PASS/FAIL line per criterion.

Run ``pytest tests/test_acceptance.py -v`` to see the lines. Criterion 7 needs the
real CT corpus (``HYBRIDCT_DATA_ROOT``) and cached ImageNet weights; it is skipped otherwise.
"""
import os
import time
from contextlib import contextmanager

import numpy as np
import pytest
from oracles import PUBLISHED_TRUNK, covariance, early_stop_rule, head_only, jacobi_eigh, pairwise_auc
from reference_tables import CLASSWISE, CONFUSION, SUMMARY

from hybridct.backbones import BACKBONES, GAP_WIDTH, HeadConfig, build_model, count_parameters
from hybridct.callbacks import replay
from hybridct.evaluation import ConfusionMatrix, auc, class_metrics_from_cm, report_from_confusion
from hybridct.fusion import fit_pca
from hybridct.pipeline import Run, load_metrics
from hybridct.svc import Kernel, SVCConfig, decision_score, fit_svc, predict


@pytest.fixture
def criterion(capsys):
    @contextmanager
    def check(number, title):
        try:
            yield
        except pytest.skip.Exception as exc:
            with capsys.disabled():
                print(f"\nSKIP criterion {number}: {title} ({exc})")
            raise
        except BaseException as exc:
            with capsys.disabled():
                print(f"\nFAIL criterion {number}: {title}: {type(exc).__name__}: {exc}")
            raise
        with capsys.disabled():
            print(f"\nPASS criterion {number}: {title}")
    return check


def _box_ok(model):
    return bool(np.all(model.alphas > 0) and np.all(model.alphas <= model.C * (1 + 1e-12)))


def test_criterion_1_metric_reproduction(criterion):
    with criterion(1, "table metrics from the four confusion matrices within 0.01 pp, < 1 s"):
        start = time.perf_counter()
        worst = 0.0
        for name, counts in CONFUSION.items():
            cm = ConfusionMatrix(*counts)
            r = report_from_confusion(cm, name)
            got = [r.accuracy, r.weighted["precision"], r.weighted["recall"], r.weighted["f1"]]
            for g, want in zip(got, SUMMARY[name]):
                worst = max(worst, abs(100 * g - want))
            covid, non = class_metrics_from_cm(cm)
            for entry, wants in zip((covid, non), CLASSWISE[name]):
                for g, want in zip((entry.precision, entry.recall, entry.f1), wants):
                    worst = max(worst, abs(100 * g - want))
        elapsed = time.perf_counter() - start
        assert worst <= 0.01, f"largest deviation {worst:.4f} pp"
        assert elapsed < 1.0, f"took {elapsed:.3f} s"


def _oracle_k(evals, target=0.95):
    total = sum(evals)
    running = 0.0
    for i, v in enumerate(evals, start=1):
        running += v
        if running / total >= target:
            return i
    return len(evals)


def test_criterion_2_pca_oracle(criterion):
    with criterion(2, "PCA equals brute-force eigendecomposition on 120 random matrices up to 50x16"):
        rng = np.random.default_rng(2024)
        for trial in range(120):
            n, d = int(rng.integers(2, 51)), int(rng.integers(1, 17))
            X = rng.normal(size=(n, d)) * rng.uniform(0.1, 10, size=d) + rng.normal(size=d)
            p = fit_pca(X, 0.95)
            evals, axes = jacobi_eigh(covariance(X))
            evals = np.clip(evals, 0.0, None)
            k = _oracle_k(evals)
            assert p.n_components == k, f"trial {trial}: k {p.n_components} != {k}"
            rel = np.abs(p.explained_variance - evals[:k]) / evals[:k]
            assert rel.max() <= 1e-8, f"trial {trial}: eigenvalue rel err {rel.max():.2e}"
            dots = np.abs(np.sum(p.components * axes[:k], axis=1))
            assert dots.min() >= 1 - 1e-6, f"trial {trial}: axis |dot| {dots.min()}"
            gram = p.components @ p.components.T
            assert np.abs(gram - np.eye(k)).max() <= 1e-6


def test_criterion_3_auc_equivalence(criterion):
    with criterion(3, "trapezoid AUC equals pairwise statistic within 1e-9 on 120 vectors, monotone invariant"):
        rng = np.random.default_rng(7)
        for trial in range(120):
            n = int(rng.integers(2, 1001))
            y = rng.integers(0, 2, n)
            y[:2] = [0, 1]
            if trial % 2:
                s = rng.integers(0, int(rng.integers(2, 30)), n).astype(float)  # heavy ties
            else:
                s = rng.normal(size=n)
            a = auc(y, s)
            assert abs(a - pairwise_auc(y.tolist(), s.tolist())) <= 1e-9, f"trial {trial}"
            for transformed in (np.exp(s), 3.0 * s + 1.0, np.arctan(s)):
                assert abs(auc(y, transformed) - a) <= 1e-9


def test_criterion_4_svc_sanity(criterion):
    with criterion(4, "SVC separable toy, XOR, max-margin midpoint within 1e-6, KKT box"):
        Xs = np.array([[0.0, 0.0], [0.0, 1.0], [3.0, 3.0], [3.0, 4.0]])
        ys = np.array([0, 0, 1, 1])
        lin = fit_svc(Xs, ys, SVCConfig(kernel=Kernel.LINEAR))
        assert np.array_equal(predict(lin, Xs), ys)
        # support vectors (0,1) and (3,3); the hyperplane passes through their midpoint
        mid = decision_score(lin, [[1.5, 2.0]])[0]
        assert abs(mid) <= 1e-6, f"midpoint score {mid}"

        Xx = np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]])
        yx = np.array([0, 0, 1, 1])
        rbf = fit_svc(Xx, yx, SVCConfig(kernel=Kernel.RBF, gamma=1.0, C=10.0))
        assert np.array_equal(predict(rbf, Xx), yx)

        models = [lin, rbf]
        rng = np.random.default_rng(4)
        for kernel in Kernel:
            for C in (0.1, 1.0, 10.0):
                y = np.r_[0, 1, rng.integers(0, 2, 38)]
                X = rng.normal(size=(40, 3)) + 0.7 * y[:, None]
                models.append(fit_svc(X, y, SVCConfig(kernel=kernel, C=C)))
        assert all(_box_ok(m) for m in models)


def test_criterion_5_callbacks(criterion):
    with criterion(5, "early stopping and LR reduction match the rule oracle exactly"):
        rng = np.random.default_rng(5)
        traces = [
            [0.5, 0.4, 0.41, 0.42, 0.43, 0.44, 0.45],
            list(np.linspace(1.0, 0.1, 20)),
            [1.0] * 40,
            [0.7, 0.6, 0.60005, 0.6, 0.59, 0.58995, 0.6, 0.61, 0.62, 0.63],
        ]
        traces += [list(np.cumsum(rng.normal(0, 0.02, int(rng.integers(1, 40)))) + 1.0) for _ in range(200)]
        for t in traces:
            assert replay(t) == early_stop_rule(t)
        floor = replay([1.0] * 60, es_patience=10**6)["lr_trace"]
        assert floor[0] == 1e-4 and floor[-1] == 1e-6
        assert all(b in (a, max(a * 0.5, 1e-6)) for a, b in zip(floor, floor[1:]))


def test_criterion_6_smoke(criterion, smoke_run, smoke_config):
    with criterion(6, "synthetic run-all (epochs 2) under 15 min, hybrid >= 90%, artifacts, idempotent"):
        assert smoke_run.elapsed < 15 * 60, f"took {smoke_run.elapsed:.0f} s"
        acc = load_metrics(smoke_run.dir)["Proposed Hybrid Model"]["accuracy"]
        assert acc >= 0.9, f"hybrid accuracy {acc:.4f}"
        manifest = smoke_run.manifest
        for rec in manifest["stages"].values():
            assert all((smoke_run.dir / a).exists() for a in rec["artifacts"])
        assert len(manifest["stages"]) == 8
        assert (smoke_run.dir / "report" / "performance_table.txt").exists()
        again = Run(smoke_run.dir, smoke_config)
        again.run_all()
        assert again.executed == [] and again.manifest_hash() == manifest["manifest_hash"]


@pytest.mark.fullscale
def test_criterion_7_full_scale(criterion, tmp_path):
    with criterion(7, "full-scale CT corpus: hybrid >= 97%, AUC >= 0.99, ordering"):
        root = os.environ.get("HYBRIDCT_DATA_ROOT")
        if not root:
            pytest.skip("HYBRIDCT_DATA_ROOT not set")
        from hybridct.config import config_from_dict

        run_dir = os.environ.get("HYBRIDCT_RUN_DIR", str(tmp_path / "full"))
        run = Run(run_dir, config_from_dict({"data_root": root}))
        run.run_all()
        m = load_metrics(run.dir)
        hybrid = m["Proposed Hybrid Model"]
        singles = [m[n]["accuracy"] for n in ("VGG16", "DenseNet121", "MobileNetV2")]
        assert hybrid["accuracy"] >= 0.97 and hybrid["accuracy"] >= max(singles)
        assert hybrid["auc"] >= 0.99
        assert singles[0] < singles[1] < singles[2] < hybrid["accuracy"]


def test_criterion_8_parameter_accounting(criterion):
    with criterion(8, "trainable equals head-only sum, trainable + frozen = total, reduction > 1"):
        for b in BACKBONES:
            c = count_parameters(build_model(b, HeadConfig(), weights="random", seed=0))
            assert c.trainable == head_only(GAP_WIDTH[b], 128), b
            assert c.frozen == PUBLISHED_TRUNK[b], b
            assert c.trainable + c.frozen == c.total
            assert c.reduction_factor > 1
