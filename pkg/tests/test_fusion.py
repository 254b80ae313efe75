import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import covariance, jacobi_eigh

from hybridct.backbones import BACKBONES, BackboneId, HeadConfig, ModelArtifact, build_model, count_parameters
from hybridct.errors import AlignmentError, DimensionError, IntegrityError, VersionMismatchError
from hybridct.fusion import (
    FeatureMatrix,
    Stage,
    apply_scaler,
    extract_features,
    fit_fusion,
    fit_pca,
    fit_scaler,
    load_fusion,
    read_features,
    reconstruct,
    save_fusion,
    select_k,
    stack_features,
    transform_pca,
    write_features,
)


def fm(data, backbone=BackboneId.VGG16, ids=None, stage=Stage.RAW):
    data = np.asarray(data, dtype=np.float32)
    ids = ids if ids is not None else [f"r{i}" for i in range(len(data))]
    return FeatureMatrix(data, stage, (backbone,), ids, "TRAIN")


class TestScaler:
    def test_hand_computed_column(self):
        p = fit_scaler(np.array([[1.0], [2.0], [3.0]]))
        assert p.mean[0] == 2.0
        assert p.std[0] == pytest.approx(math.sqrt(2 / 3), abs=1e-15)
        out = apply_scaler(np.array([[1.0], [2.0], [3.0]]), p)
        assert out[:, 0] == pytest.approx([-1.224744871391589, 0.0, 1.224744871391589], abs=1e-12)

    def test_constant_column(self):
        X = np.array([[5.0, 1.0], [5.0, 2.0], [5.0, 4.0]])
        out = apply_scaler(X, fit_scaler(X))
        assert np.all(out[:, 0] == 0.0)

    def test_training_matrix_standardised(self):
        X = np.random.default_rng(0).normal(3.0, 7.0, size=(40, 6))
        X[:, 2] = 1.5
        out = apply_scaler(fm(X), fit_scaler(fm(X)))
        assert out.stage is Stage.STANDARDIZED
        live = [0, 1, 3, 4, 5]
        assert np.abs(out.data[:, live].mean(0)).max() <= 1e-6
        assert np.abs(out.data[:, live].std(0) - 1).max() <= 1e-6

    def test_errors(self):
        with pytest.raises(DimensionError):
            fit_scaler(np.zeros((0, 3)))
        with pytest.raises(DimensionError):
            fit_scaler(np.zeros((1, 3)))
        with pytest.raises(DimensionError):
            apply_scaler(np.zeros((2, 4)), fit_scaler(np.ones((2, 3))))


class TestSelectK:
    @pytest.mark.parametrize("ratios,target,k", [
        ([0.6, 0.3, 0.08, 0.02], 0.95, 3),
        ([1.0], 0.95, 1),
        ([0.5, 0.3], 0.95, 2),
        ([0.95, 0.05], 0.95, 1),
    ])
    def test_examples(self, ratios, target, k):
        assert select_k(ratios, target) == k

    def test_empty(self):
        with pytest.raises(ValueError):
            select_k([], 0.95)


class TestPCA:
    X3 = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])

    def test_rank_one(self):
        p = fit_pca(self.X3, 0.95)
        assert p.n_components == 1
        assert p.components[0] == pytest.approx([1 / math.sqrt(2)] * 2, abs=1e-12)
        assert p.explained_variance_ratio[0] == pytest.approx(1.0, abs=1e-12)

    def test_rank_one_transform(self):
        Z = transform_pca(self.X3, fit_pca(self.X3))
        assert Z.shape == (3, 1)
        assert np.abs(Z[:, 0]) == pytest.approx([math.sqrt(2), 0.0, math.sqrt(2)], abs=1e-12)
        assert Z[0, 0] == pytest.approx(-Z[2, 0], abs=1e-12)

    def test_matches_jacobi_oracle_20x8(self):
        X = np.random.default_rng(42).normal(size=(20, 8))
        p = fit_pca(X, 0.95)
        evals, axes = jacobi_eigh(covariance(X))
        ratios = evals / evals.sum()
        assert p.n_components == select_k(ratios, 0.95)
        assert p.explained_variance == pytest.approx(evals[:p.n_components], rel=1e-10)
        for comp, ref in zip(p.components, axes):
            assert abs(comp @ ref) == pytest.approx(1.0, abs=1e-6)

    @pytest.mark.parametrize("n,d", [(30, 6), (5, 9)])
    def test_full_target_keeps_everything(self, n, d):
        X = np.random.default_rng(n).normal(size=(n, d))
        assert fit_pca(X, 1.0).n_components == min(n - 1, d)

    def test_sign_convention(self):
        p = fit_pca(np.random.default_rng(1).normal(size=(25, 5)))
        for c in p.components:
            assert c[np.argmax(np.abs(c))] > 0

    def test_centre_maps_to_zero_and_output_uncorrelated(self):
        X = np.random.default_rng(7).normal(size=(60, 10)) @ np.random.default_rng(8).normal(size=(10, 10))
        p = fit_pca(X, 0.95)
        assert np.abs(transform_pca(p.center[None, :], p)).max() <= 1e-6
        Z = transform_pca(X, p)
        cov = np.cov(Z, rowvar=False)
        assert np.abs(cov - np.diag(np.diag(cov))).max() <= 1e-5

    def test_errors(self):
        with pytest.raises(DimensionError):
            fit_pca(np.ones((1, 3)))
        with pytest.raises(DimensionError):
            transform_pca(np.ones((2, 4)), fit_pca(np.random.default_rng(0).normal(size=(5, 3))))

    def test_feature_matrix_stage(self):
        X = fm(np.random.default_rng(0).normal(size=(10, 4)))
        assert transform_pca(X, fit_pca(X)).stage is Stage.REDUCED

    @settings(max_examples=50, deadline=None)
    @given(n=st.integers(3, 50), d=st.integers(1, 16), seed=st.integers(0, 2**31))
    def test_reconstruction_error_non_increasing(self, n, d, seed):
        X = np.random.default_rng(seed).normal(size=(n, d))
        p = fit_pca(X, 1.0)
        errs = []
        for k in range(1, p.n_components + 1):
            sub = type(p)(p.components[:k], p.center, p.explained_variance[:k],
                          p.explained_variance_ratio[:k])
            errs.append(np.linalg.norm(X - reconstruct(transform_pca(X, sub), sub)))
        assert all(b <= a + 1e-9 for a, b in zip(errs, errs[1:]))
        assert np.allclose(p.components @ p.components.T, np.eye(p.n_components), atol=1e-6)
        assert np.all(np.diff(p.explained_variance_ratio) <= 1e-15)


class TestStack:
    def test_widths_and_order(self):
        a = fm(np.ones((4, 2)), BackboneId.VGG16)
        b = fm(np.full((4, 3), 2.0), BackboneId.DENSENET121)
        s = stack_features([a, b])
        assert s.shape == (4, 5) and s.stage is Stage.STACKED
        assert np.all(s.data[:, :2] == 1) and np.all(s.data[:, 2:] == 2)
        assert s.widths == (2, 3)
        assert s.backbones == (BackboneId.VGG16, BackboneId.DENSENET121)

    def test_three_parts(self):
        parts = [fm(np.zeros((3, k)), b) for k, b in zip((7, 5, 9), BACKBONES)]
        assert stack_features(parts).shape[1] == 21

    def test_permuted_rows_rejected(self):
        a = fm(np.ones((3, 2)), BackboneId.VGG16, ["x", "y", "z"])
        b = fm(np.ones((3, 2)), BackboneId.DENSENET121, ["y", "x", "z"])
        with pytest.raises(AlignmentError):
            stack_features([a, b])


def _parts(seed=0, n=30, ids=None):
    rng = np.random.default_rng(seed)
    ids = ids or [f"r{i}" for i in range(n)]
    return {b: fm(rng.gamma(2.0, size=(n, 16)) @ rng.normal(size=(16, 16)), b, ids) for b in BACKBONES}


class TestFusionArtifact:
    def test_fitted_on_train_only(self):
        train, test = _parts(0), _parts(1, n=12)
        fusion = fit_fusion(train, 0.95)
        out = fusion.transform(test)
        b = BackboneId.DENSENET121
        manual = transform_pca(apply_scaler(test[b].data, fit_scaler(train[b])),
                               fit_pca(apply_scaler(train[b], fit_scaler(train[b])), 0.95))
        lo = fusion.pcas[BackboneId.VGG16].n_components
        hi = lo + fusion.pcas[b].n_components
        assert np.allclose(out.data[:, lo:hi], manual, atol=1e-4)
        assert out.shape == (12, fusion.stacked_dim)
        assert out.backbones == BACKBONES

    def test_kept_variance(self):
        fusion = fit_fusion(_parts(3), 0.9)
        for p in fusion.pcas.values():
            assert p.explained_variance_ratio.sum() >= 0.9 - 1e-10

    def test_pca_after_stack(self):
        train = _parts(0)
        fusion = fit_fusion(train, 0.95, pca_after_stack=True)
        out = fusion.transform(train)
        assert out.shape == (30, fusion.stacked_pca.n_components)
        assert fusion.stacked_pca.center.shape == (48,)

    def test_missing_backbone(self):
        parts = _parts(0)
        del parts[BackboneId.MOBILENETV2]
        with pytest.raises(AlignmentError):
            fit_fusion(parts)

    @pytest.mark.parametrize("after", [False, True])
    def test_save_load_bit_exact(self, tmp_path, after):
        fusion = fit_fusion(_parts(0), 0.95, pca_after_stack=after)
        probe = _parts(5, n=7)
        before = fusion.transform(probe).data
        save_fusion(fusion, tmp_path / "f")
        assert np.array_equal(load_fusion(tmp_path / "f").transform(probe).data, before)

    def test_missing_entry_is_integrity_error(self, tmp_path):
        save_fusion(fit_fusion(_parts(0)), tmp_path / "f")
        meta = json.loads((tmp_path / "f" / "fusion.json").read_text())
        meta["order"] = ["VGG16", "DENSENET121"]
        (tmp_path / "f" / "fusion.json").write_text(json.dumps(meta))
        with pytest.raises(IntegrityError):
            load_fusion(tmp_path / "f")

    def test_version_mismatch(self, tmp_path):
        save_fusion(fit_fusion(_parts(0)), tmp_path / "f")
        meta = json.loads((tmp_path / "f" / "fusion.json").read_text())
        meta["version"] = 2
        (tmp_path / "f" / "fusion.json").write_text(json.dumps(meta))
        with pytest.raises(VersionMismatchError):
            load_fusion(tmp_path / "f")


class TestFeatureFile:
    def test_layout_and_round_trip(self, tmp_path):
        X = fm(np.random.default_rng(0).normal(size=(5, 3)), ids=list("abcde"))
        path = write_features(X, tmp_path / "vgg16_train.hctf", config_hash="abc")
        raw = path.read_bytes()
        assert raw[:5] == b"HCTF1"
        assert int.from_bytes(raw[5:9], "little") == 5 and int.from_bytes(raw[9:13], "little") == 3
        assert len(raw) == 13 + 5 * 3 * 4
        assert np.array_equal(np.frombuffer(raw[13:], "<f4").reshape(5, 3), X.data)
        back = read_features(path)
        assert np.array_equal(back.data, X.data)
        assert back.record_ids == X.record_ids and back.stage is Stage.RAW
        assert (tmp_path / "vgg16_train.meta").exists()

    def test_truncated(self, tmp_path):
        path = write_features(fm(np.ones((4, 4))), tmp_path / "x.hctf")
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(IntegrityError):
            read_features(path)

    def test_bad_magic(self, tmp_path):
        path = write_features(fm(np.ones((2, 2))), tmp_path / "x.hctf")
        path.write_bytes(b"NOPE!" + path.read_bytes()[5:])
        with pytest.raises(IntegrityError):
            read_features(path)


@pytest.fixture(scope="module")
def dense_artifact():
    model = build_model(BackboneId.DENSENET121, HeadConfig(dense_width=32), weights="random", seed=0)
    return ModelArtifact(BackboneId.DENSENET121, model.head_config, model, count_parameters(model))


class TestExtract:
    def test_shape_relu_determinism(self, dense_artifact):
        rng = np.random.default_rng(0)
        img = rng.random((224, 224, 3), dtype=np.float32)
        other = rng.random((224, 224, 3), dtype=np.float32)
        out = extract_features(dense_artifact, np.stack([img, other, img]), ["a", "b", "c"], "TEST")
        assert out.shape == (3, 32) and out.stage is Stage.RAW
        assert out.data.min() >= 0.0
        assert np.array_equal(out.data[0], out.data[2])
        assert out.backbones == (BackboneId.DENSENET121,)
