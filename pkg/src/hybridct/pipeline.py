"""End-to-end orchestration with resumable, hash-checked stages.

Run directory layout::

    <run_dir>/manifest.json            stage hashes, artifact paths, metrics
    <run_dir>/config.yaml              resolved configuration
    <run_dir>/data/manifest.jsonl      split dataset manifest
    <run_dir>/models/<backbone>/       fine-tuned models + best checkpoint
    <run_dir>/features/                HCTF1 feature files and sigmoid scores
    <run_dir>/fusion/                  scalers + PCA, stacked matrices
    <run_dir>/svc/                     fitted SVC
    <run_dir>/report/                  per-model and comparison reports

Each stage's hash covers its own config subset plus the hashes of the
stages it reads from, so tuning the SVC never retrains a backbone. A stage
whose artifacts exist under a different hash is stale: it is only
recomputed with ``force=True``.
"""
from __future__ import annotations

import datetime as _dt
import json
import logging
import os
import platform
import sys
import warnings
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import _io
from .backbones import (
    BACKBONES,
    BackboneId,
    ImageDataset,
    build_model,
    load_artifact,
    predict_dataset,
    save_artifact,
    train,
)
from .config import RunConfig, dump_config
from .data import Label, Split, read_manifest, scan_dataset, split_dataset, write_manifest
from .errors import ConfigError, HybridCTError, StaleArtifactError, UndefinedMetricWarning
from .evaluation import evaluate
from .fusion import (
    FeatureMatrix,
    Stage,
    fit_fusion,
    load_fusion,
    read_features,
    save_fusion,
    write_features,
)
from .report import render_comparison, render_report
from .svc import decision_score, fit_svc, load_svc, predict, save_svc

log = logging.getLogger(__name__)

THREADS_ENV = "HYBRIDCT_NUM_THREADS"
STAGES = ("prepare", "train", "extract", "fuse", "fit_svc", "evaluate")
DISPLAY = {
    BackboneId.VGG16: "VGG16",
    BackboneId.DENSENET121: "DenseNet121",
    BackboneId.MOBILENETV2: "MobileNetV2",
}
HYBRID = "Proposed Hybrid Model"

# a stage reruns whenever one of these executed earlier in the same session
UPSTREAM = {
    "train": ("prepare",),
    "extract": ("train",),
    "fuse": ("extract",),
    "fit_svc": ("fuse",),
    "evaluate": ("fit_svc", "extract"),
}


class StageError(HybridCTError):
    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {cause}")


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def environment_fingerprint() -> dict:
    import scipy
    import torch
    import torchvision

    return {
        "python": sys.version.split()[0],
        "platform": platform.platform(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "torch": torch.__version__,
        "torchvision": torchvision.__version__,
        "threads": torch.get_num_threads(),
    }


class Run:
    """A run directory bound to a configuration."""

    def __init__(self, run_dir, config: RunConfig, force: bool = False):
        self.dir = Path(run_dir)
        self.config = config
        self.force = force
        self.dir.mkdir(parents=True, exist_ok=True)
        self.manifest_path = self.dir / "manifest.json"
        if self.manifest_path.exists():
            self.manifest = _io.read_json(self.manifest_path)
        else:
            self.manifest = {"stages": {}}
        self.executed: list[str] = []
        threads = os.environ.get(THREADS_ENV)
        if threads:
            import torch

            torch.set_num_threads(int(threads))

    # --- hashes -----------------------------------------------------------------

    def stage_hash(self, stage: str, backbone: BackboneId | None = None) -> str:
        c = self.config
        if stage == "prepare":
            return _io.stable_hash({"data_root": c.data_root, "seed": c.seed, "split": asdict(c.split)})
        if stage == "train":
            return _io.stable_hash({
                "prepare": self.stage_hash("prepare"), "backbone": backbone.value,
                "weights": c.weights, "imagenet_preproc": c.imagenet_preproc,
                "augmentation": c.augmentation.to_dict(), "head": asdict(c.head), "train": asdict(c.train),
            })
        if stage == "extract":
            return _io.stable_hash({b.value: self.stage_hash("train", b) for b in BACKBONES})
        if stage == "fuse":
            return _io.stable_hash({"extract": self.stage_hash("extract"), "fusion": asdict(c.fusion)})
        if stage == "fit_svc":
            return _io.stable_hash({"fuse": self.stage_hash("fuse"), "svc": c.svc.to_dict()})
        if stage == "evaluate":
            return _io.stable_hash({"fit_svc": self.stage_hash("fit_svc"), "extract": self.stage_hash("extract")})
        raise ValueError(stage)

    @staticmethod
    def key(stage: str, backbone: BackboneId | None = None) -> str:
        return f"train/{backbone.value}" if backbone is not None else stage

    # --- bookkeeping --------------------------------------------------------------

    def _rel(self, p: Path) -> str:
        return Path(p).relative_to(self.dir).as_posix()

    def is_fresh(self, stage, backbone=None) -> bool:
        rec = self.manifest["stages"].get(self.key(stage, backbone))
        return (rec is not None and rec["hash"] == self.stage_hash(stage, backbone)
                and all((self.dir / a).exists() for a in rec["artifacts"]))

    def _require(self, stage, backbone=None):
        if self.is_fresh(stage, backbone):
            return
        key = self.key(stage, backbone)
        if key in self.manifest["stages"]:
            cause = StaleArtifactError(f"{key} was built with a different configuration; "
                                       "rerun it (and its dependents) with --force")
        else:
            cause = ConfigError("upstream artifacts missing; run this stage first")
        raise StageError(key.replace("_", "-"), cause)

    def _upstream_ran(self, stage) -> bool:
        deps = UPSTREAM.get(stage, ())
        return any(k == d or k.startswith(d + "/") for k in self.executed for d in deps)

    def _run_stage(self, stage, fn, backbone=None) -> bool:
        """Execute ``fn`` unless fresh; returns True if the stage ran."""
        key = self.key(stage, backbone)
        if self.is_fresh(stage, backbone) and not self._upstream_ran(stage):
            log.info("stage %s up to date, skipping", key)
            return False
        rec = self.manifest["stages"].get(key)
        if rec is not None and rec["hash"] != self.stage_hash(stage, backbone) and not self.force:
            raise StageError(key, StaleArtifactError(
                f"existing artifacts were built with a different configuration (hash {rec['hash']} != "
                f"{self.stage_hash(stage, backbone)}); pass --force to rebuild"))
        log.info("running stage %s", key)
        try:
            artifacts, extra = fn()
        except HybridCTError as exc:
            raise StageError(key, exc) from exc
        self.manifest["stages"][key] = {
            "hash": self.stage_hash(stage, backbone),
            "completed_at": _now(),
            "artifacts": sorted(self._rel(a) for a in artifacts),
            **extra,
        }
        self.executed.append(key)
        self._write_manifest()
        return True

    def manifest_hash(self) -> str:
        stages = {k: {"hash": v["hash"], "artifacts": v["artifacts"]}
                  for k, v in self.manifest["stages"].items()}
        return _io.stable_hash({"config": self.config.hash, "stages": stages})

    def _write_manifest(self):
        self.manifest.update({
            "config_hash": self.config.hash,
            "seeds": {"split": self.config.seed, "train": self.config.train.seed},
            "environment": environment_fingerprint(),
            "manifest_hash": self.manifest_hash(),
        })
        _io.write_json(self.manifest_path, self.manifest)
        dump_config(self.config, self.dir / "config.yaml")

    # --- paths ----------------------------------------------------------------------

    @property
    def dataset_manifest(self) -> Path:
        return self.dir / "data" / "manifest.jsonl"

    def model_dir(self, b: BackboneId) -> Path:
        return self.dir / "models" / b.slug

    def feature_path(self, b: BackboneId, split: Split) -> Path:
        return self.dir / "features" / f"{b.slug}_{split.value.lower()}.hctf"

    def score_path(self, b: BackboneId, split: Split) -> Path:
        return self.dir / "features" / f"{b.slug}_{split.value.lower()}_proba.npy"

    def stacked_path(self, split: Split) -> Path:
        return self.dir / "fusion" / f"stacked_{split.value.lower()}.hctf"

    # --- stages ---------------------------------------------------------------------

    def prepare(self) -> bool:
        def work():
            c = self.config
            if not c.data_root:
                raise ConfigError("data_root is not set")
            positive = c.split.positive_dir
            scanned = scan_dataset(c.data_root, lambda n: Label.COVID if n == positive else Label.NONCOVID)
            m = split_dataset(scanned, c.split.train_frac, c.split.val_frac, c.seed, c.split.group_pattern)
            write_manifest(m, self.dataset_manifest)
            return [self.dataset_manifest], {"counts": m.counts()}
        return self._run_stage("prepare", work)

    def train(self, backbone) -> bool:
        b = BackboneId(backbone)
        self._require("prepare")

        def work():
            c = self.config
            m = read_manifest(self.dataset_manifest)
            train_ds = ImageDataset(m.subset(Split.TRAIN), augmentation=c.augmentation, seed=c.seed)
            val_ds = ImageDataset(m.subset(Split.VAL))
            model = build_model(b, c.head, weights=c.weights, imagenet_preproc=c.imagenet_preproc, seed=c.seed)
            out = self.model_dir(b)
            artifact = train(model, train_ds, val_ds, c.train, checkpoint_dir=out / "checkpoint", weights=c.weights)
            save_artifact(artifact, out)
            return [out / "model.pt", out / "meta.json"], {
                "param_counts": artifact.param_counts._asdict(),
                "best_epoch": artifact.history["best_epoch"],
            }
        return self._run_stage("train", work, b)

    def extract(self) -> bool:
        for b in BACKBONES:
            self._require("train", b)

        def work():
            m = read_manifest(self.dataset_manifest)
            written = []
            for b in BACKBONES:
                artifact = load_artifact(self.model_dir(b))
                for split in (Split.TRAIN, Split.TEST):
                    records = m.subset(split)
                    probs, feats = predict_dataset(artifact, ImageDataset(records))
                    fm = FeatureMatrix(feats, Stage.RAW, (b,), [r.record_id for r in records], split.value)
                    written.append(write_features(fm, self.feature_path(b, split), self.stage_hash("extract")))
                    np.save(self.score_path(b, split), probs)
                    written.append(self.score_path(b, split))
            return written, {}
        return self._run_stage("extract", work)

    def fuse(self) -> bool:
        self._require("extract")

        def work():
            parts = {s: {b: read_features(self.feature_path(b, s)) for b in BACKBONES}
                     for s in (Split.TRAIN, Split.TEST)}
            f = self.config.fusion
            fusion = fit_fusion(parts[Split.TRAIN], f.variance_target, f.pca_after_stack)
            save_fusion(fusion, self.dir / "fusion")
            written = [self.dir / "fusion" / "fusion.json", self.dir / "fusion" / "fusion.npz"]
            h = self.stage_hash("fuse")
            for s in (Split.TRAIN, Split.TEST):
                written.append(write_features(fusion.transform(parts[s]), self.stacked_path(s), h))
            dims = ({b.value: fusion.pcas[b].n_components for b in BACKBONES}
                    if not fusion.pca_after_stack else {"STACKED": fusion.stacked_dim})
            return written, {"n_components": dims, "stacked_dim": fusion.stacked_dim}
        return self._run_stage("fuse", work)

    def _labels(self, record_ids) -> np.ndarray:
        m = read_manifest(self.dataset_manifest)
        lut = {r.record_id: r.label.target for r in m.records}
        return np.array([lut[r] for r in record_ids], dtype=np.int64)

    def fit_svc(self) -> bool:
        self._require("fuse")

        def work():
            X = read_features(self.stacked_path(Split.TRAIN))
            model = fit_svc(X, self._labels(X.record_ids), self.config.svc)
            save_svc(model, self.dir / "svc")
            return [self.dir / "svc" / "svc.json", self.dir / "svc" / "svc.npz"], {
                "n_support": int(len(model.dual_coef)), "converged": model.converged}
        return self._run_stage("fit_svc", work)

    def _reports(self):
        meta = {"config_hash": self.config.hash, "run_dir": str(self.dir)}
        reports = []
        for b in BACKBONES:
            ids = read_features(self.feature_path(b, Split.TEST)).record_ids
            y = self._labels(ids)
            probs = np.load(self.score_path(b, Split.TEST))
            reports.append(evaluate(y, (probs > 0.5).astype(int), probs, DISPLAY[b],
                                    dict(meta, score="sigmoid probability")))
        X = read_features(self.stacked_path(Split.TEST))
        y = self._labels(X.record_ids)
        model = load_svc(self.dir / "svc")
        reports.append(evaluate(y, predict(model, X), decision_score(model, X), HYBRID,
                                dict(meta, score="svc decision function")))
        return reports

    def evaluate(self) -> bool:
        self._require("fit_svc")

        def work():
            with warnings.catch_warnings():
                # undefined metrics are flagged per class and logged below
                warnings.simplefilter("ignore", UndefinedMetricWarning)
                reports = self._reports()
            written = []
            for r in reports:
                for c in r.per_class:
                    if c.undefined:
                        log.warning("%s / %s: %s undefined (zero denominator), reported as 0",
                                    r.name, c.label, ", ".join(c.undefined))
            for r in reports:
                slug = r.name.lower().replace(" ", "_")
                written += list(render_report(r, self.dir / "report" / slug).values())
            written += list(render_comparison(reports, self.dir / "report").values())
            summary = {r.name: {"accuracy": r.accuracy, "auc": r.auc, **r.weighted} for r in reports}
            self.manifest["metrics"] = summary
            return written, {"metrics": summary}
        return self._run_stage("evaluate", work)

    def run_all(self) -> Path:
        self.prepare()
        for b in BACKBONES:
            self.train(b)
        self.extract()
        self.fuse()
        self.fit_svc()
        self.evaluate()
        return self.dir


def run_all(config: RunConfig, run_dir, force: bool = False) -> Run:
    run = Run(run_dir, config, force=force)
    run.run_all()
    return run


def load_metrics(run_dir) -> dict:
    return json.loads((Path(run_dir) / "manifest.json").read_text())["metrics"]
