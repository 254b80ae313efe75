"""Hybrid CNN feature fusion for COVID-19 CT classification.

Three frozen ImageNet backbones (VGG16, DenseNet121, MobileNetV2) with a
small trained head each serve as feature extractors; their penultimate
activations are standardised, reduced by PCA, stacked and classified with
a soft-margin SVC.
"""
from .augment import AugmentationConfig, AugmentParams, apply_augmentation, sample_params
from .backbones import (
    BACKBONES,
    BackboneId,
    HeadConfig,
    ModelArtifact,
    TrainConfig,
    build_model,
    count_parameters,
    load_artifact,
    predict_proba,
    save_artifact,
    sigmoid,
    train,
)
from .config import RunConfig, config_from_dict, load_config
from .data import (
    DatasetManifest,
    ImageRecord,
    ImageTensor,
    Label,
    Split,
    load_image,
    read_manifest,
    scan_dataset,
    split_dataset,
    write_manifest,
)
from .evaluation import (
    ConfusionMatrix,
    EvalReport,
    accuracy,
    auc,
    class_metrics,
    confusion,
    evaluate,
    f1,
    report_from_confusion,
    precision,
    recall,
    report_from_confusion,
    roc_curve,
    weighted_average,
)
from .fusion import (
    FeatureMatrix,
    FusionArtifact,
    Stage,
    apply_scaler,
    extract_features,
    fit_fusion,
    fit_pca,
    fit_scaler,
    load_fusion,
    save_fusion,
    select_k,
    stack_features,
    transform_pca,
)
from .pipeline import Run, run_all
from .report import render_report
from .synthetic import make_synthetic_dataset
from .svc import Kernel, SVCConfig, SVCModel, decision_score, fit_svc, load_svc, predict, save_svc

__version__ = "0.1.0"
