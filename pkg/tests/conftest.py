import os
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hybridct.config import config_from_dict  # noqa: E402
from hybridct.pipeline import Run  # noqa: E402
from hybridct.synthetic import make_synthetic_dataset  # noqa: E402

os.environ.setdefault("HYBRIDCT_OFFLINE", "1")

SMOKE_CONFIG = {
    "weights": "random",
    "split": {"train_frac": 0.8, "val_frac": 0.1},
    "train": {"epochs": 2},
}


@pytest.fixture(scope="session")
def smoke_data(tmp_path_factory):
    return make_synthetic_dataset(tmp_path_factory.mktemp("smoke") / "data", n_per_class=30, seed=0)


@pytest.fixture(scope="session")
def smoke_config(smoke_data):
    return config_from_dict(dict(SMOKE_CONFIG, data_root=str(smoke_data)))


@pytest.fixture(scope="session")
def smoke_run(smoke_config, tmp_path_factory):
    """One complete run shared by every test that only reads its artifacts."""
    import time

    run = Run(tmp_path_factory.mktemp("runs") / "smoke", smoke_config)
    start = time.monotonic()
    run.run_all()
    run.elapsed = time.monotonic() - start
    return run
