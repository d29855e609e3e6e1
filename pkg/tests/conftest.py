import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from reg2rg.manifest import load_manifest
from reg2rg.pipeline import PipelineConfig
from reg2rg.synth import SynthConfig, synthesize_dataset


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Two small samples with two regions each, fixed seed."""
    out = tmp_path_factory.mktemp("tiny_data")
    cfg = SynthConfig(n_samples=2, dims=(32, 32, 16), regions_per_sample=2,
                      p_abnormal=0.3)
    manifest_path = synthesize_dataset(cfg, seed=7, out_dir=out)
    return cfg, manifest_path, load_manifest(manifest_path)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def pipeline_cfg():
    return PipelineConfig()
