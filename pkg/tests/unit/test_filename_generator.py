"""
Unit tests for default artifact names.
"""

import os
import tempfile
from pathlib import Path

from models import Fidelity, ModelKind, Problem, Split
from utils.filename_generator import ArtifactNamer


class TestArtifactNamer:
    """Test cases for ArtifactNamer."""

    def setup_method(self):
        """Set up test fixtures."""
        self.temp_dir = tempfile.mkdtemp()

    def teardown_method(self):
        """Clean up test fixtures."""
        import shutil
        if os.path.exists(self.temp_dir):
            shutil.rmtree(self.temp_dir)

    def test_init_with_base_dir(self):
        """Test initializing with custom base directory."""
        namer = ArtifactNamer(self.temp_dir)
        assert namer.base_dir == Path(self.temp_dir)

    def test_default_base_dir(self):
        assert ArtifactNamer().base_dir == Path(".")

    def test_triplet_dataset_name(self):
        """Train, calibration and pool splits are triplet files."""
        namer = ArtifactNamer(self.temp_dir)
        path = namer.dataset(Problem.PENDULUM, Split.TRAIN, 1)
        assert path == Path(self.temp_dir) / "pendulum_train_s1.opds"
        assert namer.dataset(Problem.PENDULUM, Split.POOL, 2).name == "pendulum_pool_s2.opds"

    def test_trajectory_dataset_name(self):
        """The test split is a trajectory file."""
        path = ArtifactNamer().dataset(Problem.BURGERS, Split.TEST, 3)
        assert path.name == "burgers_test_s3.optraj"

    def test_low_fidelity_is_marked(self):
        namer = ArtifactNamer()
        assert namer.dataset(Problem.JUMP_MF, Split.TRAIN, 1, Fidelity.LOW).name == "jump_mf_low_train_s1.opds"
        assert namer.dataset(Problem.JUMP_MF, Split.TRAIN, 1, Fidelity.HIGH).name == "jump_mf_train_s1.opds"

    def test_model_name(self):
        assert ArtifactNamer().model(Problem.DIFFUSION, ModelKind.QUANTILE, 0).name == "diffusion_quantile_s0.model"
        assert ArtifactNamer().model(Problem.DIFFUSION, "prob", 4).name == "diffusion_prob_s4.model"

    def test_run_dir_name(self):
        path = ArtifactNamer().run_dir(Problem.PENDULUM, "pendulum", 0.05, 1)
        assert path.name == "pendulum_pendulum_a0.05_s1"

    def test_names_are_deterministic(self):
        """The same inputs always map to the same path."""
        a = ArtifactNamer(self.temp_dir).model(Problem.BURGERS, ModelKind.ENSEMBLE, 7)
        b = ArtifactNamer(self.temp_dir).model(Problem.BURGERS, ModelKind.ENSEMBLE, 7)
        assert a == b

    def test_sanitize_filename(self):
        """Test filename sanitization."""
        assert ArtifactNamer._sanitize("a/b:c?.model") == "a_b_c_.model"
        assert ArtifactNamer._sanitize("with space.csv") == "with_space.csv"
        assert ArtifactNamer._sanitize("...") == "artifact"

    def test_sanitize_long_filename(self):
        """Test sanitization of very long filenames."""
        long_name = "a" * 300 + ".model"
        result = ArtifactNamer._sanitize(long_name)
        assert len(result) == 255
        assert result.endswith(".model")
