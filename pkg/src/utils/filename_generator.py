"""
Default names for generated artifacts.

When an output path is not given, commands derive one from the problem, the
split or model kind and the seeds. Names carry no timestamp and existing files
are overwritten, so rerunning a command reproduces the same paths.
"""

import os
import re
from pathlib import Path
from typing import Dict, Optional, Union

from models import Fidelity, ModelKind, Problem, Split


class ArtifactNamer:
    """Builds deterministic artifact file names inside a base directory."""

    TEMPLATES: Dict[str, str] = {
        "triplets": "{problem}{fidelity}_{split}_s{seed}.opds",
        "trajectories": "{problem}{fidelity}_{split}_s{seed}.optraj",
        "model": "{problem}_{kind}_s{seed}.model",
        "run_dir": "{problem}_{kind}_a{alpha}_s{seed}",
    }

    def __init__(self, base_dir: Union[str, Path] = "."):
        self.base_dir = Path(base_dir)

    def _render(self, template: str, **variables: object) -> Path:
        try:
            name = self.TEMPLATES[template].format(**variables)
        except KeyError as e:
            raise ValueError(f"Unknown template variable or template: {e}")
        return self.base_dir / self._sanitize(name)

    @staticmethod
    def _sanitize(filename: str) -> str:
        safe = re.sub(r'[<>:"/\\|?*\x00-\x1f ]', "_", filename).strip(" .")
        if not safe:
            safe = "artifact"
        if len(safe) > 255:
            stem, ext = os.path.splitext(safe)
            safe = stem[: 255 - len(ext)] + ext
        return safe

    @staticmethod
    def _fidelity(fidelity: Optional[Fidelity]) -> str:
        return f"_{fidelity.value}" if fidelity is Fidelity.LOW else ""

    def dataset(
        self, problem: Problem, split: Split, seed: int, fidelity: Optional[Fidelity] = None
    ) -> Path:
        """Triplet file for train/calib/pool splits, trajectory file for the test split."""
        template = "trajectories" if split is Split.TEST else "triplets"
        return self._render(
            template, problem=problem.value, split=split.value, seed=seed, fidelity=self._fidelity(fidelity)
        )

    def model(self, problem: Problem, kind: Union[ModelKind, str], seed: int) -> Path:
        return self._render("model", problem=problem.value, kind=_kind(kind), seed=seed)

    def run_dir(self, problem: Problem, kind: Union[ModelKind, str], alpha: float, seed: int) -> Path:
        return self._render("run_dir", problem=problem.value, kind=_kind(kind), alpha=f"{alpha:g}", seed=seed)


def _kind(kind: Union[ModelKind, str]) -> str:
    return kind.value if isinstance(kind, ModelKind) else str(kind)
