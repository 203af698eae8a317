"""Shared fixtures: toy CT volumes, liver masks, and on-disk case pairs."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from tumorsynth.grids import Mask3, Volume3
from tumorsynth.nifti import save_nifti


def make_ct(dims=(48, 48, 40), spacing=(1.5, 1.5, 2.0), mean=55.0, std=10.0,
            seed=0) -> Volume3:
    rng = np.random.default_rng(seed)
    data = rng.normal(mean, std, dims).astype(np.float32)
    return Volume3(data, spacing=spacing)


def make_liver(dims=(48, 48, 40), spacing=(1.5, 1.5, 2.0), margin=6) -> Mask3:
    data = np.zeros(dims, dtype=bool)
    data[margin:dims[0] - margin, margin:dims[1] - margin,
         margin:dims[2] - margin] = True
    return Mask3(data, spacing=spacing)


@pytest.fixture
def ct_and_liver():
    return make_ct(), make_liver()


def write_case_pair(directory: Path, stem: str, ct: Volume3, liver: Mask3) -> None:
    save_nifti(ct, directory / f"{stem}_ct.nii.gz")
    save_nifti(liver, directory / f"{stem}_liver.nii.gz")


@pytest.fixture
def toy_inputs(tmp_path) -> Path:
    """Three small CT/liver case pairs on disk."""
    inputs = tmp_path / "inputs"
    inputs.mkdir()
    for i in range(3):
        ct = make_ct(seed=100 + i)
        write_case_pair(inputs, f"case{i}", ct, make_liver())
    return inputs


def write_pool(directory: Path, n_cases: int = 2, seed: int = 0,
               dims=(16, 16, 12)) -> Path:
    """Image/label pool pairs with a small cubic tumor label."""
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    for i in range(n_cases):
        image = Volume3(rng.normal(60, 25, dims).astype(np.float32),
                        spacing=(1.0, 1.0, 2.0))
        label = np.zeros(dims, dtype=bool)
        label[5:9, 5:9, 3:7] = True
        save_nifti(image, directory / f"case{i}_image.nii.gz")
        save_nifti(Mask3(label, spacing=(1.0, 1.0, 2.0)),
                   directory / f"case{i}_label.nii.gz")
    return directory
