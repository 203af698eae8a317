"""End-to-end case synthesis, streaming, batch runs, and the CLI."""

import hashlib
import json

import numpy as np
import pytest

from conftest import make_ct, make_liver, write_case_pair
from tumorsynth.cli import main as cli_main
from tumorsynth.config import ConfigError, SynthConfig, dump_config, load_config
from tumorsynth.grids import Mask3
from tumorsynth.kernels import connected_components, interior_depth_mm
from tumorsynth.nifti import load_nifti
from tumorsynth.pipeline import (discover_cases, generate_dataset,
                                 stream_cases, synthesize_case)
from tumorsynth.placement import PlacementError


def _single_tumor_cfg(**overrides):
    base = dict(
        tumor_count_distribution={1: 1.0},
        size_class_weights={"tiny": 0.0, "small": 1.0, "medium": 0.0,
                            "large": 0.0},
    )
    base.update(overrides)
    return SynthConfig(**base)


class TestSynthesizeCase:
    def test_single_tumor_single_component(self, ct_and_liver):
        ct, liver = ct_and_liver
        cfg = _single_tumor_cfg(
            effects={"mass_effect_strength": 0.0, "cirrhosis_amplitude_hu": 0.0,
                     "satellite_rate": 0.0})
        cfg = SynthConfig.from_dict(cfg.to_dict())
        result = synthesize_case(ct, liver, cfg, case_seed=1)
        assert len(result.specs) == 1
        assert len(connected_components(result.label)) == 1

    def test_bit_identical_reruns(self, ct_and_liver):
        ct, liver = ct_and_liver
        cfg = SynthConfig()
        a = synthesize_case(ct, liver, cfg, case_seed=7)
        b = synthesize_case(ct, liver, cfg, case_seed=7)
        assert np.array_equal(a.image.data, b.image.data)
        assert np.array_equal(a.label.data, b.label.data)
        assert a.specs == b.specs

    def test_different_seed_differs(self, ct_and_liver):
        ct, liver = ct_and_liver
        cfg = SynthConfig()
        a = synthesize_case(ct, liver, cfg, case_seed=7)
        b = synthesize_case(ct, liver, cfg, case_seed=8)
        assert not np.array_equal(a.image.data, b.image.data)

    def test_conservation_outside_influence(self, ct_and_liver):
        ct, liver = ct_and_liver
        result = synthesize_case(ct, liver, SynthConfig(), case_seed=3)
        outside = ~result.influence.data
        assert np.array_equal(result.image.data[outside], ct.data[outside])
        # influence region is a local neighborhood, not the whole grid
        assert result.influence.count < 0.5 * np.prod(ct.dims)

    def test_inputs_not_mutated(self, ct_and_liver):
        ct, liver = ct_and_liver
        ct_before = ct.data.copy()
        liver_before = liver.data.copy()
        synthesize_case(ct, liver, SynthConfig(), case_seed=5)
        assert np.array_equal(ct.data, ct_before)
        assert np.array_equal(liver.data, liver_before)

    def test_empty_liver_errors(self, ct_and_liver):
        ct, _ = ct_and_liver
        empty = Mask3(np.zeros(ct.dims, bool), spacing=ct.spacing)
        with pytest.raises(PlacementError, match="empty"):
            synthesize_case(ct, empty, SynthConfig(), case_seed=0)

    def test_tumors_hypodense_vs_liver(self):
        ct = make_ct(dims=(64, 64, 48), seed=9)
        liver = make_liver(dims=(64, 64, 48))
        result = synthesize_case(ct, liver, _single_tumor_cfg(), case_seed=11)
        assert result.specs
        tumor_hu = np.median(result.image.data[result.label.data])
        liver_shell = liver.data & ~result.influence.data
        liver_hu = np.median(result.image.data[liver_shell])
        assert tumor_hu <= liver_hu - 10.0

    def test_label_radius_matches_spec(self, ct_and_liver):
        ct, liver = ct_and_liver
        result = synthesize_case(ct, liver, SynthConfig(), case_seed=21)
        comps = connected_components(result.label)
        assert len(comps) == len(result.specs)
        for comp in comps:
            center = result.label.voxel_to_world(comp.centroid)
            nearest = min(result.specs,
                          key=lambda s: np.linalg.norm(
                              np.asarray(s.center_world_mm) - center))
            assert abs(comp.radius_mm - nearest.radius_mm) \
                <= 0.25 * nearest.radius_mm

    def test_infeasible_tumor_degrades_with_warning(self):
        # liver too shallow for a large tumor; case still succeeds
        ct = make_ct(dims=(48, 48, 28), spacing=(1.0, 1.0, 1.0))
        liver = make_liver(dims=(48, 48, 28), spacing=(1.0, 1.0, 1.0),
                           margin=11)
        cfg = _single_tumor_cfg(
            size_class_weights={"tiny": 0.0, "small": 0.0, "medium": 0.0,
                                "large": 1.0})
        result = synthesize_case(ct, liver, cfg, case_seed=2)
        assert result.specs == []
        assert any("skipped" in w for w in result.warnings)

    def test_label_components_visible_against_shell(self, ct_and_liver):
        ct, liver = ct_and_liver
        result = synthesize_case(ct, liver, SynthConfig(), case_seed=13)
        depth = interior_depth_mm(result.label)
        for comp in connected_components(result.label):
            idx = tuple(comp.voxels.T)
            comp_mean = result.image.data[idx].mean()
            shell = np.zeros(ct.dims, bool)
            lo = np.maximum(np.asarray(comp.bbox.lo) - 4, 0)
            hi = np.minimum(np.asarray(comp.bbox.hi) + 4, ct.dims)
            shell[tuple(slice(l, h) for l, h in zip(lo, hi))] = True
            shell &= liver.data & ~result.label.data & ~result.influence.data
            if shell.any():
                assert abs(comp_mean - result.image.data[shell].mean()) >= 5.0


class TestStreamAndBatch:
    def test_dataset_layout(self, toy_inputs, tmp_path):
        out = tmp_path / "out"
        summary = generate_dataset(toy_inputs, out, SynthConfig(master_seed=5))
        assert summary.succeeded == 3 and summary.failed == 0
        for i in range(3):
            assert (out / f"case{i}_image.nii.gz").exists()
            assert (out / f"case{i}_label.nii.gz").exists()
        lines = [json.loads(l) for l in
                 summary.manifest_path.read_text().splitlines()]
        assert lines[0]["record"] == "run"
        assert [l["record"] for l in lines[1:]] == ["case"] * 3

    def test_rerun_bit_identical(self, toy_inputs, tmp_path):
        cfg = SynthConfig(master_seed=5)
        s1 = generate_dataset(toy_inputs, tmp_path / "run1", cfg)
        s2 = generate_dataset(toy_inputs, tmp_path / "run2", cfg)
        for name in sorted(p.name for p in (tmp_path / "run1").iterdir()):
            h1 = hashlib.sha256((tmp_path / "run1" / name).read_bytes()).hexdigest()
            h2 = hashlib.sha256((tmp_path / "run2" / name).read_bytes()).hexdigest()
            assert h1 == h2, name

    def test_different_master_seed_changes_manifest(self, toy_inputs, tmp_path):
        m1 = generate_dataset(toy_inputs, tmp_path / "a",
                              SynthConfig(master_seed=1)).manifest_path
        m2 = generate_dataset(toy_inputs, tmp_path / "b",
                              SynthConfig(master_seed=2)).manifest_path
        seeds1 = [r["case_seed"] for r in map(json.loads,
                                              m1.read_text().splitlines())
                  if r["record"] == "case"]
        seeds2 = [r["case_seed"] for r in map(json.loads,
                                              m2.read_text().splitlines())
                  if r["record"] == "case"]
        assert seeds1 != seeds2

    def test_stream_matches_batch(self, toy_inputs, tmp_path):
        cfg = SynthConfig(master_seed=9)
        out = tmp_path / "batch"
        generate_dataset(toy_inputs, out, cfg)
        for outcome in stream_cases(toy_inputs, cfg):
            assert outcome.error is None
            on_disk = load_nifti(out / f"{outcome.case}_image.nii.gz")
            diff = np.abs(on_disk.data - outcome.result.image.data)
            assert diff.max() <= 0.5  # int16 quantization only
            label = load_nifti(out / f"{outcome.case}_label.nii.gz",
                               as_mask=True)
            assert np.array_equal(label.data, outcome.result.label.data)

    def test_prefetch_width_does_not_change_sequence(self, toy_inputs):
        cfg = SynthConfig(master_seed=4)
        serial = list(stream_cases(toy_inputs, cfg, prefetch=1))
        wide = list(stream_cases(toy_inputs, cfg, prefetch=4))
        assert [o.case for o in serial] == [o.case for o in wide]
        for a, b in zip(serial, wide):
            assert np.array_equal(a.result.image.data, b.result.image.data)

    def test_empty_input_dir(self, tmp_path):
        empty = tmp_path / "none"
        empty.mkdir()
        assert list(stream_cases(empty, SynthConfig())) == []
        assert discover_cases(empty) == []

    def test_unreadable_case_skipped_and_logged(self, toy_inputs, tmp_path):
        (toy_inputs / "broken_ct.nii.gz").write_bytes(b"garbage")
        (toy_inputs / "broken_liver.nii.gz").write_bytes(b"garbage")
        summary = generate_dataset(toy_inputs, tmp_path / "out",
                                   SynthConfig(master_seed=5))
        assert summary.succeeded == 3 and summary.failed == 1
        records = [json.loads(l) for l in
                   summary.manifest_path.read_text().splitlines()]
        errors = [r for r in records if r["record"] == "case_error"]
        assert len(errors) == 1 and errors[0]["case"] == "broken"

    def test_manifest_records_regenerate_case(self, toy_inputs, tmp_path):
        cfg = SynthConfig(master_seed=31)
        summary = generate_dataset(toy_inputs, tmp_path / "out", cfg)
        records = [json.loads(l) for l in
                   summary.manifest_path.read_text().splitlines()]
        header, case = records[0], records[1]
        cfg_back = SynthConfig.from_dict(header["config"])
        assert cfg_back.config_hash() == header["config_hash"]
        ct = load_nifti(case["input_ct"])
        liver = load_nifti(case["input_liver"], as_mask=True)
        redo = synthesize_case(ct, liver, cfg_back, case["case_seed"])
        stored = load_nifti(summary.manifest_path.parent / case["label"],
                            as_mask=True)
        assert np.array_equal(redo.label.data, stored.data)
        assert [s.tumor_id for s in redo.specs] \
            == [t["tumor_id"] for t in case["tumors"]]


class TestConfig:
    def test_yaml_round_trip(self, tmp_path):
        cfg = SynthConfig(master_seed=77)
        dump_config(cfg, tmp_path / "cfg.yaml")
        back = load_config(tmp_path / "cfg.yaml")
        assert back == cfg
        assert back.config_hash() == cfg.config_hash()

    def test_partial_override(self, tmp_path):
        (tmp_path / "cfg.yaml").write_text(
            "master_seed: 3\neffects:\n  satellite_rate: 0.0\n")
        cfg = load_config(tmp_path / "cfg.yaml")
        assert cfg.master_seed == 3
        assert cfg.effects.satellite_rate == 0.0
        assert cfg.effects.cirrhosis_amplitude_hu > 0  # default kept

    def test_validation(self):
        with pytest.raises(ConfigError, match="sums to"):
            SynthConfig(tumor_count_distribution={1: 0.5, 2: 0.4})
        with pytest.raises(ConfigError, match="unknown"):
            SynthConfig.from_dict({"not_a_key": 1})

    def test_distribution_keys(self):
        with pytest.raises(ConfigError, match="unknown keys"):
            SynthConfig(size_class_weights={"giant": 1.0})


class TestCli:
    def test_generate_and_preview(self, toy_inputs, tmp_path, capsys):
        out = tmp_path / "ds"
        code = cli_main(["generate", "--inputs", str(toy_inputs),
                         "--out", str(out), "--seed", "12"])
        assert code == 0
        assert "generated 3 case(s)" in capsys.readouterr().out

        png = tmp_path / "preview.png"
        code = cli_main(["preview", "--case",
                         str(toy_inputs / "case0_ct.nii.gz"),
                         "--seed", "1", "--out", str(png)])
        assert code == 0
        assert png.exists() and png.stat().st_size > 1000

    def test_generate_all_failed_nonzero_exit(self, tmp_path):
        inputs = tmp_path / "bad"
        inputs.mkdir()
        (inputs / "x_ct.nii.gz").write_bytes(b"junk")
        (inputs / "x_liver.nii.gz").write_bytes(b"junk")
        code = cli_main(["generate", "--inputs", str(inputs),
                         "--out", str(tmp_path / "o")])
        assert code == 1

    def test_eval_cli(self, tmp_path):
        gt_dir = tmp_path / "gt"
        pred_dir = tmp_path / "pred"
        gt_dir.mkdir()
        pred_dir.mkdir()
        data = np.zeros((10, 10, 10), bool)
        data[3:7, 3:7, 3:7] = True
        from tumorsynth.nifti import save_nifti
        mask = Mask3(data, spacing=(1, 1, 1))
        save_nifti(mask, gt_dir / "c.nii.gz")
        save_nifti(mask, pred_dir / "c.nii.gz")
        code = cli_main(["eval", "--pred", str(pred_dir), "--gt", str(gt_dir),
                         "--tolerance-mm", "2", "--bins", "5,10,20,30",
                         "--out", str(tmp_path / "rep")])
        assert code == 0
        assert (tmp_path / "rep" / "aggregate.csv").exists()

    def test_config_file_flows_through(self, toy_inputs, tmp_path):
        cfg_path = tmp_path / "cfg.yaml"
        cfg_path.write_text("master_seed: 44\n")
        out = tmp_path / "ds"
        code = cli_main(["generate", "--inputs", str(toy_inputs),
                         "--out", str(out), "--config", str(cfg_path)])
        assert code == 0
        header = json.loads(
            (out / "manifest.jsonl").read_text().splitlines()[0])
        assert header["master_seed"] == 44
