"""Tests for the spot-to-feature-row pipeline and its job runner."""

import numpy as np
import pytest
from PIL import Image

from mitotyper.errors import EmptyRoiError, PipelineError
from mitotyper.features import assemble_hist_features, sample_from_roi
from mitotyper.imaging import color_deconvolve, default_stain_basis, to_grayscale, white_balance
from mitotyper.pipeline import (
    PipelineOptions,
    SpotJob,
    cohort_feature_table,
    cohort_jobs,
    manifest_jobs,
    process_spot,
    read_image,
    run_jobs,
)
from mitotyper.segmentation import build_cytoplasm_rings, detect_nuclei
from mitotyper.synth import SynthSpec, generate_cohort, generate_spot

SPEC = SynthSpec(
    patients_per_class=1,
    spots_per_patient=2,
    spot_size=600,
    nuclei_range=(25, 35),
    seed=21,
)


@pytest.fixture(scope="module")
def spot():
    image, _ = generate_spot("CCP", SPEC, seed=77)
    return image


@pytest.fixture(scope="module")
def cohort():
    return generate_cohort(SPEC)


class TestProcessSpot:
    def test_row_identity_and_shape(self, spot):
        res = process_spot(spot, "CCP01", "s1", "CCP")
        assert res.row.patient_id == "CCP01"
        assert res.row.spot_id == "s1"
        assert res.row.unit_id == "orig"
        assert res.row.variant == "orig"
        assert res.row.source == "HIST"
        assert res.row.values.shape == (517,)
        assert np.all(np.isfinite(res.row.values))
        assert res.nucleus_count > 0
        assert res.roi_pixels > 0

    def test_matches_manual_chain(self, spot):
        opts = PipelineOptions()
        res = process_spot(spot, "p", "s", "CCP", opts)

        balanced = white_balance(spot, window=opts.balance_window, stride=opts.balance_stride)
        _, mito, _ = color_deconvolve(balanced, default_stain_basis())
        nuclei = detect_nuclei(color_deconvolve(balanced, default_stain_basis())[0], opts.detection)
        roi = build_cytoplasm_rings(
            nuclei,
            to_grayscale(balanced),
            thickness=opts.ring_thickness,
            bg_threshold=opts.ring_bg_threshold,
        )
        expected = assemble_hist_features(sample_from_roi(mito, roi.mask, "s"))
        assert np.array_equal(res.row.values, expected.values)
        assert res.roi_pixels == roi.pixel_count

    def test_blank_image_raises_empty_roi(self):
        blank = np.full((600, 600, 3), 255, dtype=np.uint8)
        with pytest.raises(EmptyRoiError):
            process_spot(blank, "p", "s", "CC")


class TestReadImage:
    def test_rgb_round_trip(self, tmp_path, spot):
        path = tmp_path / "spot.png"
        Image.fromarray(spot, "RGB").save(path)
        assert np.array_equal(read_image(path), spot)

    def test_other_modes_become_rgb(self, tmp_path):
        gray = np.arange(100, dtype=np.uint8).reshape(10, 10)
        path = tmp_path / "gray.png"
        Image.fromarray(gray, "L").save(path)
        out = read_image(path)
        assert out.shape == (10, 10, 3)
        assert np.array_equal(out[..., 0], gray)

    def test_unreadable_file(self, tmp_path):
        path = tmp_path / "broken.png"
        path.write_bytes(b"not a png at all")
        with pytest.raises(PipelineError, match="unreadable image"):
            read_image(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(PipelineError, match="unreadable image"):
            read_image(tmp_path / "absent.png")


class TestJobs:
    def test_job_needs_image_or_path(self):
        with pytest.raises(PipelineError, match="no image or path"):
            SpotJob("p", "s", "CC").load()

    def test_job_prefers_in_memory_image(self, spot):
        job = SpotJob("p", "s", "CCP", image=spot)
        assert job.load() is spot

    def test_job_loads_from_path(self, tmp_path, spot):
        path = tmp_path / "spot.png"
        Image.fromarray(spot, "RGB").save(path)
        job = SpotJob("p", "s", "CCP", path=path)
        assert np.array_equal(job.load(), spot)

    def test_manifest_jobs_resolve_root(self, tmp_path):
        entries = [
            {"patient_id": "CC01", "spot_id": "s1", "label": "CC", "path": "CC01_s1.png"},
            {"patient_id": "CC01", "spot_id": "s2", "label": "CC", "path": "sub/CC01_s2.png"},
        ]
        jobs = manifest_jobs(entries, tmp_path)
        assert jobs[0].path == tmp_path / "CC01_s1.png"
        assert jobs[1].path == tmp_path / "sub" / "CC01_s2.png"
        assert jobs[0].patient_id == "CC01"
        assert jobs[1].spot_id == "s2"

    def test_parallel_results_match_serial_order(self, cohort):
        jobs = cohort_jobs(cohort)
        serial = run_jobs(jobs, n_jobs=1)
        parallel = run_jobs(jobs, n_jobs=4)
        assert [r.row.key for r in serial] == [(j.patient_id, j.spot_id, "orig", "HIST") for j in jobs]
        for a, b in zip(serial, parallel):
            assert a.row.key == b.row.key
            assert np.array_equal(a.row.values, b.row.values)


class TestCohortTable:
    def test_table_layout(self, cohort):
        table = cohort_feature_table(cohort, n_jobs=2)
        assert len(table) == len(cohort.records)
        assert table.dimensions == {"HIST": 517}
        labels = {r.patient_id: r.label for r in table.rows}
        assert labels == {"CC01": "CC", "CCP01": "CCP", "ONC01": "ONC"}
        assert all(r.unit_id == "orig" and r.variant == "orig" for r in table.rows)
