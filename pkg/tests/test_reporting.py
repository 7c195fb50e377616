"""
Tests for services/reporting.py: run directory, manifest hashes, report rendering
"""
import json

import numpy as np
import pytest

from models.report_models import InequalityLine, SuiteReport
from models.run_models import RunConfig
from services.errors import MissingArtifactError
from services.grid import SeminormProfile
from services.reporting import (
    FAILURES,
    MANIFEST,
    PER_RADIUS,
    SUITES,
    SUMMARY,
    RunWriter,
    format_suite,
    load_manifest,
    load_suites,
    margin_drift,
    render_report,
    sha256_file,
    verify_artifacts,
    write_failure_list,
)


def _suite(name="demo", ratio=0.5, asserted=True):
    report = SuiteReport(suite=name)
    report.add(InequalityLine(name="lhs <= rhs", points=10, max_ratio=ratio, margin=1.0 - ratio,
                              passed=ratio <= 1.0, asserted=asserted))
    report.values["fitted_C"] = 1.25
    return report


@pytest.fixture
def finished_run(tmp_path):
    cfg = RunConfig(command="solve", output_dir=tmp_path)
    writer = RunWriter(tmp_path)
    writer.write_rows(PER_RADIUS, [
        {"r": 0.5, "seminorm": 1.0, "bound": 2.0, "ratio": 0.5, "relative_residual": 1e-3},
        {"r": 1.0, "seminorm": 0.5, "bound": 1.5, "ratio": 1.0 / 3.0, "relative_residual": 2e-3},
    ])
    writer.write_profile("solution_seminorms.csv", SeminormProfile(p=2.0, radii=np.array([0.5, 1.0]),
                                                                   values=np.array([1.0, 0.5])))
    writer.add_suite(_suite())
    writer.ck_estimate = 0.125
    writer.constants["c1"] = 10.0
    manifest = writer.finalize(cfg)
    return tmp_path, manifest


class TestRunWriter:
    def test_artifacts_written_and_hashed(self, finished_run):
        run_dir, manifest = finished_run
        for name in (MANIFEST, SUITES, FAILURES, SUMMARY, PER_RADIUS):
            assert (run_dir / name).exists()
        for name, digest in manifest.artifacts.items():
            assert sha256_file(run_dir / name) == digest

    def test_manifest_round_trip(self, finished_run):
        run_dir, manifest = finished_run
        loaded = load_manifest(run_dir)
        assert loaded.passed
        assert loaded.ck_estimate == 0.125
        assert loaded.config["command"] == "solve"
        assert "numpy" in loaded.versions

    def test_failures_recorded(self, tmp_path):
        writer = RunWriter(tmp_path)
        writer.add_suite(_suite(ratio=2.0))
        manifest = writer.finalize(RunConfig(command="solve", output_dir=tmp_path), extra_failures=["late"])
        assert not manifest.passed
        assert manifest.failures[-1] == "late"
        assert json.loads((tmp_path / FAILURES).read_text()) == manifest.failures

    def test_informational_lines_do_not_fail(self, tmp_path):
        writer = RunWriter(tmp_path)
        writer.add_suite(_suite(ratio=2.0, asserted=False))
        assert writer.failures == []

    def test_csv_keeps_full_precision(self, tmp_path):
        writer = RunWriter(tmp_path)
        path = writer.write_csv("x.csv", ["value"], [[1.0 / 3.0]])
        assert float(path.read_text().splitlines()[1]) == 1.0 / 3.0

    def test_failure_list_without_suites(self, tmp_path):
        path = write_failure_list(tmp_path / "nested", ["configuration: bad"])
        assert json.loads(path.read_text()) == ["configuration: bad"]


class TestReadBack:
    def test_suites_round_trip(self, finished_run):
        run_dir, _ = finished_run
        suites = load_suites(run_dir)
        assert suites[0].suite == "demo"
        assert suites[0].lines[0].max_ratio == 0.5

    def test_tampering_detected(self, finished_run):
        run_dir, manifest = finished_run
        assert verify_artifacts(run_dir, manifest) == []
        (run_dir / PER_RADIUS).write_text("r,seminorm,bound,ratio\n", encoding="utf-8")
        assert verify_artifacts(run_dir, manifest) == [PER_RADIUS]

    def test_render(self, finished_run):
        run_dir, _ = finished_run
        text = render_report(run_dir)
        assert "== demo: PASS" in text
        assert "C_K estimate: 0.125" in text
        assert "N_p(u;r)" in text
        assert "WARNING" not in text

    def test_render_empty_directory(self, tmp_path):
        with pytest.raises(MissingArtifactError):
            render_report(tmp_path)

    def test_missing_manifest(self, tmp_path):
        (tmp_path / "stray.txt").write_text("x", encoding="utf-8")
        with pytest.raises(MissingArtifactError):
            load_manifest(tmp_path)


class TestFormatting:
    def test_format_suite(self):
        text = format_suite(_suite(ratio=2.0))
        assert text.startswith("== demo: FAIL")
        assert "fitted_C: 1.25" in text

    def test_margin_drift(self):
        assert margin_drift(_suite(ratio=0.5), _suite(ratio=0.5)) == 0.0
        assert margin_drift(_suite(ratio=0.5), _suite(ratio=0.4)) == pytest.approx(0.2)
        assert margin_drift(_suite(ratio=0.5), SuiteReport(suite="other")) == 0.0
