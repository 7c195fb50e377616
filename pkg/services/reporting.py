# services/reporting.py
"""
Run artifacts
- One output directory per run: manifest.json, suites.json, failures.json, summary.txt and CSV tables
- The manifest carries the resolved config, constants, the C_K estimate, package versions
  and a sha256 per artifact, so a run can be repeated from it alone
"""
import csv
import hashlib
import json
import logging
import platform
from importlib import metadata
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

from models.report_models import Manifest, SuiteReport
from models.run_models import RunConfig
from services.errors import MissingArtifactError
from services.grid import SeminormProfile, profile_to_csv

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
SUITES = "suites.json"
FAILURES = "failures.json"
SUMMARY = "summary.txt"
PER_RADIUS = "per_radius.csv"
ITERATIONS = "iterations.csv"

PACKAGES = ("numpy", "scipy", "pydantic", "pydantic-settings", "python-dotenv")


def package_versions() -> Dict[str, str]:
    versions = {"python": platform.python_version()}
    for name in PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "not installed"
    return versions


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def format_suite(report: SuiteReport) -> str:
    """Plain-text table of one suite"""
    lines = [f"== {report.suite}: {'PASS' if report.passed else 'FAIL'}"]
    width = max((len(l.name) for l in report.lines), default=10)
    for line in report.lines:
        status = "ok" if line.passed else ("FAIL" if line.asserted else "info")
        note = f"  {line.note}" if line.note else ""
        lines.append(f"  {line.name:<{width}}  n={line.points:<6d} max_ratio={line.max_ratio:<10.4g} {status}{note}")
    for key, value in report.values.items():
        if isinstance(value, float):
            value = f"{value:.6g}"
        lines.append(f"  {key}: {value}")
    return "\n".join(lines)


class RunWriter:
    """
    Owns one run directory.
    Artifacts are registered as they are written and hashed when the manifest is finalized.
    """

    def __init__(self, output_dir: Path):
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self._artifacts: List[str] = []
        self.suites: List[SuiteReport] = []
        self.constants: Dict[str, Any] = {}
        self.ck_estimate: Optional[float] = None

    def path(self, name: str) -> Path:
        return self.output_dir / name

    def register(self, name: str):
        if name not in self._artifacts:
            self._artifacts.append(name)

    def write_csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
        path = self.path(name)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for row in rows:
                writer.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in row])
        self.register(name)
        logger.debug(f"[Report] wrote {path}")
        return path

    def write_rows(self, name: str, rows: List[Dict[str, Any]]) -> Path:
        header = list(rows[0].keys()) if rows else []
        return self.write_csv(name, header, ([row[k] for k in header] for row in rows))

    def write_profile(self, name: str, profile: SeminormProfile) -> Path:
        path = self.path(name)
        profile_to_csv(profile, path)
        self.register(name)
        return path

    def write_json(self, name: str, payload: Any) -> Path:
        path = self.path(name)
        path.write_text(json.dumps(payload, indent=2, default=str), encoding="utf-8")
        self.register(name)
        return path

    def add_suite(self, report: SuiteReport) -> SuiteReport:
        self.suites.append(report)
        logger.info(f"[Report] suite '{report.suite}': {'PASS' if report.passed else 'FAIL'}")
        for failure in report.failures:
            logger.warning(f"[Report] {report.suite}: {failure}")
        return report

    @property
    def failures(self) -> List[str]:
        return [f"{s.suite}: {f}" for s in self.suites for f in s.failures]

    def finalize(self, config: RunConfig, extra_failures: Sequence[str] = ()) -> Manifest:
        """Write suites, failures, summary and the manifest; returns the manifest"""
        failures = self.failures + list(extra_failures)
        self.write_json(SUITES, [s.model_dump() for s in self.suites])
        self.write_json(FAILURES, failures)
        summary = "\n\n".join(format_suite(s) for s in self.suites) or "(no suites)"
        self.path(SUMMARY).write_text(summary + "\n", encoding="utf-8")
        self.register(SUMMARY)

        manifest = Manifest(
            config=json.loads(config.model_dump_json()),
            constants=self.constants,
            ck_estimate=self.ck_estimate,
            versions=package_versions(),
            artifacts={name: sha256_file(self.path(name)) for name in self._artifacts},
            passed=not failures,
            failures=failures,
        )
        self.path(MANIFEST).write_text(manifest.model_dump_json(indent=2), encoding="utf-8")
        logger.info(f"[Report] {len(self._artifacts)} artifacts in {self.output_dir}, {len(failures)} failures")
        return manifest


def write_failure_list(output_dir: Path, failures: Sequence[str]) -> Path:
    """failures.json for runs that stop before any suite finishes"""
    path = Path(output_dir) / FAILURES
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(list(failures), indent=2), encoding="utf-8")
    return path


# ============================================================
# READING RUNS BACK
# ============================================================

def load_manifest(run_dir: Path) -> Manifest:
    path = Path(run_dir) / MANIFEST
    if not path.exists():
        raise MissingArtifactError(f"no {MANIFEST} in {run_dir}")
    return Manifest.model_validate_json(path.read_text(encoding="utf-8"))


def load_suites(run_dir: Path) -> List[SuiteReport]:
    path = Path(run_dir) / SUITES
    if not path.exists():
        raise MissingArtifactError(f"no {SUITES} in {run_dir}")
    return [SuiteReport.model_validate(s) for s in json.loads(path.read_text(encoding="utf-8"))]


def read_table(path: Path) -> List[Dict[str, str]]:
    if not path.exists():
        raise MissingArtifactError(f"missing table {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def verify_artifacts(run_dir: Path, manifest: Manifest) -> List[str]:
    """Names whose sha256 no longer matches the manifest"""
    bad = []
    for name, digest in manifest.artifacts.items():
        path = Path(run_dir) / name
        if not path.exists() or (name != SUMMARY and sha256_file(path) != digest):
            bad.append(name)
    return bad


def render_report(run_dir: Path) -> str:
    """
    Human-readable summary of a finished run: suites, the per-radius table and the
    per-iteration table when the run was a solve.

    Raises:
        MissingArtifactError: empty or incomplete run directory
    """
    run_dir = Path(run_dir)
    if not run_dir.is_dir() or not any(run_dir.iterdir()):
        raise MissingArtifactError(f"run directory {run_dir} is empty")
    manifest = load_manifest(run_dir)
    suites = load_suites(run_dir)
    out = [f"run: {run_dir}", f"command: {manifest.config.get('command')}"]
    if manifest.ck_estimate is not None:
        out.append(f"C_K estimate: {manifest.ck_estimate:.6g}")
    for key, value in manifest.constants.items():
        out.append(f"{key}: {value}")
    stale = verify_artifacts(run_dir, manifest)
    if stale:
        out.append(f"WARNING: artifacts changed since the run: {', '.join(stale)}")
    out.append("")
    out.extend(format_suite(s) for s in suites)

    if (run_dir / PER_RADIUS).exists():
        rows = read_table(run_dir / PER_RADIUS)
        out.append("")
        out.append(f"{'r':>12} {'N_p(u;r)':>14} {'bound':>14} {'ratio':>10}")
        for row in rows:
            out.append(
                f"{float(row['r']):>12.5g} {float(row['seminorm']):>14.6g} "
                f"{float(row['bound']):>14.6g} {float(row['ratio']):>10.4g}"
            )
    if (run_dir / ITERATIONS).exists():
        rows = read_table(run_dir / ITERATIONS)
        out.append("")
        out.append(f"{'n':>4} {'B-step':>12} {'residual':>12} {'contraction':>12}")
        for row in rows:
            out.append(f"{row['n']:>4} {float(row['b_step']):>12.4e} {float(row['residual_sup']):>12.4e} {row['contraction'] or '-':>12}")
    return "\n".join(out)


def margin_drift(a: SuiteReport, b: SuiteReport) -> float:
    """Largest relative difference of max_ratio between two runs of the same suite"""
    ratios = {line.name: line.max_ratio for line in a.lines}
    drift = 0.0
    for line in b.lines:
        if line.name in ratios:
            x, y = ratios[line.name], line.max_ratio
            scale = max(abs(x), abs(y))
            if scale > 0:
                drift = max(drift, abs(x - y) / scale)
    return drift
