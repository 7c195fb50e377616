#!/usr/bin/env python3
"""
Acceptance harness for the layerpot CLI.
Runs each bundled config into a scratch directory and checks the exit code, the manifest
and the artifact hashes.

Usage:
    python3 tests/run_acceptance.py [--quick]

--quick skips the full-grid runs (flat_oracle, verify_operators, solve_flat, solve_cone, local_wave, alpha_decay).
"""
import sys
import tempfile
import time
from pathlib import Path
from typing import Dict, List

PROJECT_ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(PROJECT_ROOT))

from main import EXIT_CONFIG, EXIT_OK, main as run_cli  # noqa: E402
from services.reporting import load_manifest, verify_artifacts  # noqa: E402

CONFIGS = PROJECT_ROOT / "configs"

CASES: List[Dict] = [
    {"name": "inadmissible", "command": "solve", "config": "inadmissible.toml", "expect": EXIT_CONFIG, "quick": True},
    {"name": "verify_majorant", "command": "verify-majorant", "config": "verify_majorant.toml", "expect": EXIT_OK, "quick": True},
    {"name": "flat_oracle", "command": "flat-oracle", "config": "flat_oracle.toml", "expect": EXIT_OK, "quick": False},
    {"name": "verify_operators", "command": "verify-operators", "config": "verify_operators.toml", "expect": EXIT_OK, "quick": False},
    {"name": "solve_flat", "command": "solve", "config": "solve_flat.toml", "expect": EXIT_OK, "quick": False},
    {"name": "solve_cone", "command": "solve", "config": "solve_cone.toml", "expect": EXIT_OK, "quick": False},
    {"name": "local_wave", "command": "local", "config": "local_wave.toml", "expect": EXIT_OK, "quick": False},
    {"name": "alpha_decay", "command": "alpha-decay", "config": "alpha_decay.toml", "expect": EXIT_OK, "quick": False},
]


# Colors for terminal output
class Colors:
    GREEN = '\033[92m'
    RED = '\033[91m'
    YELLOW = '\033[93m'
    BLUE = '\033[94m'
    BOLD = '\033[1m'
    END = '\033[0m'

def print_header(text: str):
    print(f"\n{Colors.BOLD}{Colors.BLUE}{'='*60}{Colors.END}")
    print(f"{Colors.BOLD}{Colors.BLUE}{text}{Colors.END}")
    print(f"{Colors.BOLD}{Colors.BLUE}{'='*60}{Colors.END}")

def print_pass(text: str):
    print(f"{Colors.GREEN}PASS: {text}{Colors.END}")

def print_fail(text: str):
    print(f"{Colors.RED}FAIL: {text}{Colors.END}")

def print_info(text: str):
    print(f"{Colors.YELLOW}{text}{Colors.END}")


def run_case(case: Dict, scratch: Path) -> bool:
    print_header(f"{case['name']} ({case['command']})")
    out = scratch / case["name"]
    start = time.time()
    code = run_cli([case["command"], "--config", str(CONFIGS / case["config"]), "--out", str(out)])
    print_info(f"exit code {code} after {time.time() - start:.1f}s")

    ok = True
    if code != case["expect"]:
        print_fail(f"exit code {code}, expected {case['expect']}")
        ok = False
    try:
        manifest = load_manifest(out)
    except Exception as e:
        print_fail(f"manifest: {e}")
        return False
    stale = verify_artifacts(out, manifest)
    if stale:
        print_fail(f"artifact hashes differ: {', '.join(stale)}")
        ok = False
    if case["expect"] == EXIT_OK and not manifest.passed:
        for failure in manifest.failures[:5]:
            print_fail(failure)
        ok = False
    if ok:
        print_pass(f"{len(manifest.artifacts)} artifacts, {len(manifest.failures)} recorded failures")
    return ok


def run_all(quick: bool = False) -> bool:
    results = {}
    with tempfile.TemporaryDirectory(prefix="layerpot-") as tmp:
        for case in CASES:
            if quick and not case["quick"]:
                continue
            results[case["name"]] = run_case(case, Path(tmp))

    print_header("ACCEPTANCE SUMMARY")
    passed = sum(1 for v in results.values() if v)
    total = len(results)
    for name, ok in results.items():
        status = f"{Colors.GREEN}PASS{Colors.END}" if ok else f"{Colors.RED}FAIL{Colors.END}"
        print(f"   {name}: {status}")
    print(f"\n   {Colors.BOLD}Total: {passed}/{total} runs passed{Colors.END}")
    return passed == total


if __name__ == "__main__":
    success = run_all(quick="--quick" in sys.argv[1:])
    sys.exit(0 if success else 1)
