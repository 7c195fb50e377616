# models/report_models.py
"""
Report models for verification suites and solver runs
"""
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field


class InequalityLine(BaseModel):
    """One checked inequality: name, points tested, max ratio, margin"""
    name: str = Field(..., description="Inequality identifier")
    points: int = Field(..., description="Number of points tested", ge=0)
    max_ratio: float = Field(..., description="max(lhs / rhs) over tested points")
    margin: float = Field(..., description="1 - max_ratio (negative means violated)")
    passed: bool = Field(..., description="True when the asserted tolerance holds")
    asserted: bool = Field(True, description="False for informational lines")
    note: Optional[str] = Field(None, description="Free-form detail")


class SuiteReport(BaseModel):
    """Result of one CLI suite"""
    suite: str
    lines: List[InequalityLine] = Field(default_factory=list)
    values: Dict[str, Any] = Field(default_factory=dict, description="Scalar findings")
    failures: List[str] = Field(default_factory=list)

    def add(self, line: InequalityLine) -> InequalityLine:
        self.lines.append(line)
        if line.asserted and not line.passed:
            self.failures.append(f"{line.name}: max ratio {line.max_ratio:.4g}")
        return line

    def check(self, name: str, ok: bool, detail: str):
        """Record a pass/fail assertion that is not a ratio"""
        self.add(InequalityLine(
            name=name, points=1, max_ratio=0.0 if ok else 1.0,
            margin=1.0 if ok else 0.0, passed=ok, note=detail,
        ))

    @property
    def passed(self) -> bool:
        return not self.failures


class IterationRecord(BaseModel):
    """One Picard iteration"""
    n: int
    b_step: float = Field(..., description="B-norm of u_{n+1} - u_n")
    residual_sup: float = Field(..., description="sup over acceptance radii of N_p(S u_n - f; r)")
    contraction: Optional[float] = Field(None, description="b_step(n) / b_step(n-1)")


class Manifest(BaseModel):
    """Everything needed to re-run and audit a run"""
    config: Dict[str, Any]
    constants: Dict[str, Any] = Field(default_factory=dict)
    ck_estimate: Optional[float] = None
    versions: Dict[str, str] = Field(default_factory=dict)
    artifacts: Dict[str, str] = Field(default_factory=dict, description="file name -> sha256")
    passed: bool = False
    failures: List[str] = Field(default_factory=list)
