"""
Experiment reports and per-trajectory statistics
"""
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field

from config import settings


class Verdict(str, Enum):
    PASS = "pass"
    FAIL = "fail"
    INCONCLUSIVE = "inconclusive"


class Rule(str, Enum):
    """How a statistic is judged"""
    SIGMA = "sigma"              # |estimate - target| <= max(k*SE, abs_tol)
    WITHIN = "within"            # |estimate - target| <= abs_tol
    AT_MOST = "at_most"          # estimate <= target
    AT_LEAST = "at_least"        # estimate >= target
    GREATER_THAN = "greater_than"
    DIAGNOSTIC = "diagnostic"    # reported, never judged


class StatisticResult(BaseModel):
    """One tracked statistic with its target and judgement"""
    model_config = ConfigDict(extra="forbid")

    name: str
    estimate: Optional[float]
    se: Optional[float] = None
    target: Optional[float] = None
    provenance: str = ""
    rule: Rule = Rule.SIGMA
    sigmas: float = Field(default_factory=lambda: settings.verdict_sigmas)
    abs_tol: float = 0.0
    passed: Optional[bool] = None

    def judge(self) -> Optional[bool]:
        est, target = self.estimate, self.target
        if self.rule is Rule.DIAGNOSTIC:
            self.passed = None
        elif est is None or not math.isfinite(est):
            self.passed = False
        elif self.rule is Rule.SIGMA:
            se = self.se if self.se is not None and math.isfinite(self.se) else 0.0
            self.passed = abs(est - target) <= max(self.sigmas * se, self.abs_tol)
        elif self.rule is Rule.WITHIN:
            self.passed = abs(est - target) <= self.abs_tol
        elif self.rule is Rule.AT_MOST:
            self.passed = est <= target
        elif self.rule is Rule.AT_LEAST:
            self.passed = est >= target
        else:
            self.passed = est > target
        return self.passed


class ExperimentReport(BaseModel):
    """
    Machine-readable outcome of one experiment.

    The verdict is pass iff every judged statistic passes. A negative control
    (expect_failure) passes when some judged statistic fails and is
    inconclusive otherwise.
    """
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    schema_version: str = Field(default_factory=lambda: settings.schema_version, alias="schema")
    name: str
    params: Dict[str, Any] = Field(default_factory=dict)
    seed: int
    replicas: int
    statistics: List[StatisticResult] = Field(default_factory=list)
    expect_failure: bool = False
    notes: List[str] = Field(default_factory=list)
    verdict: Optional[Verdict] = None
    # kept out of the canonical JSON
    wall_clock_seconds: float = 0.0
    replica_rows: List[Dict[str, Any]] = Field(default_factory=list)

    def add(self, statistic: StatisticResult) -> None:
        self.statistics.append(statistic)

    def finalize(self) -> "ExperimentReport":
        judged = [s.judge() for s in self.statistics]
        judged = [j for j in judged if j is not None]
        if len(judged) > settings.max_statistics_per_report:
            self.notes.append(f"{len(judged)} judged statistics exceed the recommended maximum")
        all_pass = all(judged)
        if self.expect_failure:
            self.verdict = Verdict.INCONCLUSIVE if all_pass else Verdict.PASS
        else:
            self.verdict = Verdict.PASS if all_pass else Verdict.FAIL
        return self

    @property
    def passed(self) -> bool:
        return self.verdict is not Verdict.FAIL

    def statistic(self, name: str) -> StatisticResult:
        for s in self.statistics:
            if s.name == name:
                return s
        raise KeyError(name)

    def to_dict(self) -> Dict[str, Any]:
        # non-finite floats serialize as null
        return self.model_dump(
            mode="json",
            by_alias=True,
            exclude={"wall_clock_seconds", "replica_rows"},
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


@dataclass
class TrajectoryStats:
    """Running sums of functionals along one trajectory"""
    names: List[str]
    burn_in: int
    stride: int
    steps: int = 0
    samples: int = 0
    sums: Dict[str, float] = field(default_factory=dict)
    bound_ok: bool = True
    min_bound_margin: float = math.inf
    raw_bound_violations: int = 0
    max_mass_drift: float = 0.0
    final_part_count: int = 1
    stopped_early: bool = False

    def averages(self) -> Dict[str, float]:
        if self.samples == 0:
            return {name: math.nan for name in self.names}
        return {name: self.sums.get(name, 0.0) / self.samples for name in self.names}
