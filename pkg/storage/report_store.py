"""
File storage for experiment reports, per-replica rows and config echoes
"""
import csv
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional

from config import settings
from core.sigma import SigmaSpec, sigma_tag
from experiments.reports import ExperimentReport

logger = logging.getLogger(__name__)

FORMATS = ("json", "csv", "both")


def report_stem(experiment: str, theta: Optional[float], sigma: Optional[SigmaSpec], seed: int) -> str:
    """{experiment}-{theta}-{sigma_tag}-{seed}; missing parts read 'na'"""
    theta_part = f"{theta:g}" if theta is not None else "na"
    sigma_part = sigma_tag(sigma) if sigma is not None else "na"
    return f"{experiment}-{theta_part}-{sigma_part}-{seed}"


class ReportRepository:
    """
    Repository for experiment outputs on the local filesystem.

    Every saved run produces the report (JSON), its per-replica rows (CSV),
    the resolved config echo and a timing sidecar. The timing sidecar holds
    the only non-reproducible values of a run.
    """

    def __init__(self, output_dir: Optional[str] = None):
        self.output_dir = Path(output_dir or settings.output_dir)

    def _ensure_dir(self) -> Path:
        self.output_dir.mkdir(parents=True, exist_ok=True)
        return self.output_dir

    def path_for(self, stem: str, suffix: str) -> Path:
        return self.output_dir / f"{stem}{suffix}"

    # ==================== Write Operations ====================

    def save_report(
        self,
        report: ExperimentReport,
        stem: str,
        config_echo: Optional[str] = None,
        formats: str = "both"
    ) -> List[Path]:
        """
        Write a finalized report.

        Args:
            report: Report with a verdict
            stem: File stem, see report_stem
            config_echo: Canonical JSON of the resolved run config
            formats: json, csv or both

        Returns:
            Paths written
        """
        written = self.save_output(stem, report.to_json(), report.replica_rows, config_echo, formats)
        timing = {"name": report.name, "wall_clock_seconds": report.wall_clock_seconds}
        written.append(self._write_text(self.path_for(stem, ".timing.json"), json.dumps(timing, indent=2) + "\n"))

        logger.info(f"Saved {report.name} outputs under {self.output_dir}: {[p.name for p in written]}")
        return written

    def save_output(
        self,
        stem: str,
        document: str,
        rows: Iterable[Dict[str, Any]],
        config_echo: Optional[str] = None,
        formats: str = "both"
    ) -> List[Path]:
        """Write a JSON document, its rows and the config echo under one stem"""
        if formats not in FORMATS:
            raise ValueError(f"Unknown output format: {formats}")
        self._ensure_dir()
        written = []

        if formats in ("json", "both"):
            written.append(self._write_text(self.path_for(stem, ".json"), document + "\n"))
        if formats in ("csv", "both"):
            written.append(self.write_rows(self.path_for(stem, ".csv"), rows))
        if config_echo is not None:
            written.append(self._write_text(self.path_for(stem, ".config.json"), config_echo + "\n"))
        return written

    def write_rows(self, path: Path, rows: Iterable[Dict[str, Any]]) -> Path:
        """Write rows as CSV with the union of their keys as columns, first-seen order"""
        rows = list(rows)
        columns: List[str] = []
        for row in rows:
            for key in row:
                if key not in columns:
                    columns.append(key)
        with open(path, "w", newline="") as handle:
            writer = csv.DictWriter(handle, fieldnames=columns, restval="")
            writer.writeheader()
            for row in rows:
                writer.writerow({k: "" if v is None else v for k, v in row.items()})
        return path

    def _write_text(self, path: Path, text: str) -> Path:
        path.write_text(text)
        return path

    # ==================== Read Operations ====================

    def load_report(self, stem: str) -> Dict[str, Any]:
        """Load a saved report as a dict"""
        return json.loads(self.path_for(stem, ".json").read_text())

    def load_rows(self, stem: str) -> List[Dict[str, str]]:
        with open(self.path_for(stem, ".csv"), newline="") as handle:
            return list(csv.DictReader(handle))

    def load_config_echo(self, stem: str) -> Dict[str, Any]:
        return json.loads(self.path_for(stem, ".config.json").read_text())

    def list_reports(self) -> List[str]:
        """Stems of all saved reports, sorted"""
        if not self.output_dir.exists():
            return []
        return sorted(
            p.name[: -len(".json")]
            for p in self.output_dir.glob("*.json")
            if not p.name.endswith((".config.json", ".timing.json"))
        )
