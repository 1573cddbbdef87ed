"""Storage module for experiment outputs"""
from .report_store import ReportRepository, report_stem

__all__ = ["ReportRepository", "report_stem"]
