"""Configuration module for the coagulation-fragmentation toolkit"""
from .settings import settings, Settings

__all__ = ["settings", "Settings"]
