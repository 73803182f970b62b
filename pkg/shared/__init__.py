"""Shared constants and exceptions for OPPO-Lab."""
