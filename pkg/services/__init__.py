"""Experiment services for OPPO-Lab: configuration, logging, runs, reports and the property suite."""
