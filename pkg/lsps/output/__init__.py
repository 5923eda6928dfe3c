"""Formatters and writers for reports, tables and plots."""
