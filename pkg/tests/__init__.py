"""Tests for :mod:`sequential_stopping`."""
