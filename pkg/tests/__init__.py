"""Test suite for medsentry."""
