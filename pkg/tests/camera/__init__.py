"""Tests for camera model adapters."""
