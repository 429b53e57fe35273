"""Tests for mlpinit_bench."""
