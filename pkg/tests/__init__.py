"""Tests for game-workflow."""
