"""Unit tests for game-workflow."""
