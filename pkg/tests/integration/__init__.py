"""Integration tests for game-workflow."""
