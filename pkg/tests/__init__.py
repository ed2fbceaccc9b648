"""Test suite for cmml-cli."""
