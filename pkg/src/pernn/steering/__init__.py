"""Steering case study: pure-pursuit physics, 2D simulator, demonstrations."""
