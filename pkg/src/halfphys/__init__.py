"""Velocity-driven half-physics simulation of kinematic human motion."""
