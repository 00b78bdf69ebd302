"""Kinematics, simulation and learned open-loop control for a 2-DOF
spherical five-bar (5R) parallel manipulator."""

__version__ = "0.1.0"
