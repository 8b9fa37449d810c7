"""Headless synchronization engine for shared 3D scene sessions."""

__version__ = "0.1.0"
