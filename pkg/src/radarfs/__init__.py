"""Flash file-management simulator with a learned strategy selector."""

__version__ = "0.1.0"
