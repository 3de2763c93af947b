"""mirrorlink: desk-scale dual-arm teleoperation, episode recording, and
closed-loop benchmark evaluation, with point-cloud/camera alignment tools."""

__version__ = "0.1.0"
