"""Trajectory-controlled local video editing on synthetic scenes.

A small pixel-space video diffusion model learns to regenerate a video so
that a user-chosen region follows user-drawn point trajectories while the
rest of the frame is preserved. Content and motion conditions are fused by
a learned gate inside a control branch; a staged curriculum first learns
motion following, then unpicks the content-motion shortcut with composite
two-video training data, then re-harmonizes region boundaries.
"""

__version__ = "0.1.0"
