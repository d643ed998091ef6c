"""Task-oriented grasp constraint transfer engine.

Builds a memory of grasp experiences from demonstration records, retrieves
the best match for a new object/task, transfers the grasp position and
direction onto the target via dense feature correspondence and PnP, and
scores candidate grasps for task compatibility.
"""

__version__ = "0.1.0"
