"""Progressive octree geometry codec for LiDAR point clouds."""
__version__ = "0.1.0"
