"""
Stereo geometry: disparity, depth and back-projection
=====================================================

A rectified stereo rig turns a horizontal pixel offset into metric depth,
and a pixel plus its depth into a 3-D point in the left camera frame.
"""

import numpy as np

from probe_sensing.geometry import CameraRig, Point2D, back_project, disparity_to_depth, error_2d, error_3d, project

# a rig with 1000 px focal length and a 4.5 mm baseline, principal point at the image centre
rig = CameraRig(focal_px=1000.0, baseline_mm=4.5, alpha=1000.0, beta=1000.0,
                principal_point=(612.0, 460.0), image_size=(920, 1224))

# depth is f * b / D; zero disparity marks a pixel without depth
disparity = np.array([[45.0, 90.0], [0.0, 30.0]])
small = CameraRig.simple(1000.0, 4.5, (2, 2))
print(disparity_to_depth(disparity, small))

# lift a pixel with its depth, then project it back
p = Point2D(700.0, 500.0)
P = back_project(p, 80.0, rig)
print("3-D point (mm):", P)
print("re-projected:", project(P, rig))

# the two evaluation metrics are plain Euclidean distances
print(error_2d((3, 4), (0, 0)), error_3d((1, 2, 2), (0, 0, 0)))
