"""
Probe axis from a silhouette mask
=================================

The probe axis is the first principal component of the mask pixel
coordinates. Fifty points are then drawn along that line inside the image.
"""

import numpy as np

from probe_sensing.axis import extract_axis, sample_axis_points
from probe_sensing.errors import AmbiguousAxisError

# an elongated bar tilted by 30 degrees
v, u = np.mgrid[0:192, 0:256].astype(float)
a = np.deg2rad(30)
along = (u - 128) * np.cos(a) + (v - 96) * np.sin(a)
across = -(u - 128) * np.sin(a) + (v - 96) * np.cos(a)
mask = (np.abs(along) < 60) & (np.abs(across) < 8)

centroid, direction = extract_axis(mask)
print("centroid", centroid, "angle", np.degrees(np.arctan2(direction[1], direction[0])))

# the sampled points are what the axis branch of the network sees
points = sample_axis_points(centroid, direction, mask, n=50, seed=0)
print(points.points[:5])

# a round blob has no preferred direction
disc = (u - 128) ** 2 + (v - 96) ** 2 < 40**2
try:
    extract_axis(disc)
except AmbiguousAxisError as e:
    print("disc:", e)
