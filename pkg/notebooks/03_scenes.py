"""
Synthetic stereo scenes
=======================

Each scene is a textured tissue heightfield with a cylindrical probe above
it. Both views are ray cast, so depth, mask and the sensing point are exact:
the sensing point is where the probe axis meets the surface.
"""

from pathlib import Path

import numpy as np
from PIL import Image

from probe_sensing import scenegen
from probe_sensing.axis import axis_line_distance

spec = scenegen.SceneSpec()
sample, surface, pose = scenegen.generate_scene(spec, seed=0, sample_id="demo")

print("image", sample.left_image.shape, "probe pixels", int(sample.mask.sum()))
print("sensing point (px)", sample.gt_2d, "(mm)", sample.gt_3d)
print("tissue depth range (mm)", sample.depth[~sample.mask].min(), sample.depth[~sample.mask].max())

# the sensing point lies close to the image-space axis of the silhouette
print("distance to mask axis (px)", axis_line_distance(sample.gt_2d, sample.axis.centroid, sample.axis.direction))

# left and right views side by side
out = Path("scene_demo.png")
Image.fromarray(np.hstack([sample.left_image, sample.right_image])).save(out)
print("wrote", out)
