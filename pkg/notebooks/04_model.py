"""
The three-branch network
========================

The image branch is a residual encoder with a short upsampling decoder.
Depth and axis points each get a small branch of their own, and an MLP
fuses the three feature vectors into a normalized (u, v).
"""

import torch

from probe_sensing.model import ModelConfig, NestedResNetEncoder, build_model, count_parameters

cfg = ModelConfig(base_channels=16, ebn_expansion=2)
model = build_model(cfg, seed=0).eval()
print("parameters:", count_parameters(model))

# stage-by-stage shapes of the encoder on a 256 x 256 stereo pair
encoder = NestedResNetEncoder(cfg).eval()
with torch.no_grad():
    for k, out in enumerate(encoder(torch.zeros(1, 6, 256, 256))):
        print(f"stage {k}: {tuple(out.shape[1:])}")

images = torch.randn(2, 6, 256, 256)
depths = torch.rand(2, 1, 256, 256)
axis_points = torch.rand(2, 100)
with torch.no_grad():
    print(model(images, depths, axis_points))

# switching off branches removes their parameters entirely
image_only = build_model(ModelConfig(base_channels=16, ebn_expansion=2, branches=("image",)))
print("image-only parameters:", count_parameters(image_only))
