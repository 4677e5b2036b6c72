"""Walk through the lane curve geometry, from road plane to pitched image.

A ground-plane cubic is projected through a pinhole camera, re-expressed in
the pitched camera's rows, evaluated, sampled, and finally recovered again
by least squares from nothing but the sampled points.
"""

import numpy as np

from laneshape import (
    CameraModel,
    GroundCurve,
    eval_image_curve,
    eval_tilted_curve,
    fit_tilted_curve,
    project_ground_to_image,
    sample_lane,
    tilt_reparameterize,
)

# A camera 1.5 m above the road, pitched slightly downward.
cam = CameraModel(focal_px=200.0, pitch=-0.12, height=1.5, fu=1 / 200.0, fv=1 / 200.0)
print("camera:", cam)

# One lane line: gentle left bend, 1.75 m to the right of the camera axis.
ground = GroundCurve(c3=5e-5, c2=-1e-3, c1=0.02, c0=1.75)
print("ground cubic coefficients:", ground)

image_curve = project_ground_to_image(ground, cam)
print("\nimage-plane composites (untilted):", image_curve)

# Sample a few forward distances and confirm the projection by hand.
for z in (5.0, 15.0, 40.0):
    x = ground.c3 * z**3 + ground.c2 * z**2 + ground.c1 * z + ground.c0
    u_direct = x / (cam.fu * z)
    v = cam.height / (z * cam.fv)
    u_curve = eval_image_curve(image_curve, v)
    print(f"  z={z:5.1f} m -> pixel v={v:7.2f}, u={u_direct:8.3f}  "
          f"(curve evaluation {u_curve:8.3f})")

# Fold the pitch into the coefficients; the pole lands at focal*sin(pitch).
tilted = tilt_reparameterize(image_curve, cam, alpha=0.35, beta=0.95)
print("\ntilted-plane parameters:", tilted)
print("pole (vanishing row):", tilted.horizon)

rows = np.array([30.0, 60.0, 90.0])
print("curve columns at rows", rows, "->", eval_tilted_curve(tilted, rows))

# Sample the visible span and fit the parameters back from the points alone.
polyline = sample_lane(tilted, image_h=128.0, n_samples=12)
fit = fit_tilted_curve([polyline], image_h=128.0)
print("\nround-trip fit residual (px RMS):", fit.rms_residual)
print("recovered pole:", fit.params[0].horizon, "true:", tilted.horizon)
