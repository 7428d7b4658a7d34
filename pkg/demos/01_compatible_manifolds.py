"""
Rotations compatible with a single flow vector
==============================================

One flow vector cannot pin down a 3-D rotation: it only tells us that the
rotation lies on a 1-D set. Under the first-order motion model that set is a
straight line in (A, B, C); under exact perspective it is a curve. For the
small per-frame rotations of hand-held video the two nearly coincide.
"""

import math

import numpy as np

from rotvote.geometry import lh_line, perspective_manifold, precompute_directions
from rotvote.synthetic import DEFAULT_INTRINSICS as K, rotational_flow

# a pixel up and to the right of the principal point, rotated by half a degree
r_true = np.radians([0.3, -0.2, 0.35])
x, y = 150.0, -90.0
u, v = rotational_flow(x, y, K.f, r_true)
print(f"flow at ({x:.0f}, {y:.0f}): ({u:.3f}, {v:.3f}) px")

# the compatible line: direction from the pixel alone, anchor from the flow
line = lh_line((x, y, u, v), K.f)
d = line.dir / np.linalg.norm(line.dir)
print("line direction:", np.round(d, 4), " anchor on C = 0:", np.degrees(line.p0).round(4), "deg")

# the true rotation lies on it
off = r_true - line.p0
print(f"distance of truth from line: {np.linalg.norm(off - (off @ d) * d):.2e} rad")

# the perspective curve, sampled by spinning about the target ray
thetas = np.linspace(-0.02, 0.02, 401)
curve = perspective_manifold((x, y, u, v), K, thetas)
off = curve - line.p0
gap = np.linalg.norm(off - (off @ d)[:, None] * d, axis=1)
print(f"curve-to-line distance over the cube: max {math.degrees(gap.max()):.5f} deg")

# directions depend only on pixel position, so a whole grid is tabulated once
xs = np.arange(0, K.width, 15) - K.cx
ys = np.arange(0, K.height, 15) - K.cy
grid = np.array([(a, b) for b in ys for a in xs])
table = precompute_directions(grid, K.f)
print(f"direction table for a {len(xs)}x{len(ys)} grid: {table.shape}, "
      f"min z component {table[:, 2].min():.0f} (never zero)")
