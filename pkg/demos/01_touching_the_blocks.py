"""
Touching the four blocks
========================

A glance lowers the 16 x 16 pressure array onto a block at a normalized
offset ``x`` and a tilt ``phi`` until 2 N of force is reached. This script
touches every block at a few poses and prints the contacts and a coarse
picture of the pressure image.
"""

import numpy as np

from hamlab import touch

# %%
# The same pose gives a different contact pattern on each block.
pose = (0.0, np.pi / 4)
for obj, name in enumerate(touch.OBJECT_NAMES):
    res = touch.execute_glance(obj, pose)
    contacts = ", ".join(f"s={c.s:+.2f} cm / {c.force:.1f} N" for c in res.contacts)
    print(f"{name:>8}: height {res.height:.2f} cm, contacts {contacts}")

# %%
# The image is a column of Gaussian blobs per contact. Show the ridge at
# a flat and a tilted glance, one character per cell.


def ascii_image(img, shades=" .:-=+*#%@"):
    scaled = img / img.max()
    idx = np.minimum((scaled * len(shades)).astype(int), len(shades) - 1)
    return "\n".join("".join(shades[k] for k in row) for row in idx)


for phi in (0.0, np.pi / 4):
    print(f"\nridge at x=0, phi={phi:.3f}")
    print(ascii_image(touch.execute_glance(0, (0.0, phi)).image.raw))

# %%
# Symmetric blocks mirror exactly: flipping the pose flips the image.
a = touch.execute_glance(3, (0.4, 0.6)).image.raw
b = touch.execute_glance(3, (-0.4, -0.6)).image.raw
print("\ncylinder mirror error:", float(np.max(np.abs(a - b[:, ::-1]))))
