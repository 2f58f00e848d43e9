"""
Co-occurrence matrices by hand
==============================

What the feature extractor sees: for every channel, a 2-D histogram of
(pixel, right neighbour) pairs and one of (pixel, pixel below) pairs.
"""

import numpy as np

from coocnet import Image, cooccurrence, extract_tensor

# a 2x2 channel with four distinct values
ch = np.array([[0, 1],
               [2, 3]], dtype=np.uint8)

# horizontal pairs are (0, 1) and (2, 3); vertical pairs are (0, 2) and (1, 3)
h = cooccurrence(ch, "horizontal", bins=256)
v = cooccurrence(ch, "vertical", bins=256)
print("horizontal pairs:", np.argwhere(h).tolist())
print("vertical pairs:  ", np.argwhere(v).tolist())

# pairs are ordered, so mirroring the image transposes the horizontal matrix
mirrored = cooccurrence(ch[:, ::-1], "horizontal", bins=256)
print("mirror == transpose:", np.array_equal(mirrored, h.T))

# a smooth image piles its mass near the diagonal; noise spreads it out
rng = np.random.default_rng(0)
ramp = np.tile(np.linspace(40, 200, 64), (64, 1))
smooth = Image(np.stack([ramp] * 3, axis=-1).astype(np.uint8))
noisy = Image(np.clip(smooth.pixels + rng.normal(0, 12, smooth.pixels.shape), 0, 255).astype(np.uint8))


def diagonal_mass(img, width=2):
    # share of R-horizontal pairs whose two values differ by at most `width` bins
    plane = extract_tensor(img, bins=64).planes[0]
    i, j = np.indices(plane.shape)
    return plane[np.abs(i - j) <= width].sum()


print(f"near-diagonal mass, smooth: {diagonal_mass(smooth):.3f}")
print(f"near-diagonal mass, noisy:  {diagonal_mass(noisy):.3f}")

# the full feature: 6 planes (R, G, B horizontal then R, G, B vertical), each summing to 1
t = extract_tensor(noisy, bins=64)
print("tensor shape:", t.planes.shape, "plane sums:", np.round(t.planes.sum(axis=(1, 2)), 6))
