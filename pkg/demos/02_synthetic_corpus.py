"""
Building a labelled corpus
==========================

Procedural "camera" images, a recipe of manipulations, and the manifest
that ties them together. Pass an output directory, or a temporary one is used.
"""

import json
import sys
import tempfile
from collections import Counter
from pathlib import Path

import numpy as np

from coocnet import ManipulationSpec, RecipeItem, apply_manipulation, generate_corpus, load_image
from coocnet.synth import write_source_images

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="coocnet_corpus_"))

# 20 untampered sources; same seed, same bytes
sources = write_source_images(out / "sources", 20, seed=0)
img = load_image(sources.resolve(sources.entries[0]))
print("source:", img.pixels.shape, "range", img.pixels.min(), "-", img.pixels.max())

# one operator at a time: every manipulation is a pure function of (image, spec)
clone = apply_manipulation(img, ManipulationSpec("clone", {"src": [4, 4, 16, 16], "dst": [40, 40]}))
print("clone changed", int((clone.pixels != img.pixels).any(axis=-1).sum()), "pixels")
blur = apply_manipulation(img, ManipulationSpec("global_blur", {"sigma": 1.5}))
print("blur mean abs change:", np.abs(blur.pixels.astype(int) - img.pixels).mean().round(2))

# a recipe says how many of each kind to make and where to draw parameters from
recipe = [
    RecipeItem("resize", 10, {"factor": [0.6, 1.6]}),
    RecipeItem("splice", 10),
    RecipeItem("intensity_change", 10),
]
manifest = generate_corpus(sources, recipe, out / "corpus", seed=1)
print("corpus:", dict(Counter(e.manipulation_type or "untampered" for e in manifest)))

# exact operator parameters are kept next to the images
first = json.loads((out / "corpus" / "manipulations.jsonl").read_text().splitlines()[0])
print("first tampered image:", first["path"], first["kind"], first["params"])
print("written to", out)
