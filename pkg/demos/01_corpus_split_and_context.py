# coding: utf-8

# # From a corpus directory to context patches
#
# This walk-through writes a small synthetic corpus in the DDSM file layout,
# scans it into a manifest, splits it by patient and cuts the two context
# variants for one mass. Run it from the repository root:
#
#     python3 demos/01_corpus_split_and_context.py

# In[1]:

import tempfile
from collections import Counter
from pathlib import Path

import numpy as np

from mammocnn.dataset import scan_dataset, split_by_patient
from mammocnn.imageio import read_raster
from mammocnn.roi import ContextStrategy, mask_to_bbox, record_patch
from mammocnn.synthetic import write_synthetic_corpus

work = Path(tempfile.mkdtemp(prefix="mammocnn-demo-"))
root = write_synthetic_corpus(work / "corpus", n_patients=20, seed=4)
print("corpus written to", root)


# # Scanning
#
# Images are `P_LAT_VIEW.png`, masks are `P_LAT_VIEW_MASK_<n>_<LABEL>.png`.
# Each mask becomes one record, so an image with two outlined masses yields
# two records that share the image path.

# In[2]:

manifest = scan_dataset(root)
print(len(manifest), "records from", len(manifest.patients()), "patients")
print(Counter(r.label for r in manifest.records))
manifest.records[0]


# # Patient-level split
#
# No patient may straddle two splits, and val/test must hold as many benign
# as malignant masses. With only 20 patients the 10% quota is tiny, so we
# ask for a roomier 60/20/20 here.

# In[3]:

split = split_by_patient(manifest, (0.6, 0.2, 0.2), seed=1)
labels = {r.record_id: r.label for r in manifest.records}
for name in ("train", "val", "test"):
    ids = getattr(split, name)
    print(f"{name:5s} {len(ids):3d} records", dict(Counter(labels[i] for i in ids)))


# # Two kinds of context
#
# Small context pads the tight mask box by a fixed 50 pixels on every side.
# Large context doubles the box about its centre. Both are clamped to the
# image before cropping.

# In[4]:

rec = next(r for r in manifest.records if r.label == "MALIGNANT")
image, mask = read_raster(rec.image_path), read_raster(rec.mask_path)
tight = mask_to_bbox(mask)
print("tight box ", tight.as_tuple())
for strategy in (ContextStrategy.small(), ContextStrategy.large()):
    box = strategy.expand(tight, (image.shape[1], image.shape[0]))
    patch = record_patch(image, mask, strategy, 224, rec.record_id)
    print(f"{strategy.short_name:5s} box {box.as_tuple()} -> patch {patch.pixels.shape}, "
          f"mean intensity {patch.pixels.mean():.3f}")


# In[5]:

try:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
except ImportError:
    plt = None

if plt is not None:
    fig, axes = plt.subplots(1, 2, figsize=(6, 3))
    for ax, strategy in zip(axes, (ContextStrategy.small(), ContextStrategy.large())):
        ax.imshow(record_patch(image, mask, strategy, 224).pixels, cmap="gray", vmin=0, vmax=1)
        ax.set_title(strategy.short_name + " context")
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(work / "context.png", dpi=100)
    print("figure:", work / "context.png")
