# coding: utf-8

# # Where does the network look?
#
# Train the baseline briefly on synthetic large-context patches, then plot
# |d score / d pixel| for five validation masses. The gradient is taken of
# the pre-softmax score of the predicted class, maximised over the three
# input channels.

# In[1]:

import tempfile
from pathlib import Path

import numpy as np
import torch

from mammocnn.ablation import corpus_sets, desk_split
from mammocnn.models import BASELINE, ModelConfig, build_network
from mammocnn.saliency import render_panel, saliency_map
from mammocnn.synthetic import desk_corpus
from mammocnn.train import TrainConfig, train

corpus = desk_corpus(200, seed=3, side=64, strategies=("large",))
split = desk_split(corpus)
train_items, val_items = corpus_sets(corpus, "large", split)

torch.manual_seed(0)
net = build_network(ModelConfig(BASELINE, input_side=64))
best, curve, _ = train(net, train_items, val_items, TrainConfig(max_epochs=15, batch_size=16))
print(f"best val accuracy {best.val_accuracy:.2f} at epoch {best.epoch}")
net.load_state_dict(best.weights)


# # Five maps

# In[2]:

idx = list(range(5))
patches = [val_items.pixels[i] for i in idx]
maps = [saliency_map(net, p) for p in patches]
titles = [f"{val_items.ids[i][:5]}\ntrue {'MB'[1 - val_items.labels[i]]} pred {'MB'[1 - m.class_index]}"
          for i, m in zip(idx, maps)]
out = render_panel(patches, maps, Path(tempfile.mkdtemp(prefix="mammocnn-sal-")) / "saliency.png", titles)
print("panel:", out)


# # Where the mass sits
#
# A rough summary of the maps: share of saliency mass inside the central
# half of the patch (where the core sits under the 2x context) versus the
# surround, which holds the spicules.

# In[3]:

s = 64
core = np.zeros((s, s), bool)
core[s // 4 : 3 * s // 4, s // 4 : 3 * s // 4] = True
for i, m in zip(idx, maps):
    v = m.values
    print(val_items.ids[i], f"centre share {v[core].sum() / max(v.sum(), 1e-12):.2f}")
