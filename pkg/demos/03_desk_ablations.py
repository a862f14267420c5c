# coding: utf-8

# # Context and augmentation at desk scale
#
# The real corpus and a GPU budget are out of reach here, so this script
# repeats the two ablations on 500 synthetic masses at 48 px with the
# scratch baseline. Malignant masses carry spicules that only start well
# outside the mask, so a tight crop hides most of the evidence.
#
# Expect roughly 10 minutes on one CPU core.

# In[1]:

import logging

from mammocnn.ablation import DESK_TRAIN, desk_split, run_condition
from mammocnn.synthetic import desk_corpus

logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
logging.getLogger("mammocnn.train").setLevel(logging.WARNING)

corpus = desk_corpus(500, seed=0)
split = desk_split(corpus)
print(len(split.train), "train /", len(split.val), "val /", len(split.test), "test patches")


# # Small vs. large context, no augmentation

# In[2]:

small = run_condition(corpus, "small", False, split, DESK_TRAIN)
large = run_condition(corpus, "large", False, split, DESK_TRAIN)
print(f"best val accuracy  small {small.best_val_acc:.3f}  large {large.best_val_acc:.3f}")


# # Augmentation as a regulariser
#
# Same corpus, same seed, 25 augmented copies per training patch. Training
# accuracy is measured on the original (un-augmented) training patches in
# eval mode, so both runs are scored on exactly the same images.

# In[3]:

aug = run_condition(corpus, "large", True, split, DESK_TRAIN)
print(f"{'':12s} {'train':>6s} {'val':>6s} {'gap':>6s}")
for name, r in (("no aug", large), ("aug", aug)):
    print(f"{name:12s} {r.train_acc:6.3f} {r.val_acc:6.3f} {r.gap:6.3f}")


# In[4]:

for name, r in (("no aug", large), ("aug", aug)):
    print(name, "val per epoch:", " ".join(f"{v:.2f}" for _, v in r.curve.val))
