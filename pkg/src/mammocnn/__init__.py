"""Benign/malignant classification of pre-segmented mammogram masses.

The package is organised by pipeline stage:

- :mod:`mammocnn.dataset`   corpus scanning and patient-disjoint balanced splits
- :mod:`mammocnn.roi`       bounding boxes, context padding, patch extraction
- :mod:`mammocnn.augment`   offline rotation/crop augmentation, train-time mirroring
- :mod:`mammocnn.models`    baseline CNN, adapted AlexNet/GoogLeNet, lr multipliers
- :mod:`mammocnn.train`     optimisation loop, presets, checkpoints
- :mod:`mammocnn.evaluation` predictions and malignant-positive metrics
- :mod:`mammocnn.saliency`  input-gradient saliency maps and panels
- :mod:`mammocnn.cli`       ``mammocnn`` command line entry point
"""

__version__ = "0.1.0"

BENIGN = "BENIGN"
MALIGNANT = "MALIGNANT"
CLASSES = (BENIGN, MALIGNANT)  # index 1 is the positive class
