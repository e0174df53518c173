"""rgbdet: contrastive RGB-D pretraining and fused multiscale detection.

Subsystems:

* :mod:`rgbdet.config` -- typed config sections, strict YAML loading.
* :mod:`rgbdet.data` -- frame containers, dataset tree I/O, pair sampling.
* :mod:`rgbdet.synthetic` -- deterministic synthetic RGB-D scenes with boxes.
* :mod:`rgbdet.augment` -- synchronized stochastic RGB-D augmentation.
* :mod:`rgbdet.network` -- fused two-stem encoder and momentum pair.
* :mod:`rgbdet.losses` -- InfoNCE and the combined contrastive objective.
* :mod:`rgbdet.detector` -- SPP/PAN detector, decode, NMS, detection loss.
* :mod:`rgbdet.evaluation` -- greedy matching, AP, metric CSVs.
* :mod:`rgbdet.boxops` -- box kernels (compiled with pure-numpy fallback).
* :mod:`rgbdet.checkpoint` -- canonical binary checkpoints.
* :mod:`rgbdet.gradcheck` -- finite-difference gradient verification.
* :mod:`rgbdet.pipeline` -- training loops, eval drivers, ablation runner.
* :mod:`rgbdet.cli` -- the ``rgbdet`` command.
"""

__version__ = "0.1.0"
