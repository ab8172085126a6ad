"""Keyword-spotting workbench for session-structured multichannel recordings.

Subpackages and modules:

- corpus:    data model, file formats, windowing, splits
- synthgen:  deterministic synthetic corpora with injected word signatures
- nncore:    minimal autodiff kernel + AdamW + checkpoints
- model:     the reference detector (trunk / projection / dual heads / pooling)
- losses:    focal + pairwise ranking objective
- sampling:  balanced batches and training-time augmentation
- training:  train loop with validation-AUPRC checkpoint selection
- metrics:   exact AUPRC/AUROC, thresholded metrics, bootstrap, permutation
- operate:   threshold selection and FA/h / Misses/h / Detections/h
- sweeps:    scaling / offsets / keyword experiment families
- cli:       the `kwslab` command
"""

__version__ = "0.1.0"
