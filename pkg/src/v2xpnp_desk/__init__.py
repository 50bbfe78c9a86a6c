"""
V2XPnP Desk - Desk-scale laboratory for V2X cooperative perception and prediction.

This package provides:
- numcore: Float32 tensors, reverse-mode autodiff, attention, Adam and checkpoints
- scenario: Seeded synthetic driving scenarios, ray-cast sensing and ground truth
- comms: V2X graph, messages, payload accounting and the channel model
- perception: Pillar encoding, anchors, rotated IoU, NMS and box decoding
- fusion: Temporal, spatial, multi-agent and map attention plus the composed model
- strategies: No/early/late/intermediate fusion pipelines
- metrics: AP, ADE/FDE/MR and end-to-end prediction accuracy
- trackassoc: Cross-agent track association and consensus box refinement
- trainer: Losses and the multi-stage training schedule
- cli: Experiment configuration, sweeps and reports
- shared: Shared types, constants, errors and geometry helpers
"""

__version__ = "0.1.0"
__author__ = "Jon Duea"
