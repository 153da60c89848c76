"""Desk-scale open-vocabulary object detection.

Two-stage recipe: contrastive pre-training of an image/text dual encoder,
then transfer to detection by attaching per-token class and box heads and
fine-tuning with a bipartite-matching loss over federated label spaces.
Queries at inference time can be text strings or example image patches.
"""

__version__ = "0.1.0"
