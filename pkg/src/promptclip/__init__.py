"""promptclip: desk-scale contrastive image-text alignment.

A from-scratch float64 autodiff engine drives a small vision-language
model: learnable prompt vectors pool image patches into one embedding,
token embeddings are refined by attending over the visual features, and
the two sides are aligned with a bidirectional temperature-scaled
contrastive loss.  Caption cleaning, zero-shot classification, retrieval
and linear-probe evaluation round out the pipeline.
"""

__version__ = "0.1.0"

from promptclip.backend import BACKEND
from promptclip.tensor import Graph, Tensor, backward, reset_graph

__all__ = ["BACKEND", "Graph", "Tensor", "backward", "reset_graph", "__version__"]
