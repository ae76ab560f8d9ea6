"""Video captioning from fused feature streams.

Subpackages by stage: numkit (tensors + reverse-mode autodiff), featio
(feature files, alignment, fusion, synthetic data), textkit (captions and
vocabulary), s2vt (the encoder-decoder model), train (optimizer and loop),
infer (greedy/beam decoding), metrics (caption scoring), cli (command line).
"""

__version__ = "0.1.0"
