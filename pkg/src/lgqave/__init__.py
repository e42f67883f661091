"""Question-aware VideoQA at desk scale.

Pipeline: cross-attention frame selection -> question-grounded frame graphs
-> dynamic graph transformer -> local/global fusion -> contrastive answer
training, all on pre-extracted embedding files.
"""

__version__ = "0.1.0"

from .backend import HAVE_COMPILED, backend_name

__all__ = ["HAVE_COMPILED", "backend_name", "__version__"]
