"""Grounding backends: question-guided boxes with RoI features.

The built-in saliency backend is model-free: it boxes the patch cells whose
embeddings deviate most from the frame mean. A prompted multimodal backend
is sketched behind the same interface for when local weights exist; its
prompt template is an overridable string. RoI features are the mean of the
patch embeddings whose centers fall inside each box.
"""

import numpy as np

from .encoders import EncoderLoadError

MAX_BOXES = 10

DEFAULT_PROMPT = (
    "Return up to {max_boxes} bounding boxes, as normalized x1,y1,x2,y2 "
    "quadruples, around the objects in this frame that are relevant to the "
    "question: {question}"
)


def roi_feature(patch_embeddings, centers, box, n_tokens):
    """Mean of real patch embeddings whose centers fall inside the box."""
    x1, y1, x2, y2 = box
    live = np.zeros(len(patch_embeddings), dtype=bool)
    live[:n_tokens] = True
    inside = (
        live
        & (centers[:, 0] >= x1)
        & (centers[:, 0] <= x2)
        & (centers[:, 1] >= y1)
        & (centers[:, 1] <= y2)
    )
    if not inside.any():
        inside = live
    return patch_embeddings[inside].mean(axis=0)


class SaliencyGrounding:
    """Boxes around the most feature-deviant patch cells (question-agnostic)."""

    name = "saliency"

    def __init__(self, max_boxes=3, cell_span=1.5):
        self.max_boxes = min(max_boxes, MAX_BOXES)
        self.cell_span = cell_span

    def ground(self, patch_embeddings, centers, n_tokens, question):
        emb = patch_embeddings[:n_tokens]
        dev = np.linalg.norm(emb - emb.mean(axis=0, keepdims=True), axis=1)
        median = float(np.median(dev))
        # positional encodings give every cell some baseline deviation; only
        # cells that clearly stand out from the frame's typical level count
        if not np.isfinite(dev).any() or dev.max() <= max(1e-9, 2.5 * median):
            return []
        grid = int(round(np.sqrt(n_tokens)))
        half = self.cell_span / grid
        order = np.argsort(dev)[::-1]
        boxes = []
        taken = np.zeros(n_tokens, dtype=bool)
        for idx in order:
            if len(boxes) >= self.max_boxes:
                break
            if taken[idx]:
                continue
            cx, cy = centers[idx]
            x1, x2 = max(0.0, cx - half), min(1.0, cx + half)
            y1, y2 = max(0.0, cy - half), min(1.0, cy + half)
            if x2 - x1 <= 1e-6 or y2 - y1 <= 1e-6:
                continue
            near = (np.abs(centers[:n_tokens, 0] - cx) <= 2 * half) & (
                np.abs(centers[:n_tokens, 1] - cy) <= 2 * half
            )
            taken |= near
            boxes.append((float(x1), float(y1), float(x2), float(y2)))
        return boxes


class PromptedGrounding:
    """Question-guided grounding through a local multimodal model.

    Requires local weights; the prompt template is overridable. Raises
    EncoderLoadError naming the model when it cannot be loaded.
    """

    def __init__(self, model_id, prompt=DEFAULT_PROMPT, max_boxes=MAX_BOXES):
        self.name = model_id
        self.prompt = prompt
        self.max_boxes = min(max_boxes, MAX_BOXES)
        try:
            from transformers import pipeline

            self.pipe = pipeline("image-text-to-text", model=model_id)
        except Exception as exc:
            raise EncoderLoadError(model_id, exc) from exc

    def ground(self, patch_embeddings, centers, n_tokens, question):
        raise NotImplementedError(
            "prompted grounding requires a box-emitting local model; "
            "override this backend with your deployment's parser"
        )


def make_grounding(spec):
    if spec == "saliency":
        return SaliencyGrounding()
    if spec.startswith("prompted:"):
        return PromptedGrounding(spec.split(":", 1)[1])
    raise ValueError(f"unknown grounding backend {spec!r} (use 'saliency' or 'prompted:<model>')")
