"""Vision and text encoder backends.

Two families: `stub` encoders are deterministic, model-free featurizers
(patch statistics under a fixed random projection; hashed token vectors)
that run anywhere and exercise the full interchange contract, and
model-backed encoders (CLIP / RoBERTa via transformers) for real features
when weights are available locally. Every encoder emits exactly N_TOKENS
patch rows, zero-padded with the real count flagged for the sidecar.
"""

import hashlib

import numpy as np
from PIL import Image

N_TOKENS = 100
PATCH_GRID = 10  # 10x10 cells -> 100 patch tokens


class EncoderLoadError(RuntimeError):
    def __init__(self, model_id, cause):
        super().__init__(f"failed to load model {model_id!r}: {cause}")
        self.model_id = model_id


class StubVisionEncoder:
    """Patch-grid color/position statistics under a fixed projection."""

    name = "stub"

    def __init__(self, dim=64, seed=1234):
        self.dim = dim
        rng = np.random.default_rng(seed)
        self.proj = (rng.normal(size=(6, dim)) / np.sqrt(6)).astype(np.float32)

    def encode(self, image):
        """image: HxWx3 uint8 -> ([N_TOKENS x dim] float32, n_real_tokens)."""
        img = np.asarray(
            Image.fromarray(image).resize((PATCH_GRID * 8, PATCH_GRID * 8)), dtype=np.float32
        )
        img = img / 255.0
        cells = img.reshape(PATCH_GRID, 8, PATCH_GRID, 8, 3).mean(axis=(1, 3))
        ys, xs = np.mgrid[0:PATCH_GRID, 0:PATCH_GRID].astype(np.float32) / (PATCH_GRID - 1)
        feats = np.concatenate(
            [cells.reshape(-1, 3), xs.reshape(-1, 1), ys.reshape(-1, 1),
             np.ones((PATCH_GRID * PATCH_GRID, 1), dtype=np.float32)],
            axis=1,
        ).astype(np.float32)
        return feats @ self.proj, N_TOKENS

    def patch_centers(self):
        ys, xs = np.mgrid[0:PATCH_GRID, 0:PATCH_GRID].astype(np.float32)
        return np.stack([(xs.ravel() + 0.5) / PATCH_GRID, (ys.ravel() + 0.5) / PATCH_GRID], axis=1)


class ClipVisionEncoder:
    """CLIP ViT patch embeddings via transformers; needs local weights."""

    def __init__(self, model_id="openai/clip-vit-base-patch32"):
        self.name = model_id
        try:
            import torch  # noqa: F401
            from transformers import CLIPImageProcessor, CLIPVisionModel

            self.processor = CLIPImageProcessor.from_pretrained(model_id)
            self.model = CLIPVisionModel.from_pretrained(model_id).eval()
        except Exception as exc:
            raise EncoderLoadError(model_id, exc) from exc

    def encode(self, image):
        import torch

        inputs = self.processor(images=Image.fromarray(image), return_tensors="pt")
        with torch.no_grad():
            out = self.model(**inputs).last_hidden_state[0]  # [1+patches, C]
        tokens = out[1:].numpy().astype(np.float32)  # drop CLS
        n = min(len(tokens), N_TOKENS)
        padded = np.zeros((N_TOKENS, tokens.shape[1]), dtype=np.float32)
        padded[:n] = tokens[:n]
        return padded, n

    def patch_centers(self):
        side = 7  # ViT-B/32 at 224px
        ys, xs = np.mgrid[0:side, 0:side].astype(np.float32)
        centers = np.stack([(xs.ravel() + 0.5) / side, (ys.ravel() + 0.5) / side], axis=1)
        padded = np.zeros((N_TOKENS, 2), dtype=np.float32)
        padded[: len(centers)] = centers
        return padded


def _hash_vector(token, dim, salt):
    digest = hashlib.blake2b(f"{salt}:{token}".encode(), digest_size=8).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    v = rng.normal(size=dim).astype(np.float32)
    return v / np.linalg.norm(v)


class StubTextEncoder:
    """Stable hashed per-token vectors; pooled output is the token mean."""

    name = "stub"

    def __init__(self, dim=64, salt="lgqave-text"):
        self.dim = dim
        self.salt = salt

    def tokenize(self, text):
        return [t for t in text.lower().replace("?", " ").replace(",", " ").split() if t]

    def encode_tokens(self, text):
        tokens = self.tokenize(text) or ["<empty>"]
        return np.stack([_hash_vector(t, self.dim, self.salt) for t in tokens])

    def encode_pooled(self, text):
        return self.encode_tokens(text).mean(axis=0)


class RobertaTextEncoder:
    """RoBERTa token embeddings via transformers; needs local weights."""

    def __init__(self, model_id="roberta-base"):
        self.name = model_id
        try:
            import torch  # noqa: F401
            from transformers import AutoModel, AutoTokenizer

            self.tokenizer = AutoTokenizer.from_pretrained(model_id)
            self.model = AutoModel.from_pretrained(model_id).eval()
        except Exception as exc:
            raise EncoderLoadError(model_id, exc) from exc

    def encode_tokens(self, text):
        import torch

        enc = self.tokenizer(text, return_tensors="pt")
        with torch.no_grad():
            out = self.model(**enc).last_hidden_state[0]
        return out.numpy().astype(np.float32)

    def encode_pooled(self, text):
        return self.encode_tokens(text).mean(axis=0)


def make_vision_encoder(spec):
    if spec == "stub":
        return StubVisionEncoder()
    if spec.startswith("clip:"):
        return ClipVisionEncoder(spec.split(":", 1)[1])
    raise ValueError(f"unknown vision encoder {spec!r} (use 'stub' or 'clip:<model id>')")


def make_text_encoder(spec):
    if spec == "stub":
        return StubTextEncoder()
    if spec.startswith("roberta:"):
        return RobertaTextEncoder(spec.split(":", 1)[1])
    raise ValueError(f"unknown text encoder {spec!r} (use 'stub' or 'roberta:<model id>')")
