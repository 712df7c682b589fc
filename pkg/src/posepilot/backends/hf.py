"""Adapters for CLIP-family, MetaCLIP-family and SigLIP-family encoders.

Weights load from a local path or hub id via `weights_path`; torch and
transformers import lazily so the rest of the toolkit works without
them. Attribution differentiates the image-text cosine similarity with
respect to the activations of a chosen vision-encoder block and forms
the usual rectified gradient-weighted activation sum.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import BackendError
from ..saliency import HeatMap
from .base import Backend, BackendDescriptor, Embedding

_DEFAULT_WEIGHTS = {
    "clip-family": "openai/clip-vit-base-patch32",
    "metaclip-family": "facebook/metaclip-b32-400m",
    "siglip-family": "google/siglip-base-patch16-224",
}


def _import_torch(name: str):
    try:
        import torch  # noqa: F401
        import transformers  # noqa: F401
    except ImportError as exc:
        raise BackendError(
            name, f"install the 'real' extra to use this backend ({exc})"
        ) from None
    import torch
    import transformers

    return torch, transformers


def gradcam_from_similarity(
    torch,
    acts,
    grads,
    grid_hw: tuple[int, int],
) -> np.ndarray:
    """Rectified gradient-weighted activation map from one backward pass.

    acts/grads: (1, tokens, channels); a leading class token is dropped
    when the token count is one above the spatial grid size.
    """
    n_tokens = acts.shape[1]
    gh, gw = grid_hw
    if n_tokens == gh * gw + 1:
        acts = acts[:, 1:, :]
        grads = grads[:, 1:, :]
    elif n_tokens != gh * gw:
        raise BackendError("attribution", f"cannot map {n_tokens} tokens to {gh}x{gw}")
    weights = grads.mean(dim=1, keepdim=True)
    cam = torch.relu((acts * weights).sum(dim=-1))
    return cam.reshape(gh, gw).detach().cpu().numpy().astype(np.float64)


class HFDualEncoderBackend(Backend):
    """CLIP-style dual encoder behind the uniform backend interface."""

    # Default attribution block is the penultimate encoder layer: with
    # CLS-token pooling the final block's patch activations get no
    # gradient, so the last *spatially useful* block is one earlier.
    def __init__(
        self,
        name: str,
        weights_path: str | None = None,
        device: str = "cpu",
        attribution_layer: int = -2,
    ):
        super().__init__()
        torch, transformers = _import_torch(name)
        self._torch = torch
        path = weights_path or _DEFAULT_WEIGHTS.get(name)
        if path is None:
            raise BackendError(name, "weights_path required for this backend family")
        try:
            self._model = transformers.AutoModel.from_pretrained(path)
            self._processor = transformers.AutoProcessor.from_pretrained(path)
        except Exception as exc:
            raise BackendError(name, f"failed to load weights from {path!r}: {exc}") from exc
        self._model.eval().to(device)
        self._device = device
        self._attribution_layer = attribution_layer
        vision_cfg = self._model.config.vision_config
        size = int(vision_cfg.image_size)
        dim = int(getattr(self._model.config, "projection_dim", vision_cfg.hidden_size))
        self._patch = int(vision_cfg.patch_size)
        self.descriptor = BackendDescriptor(
            name=name,
            embedding_dim=dim,
            native_input_size=(size, size),
            supports_attribution=True,
        )

    def _pixel_values(self, image: np.ndarray):
        from PIL import Image

        pil = Image.fromarray(np.asarray(image, dtype=np.uint8))
        inputs = self._processor(images=pil, return_tensors="pt")
        return inputs["pixel_values"].to(self._device)

    def _embed_image(self, image: np.ndarray) -> Embedding:
        torch = self._torch
        with torch.no_grad():
            feats = self._model.get_image_features(pixel_values=self._pixel_values(image))
        return Embedding.from_raw(feats[0].cpu().numpy())

    def _embed_texts(self, prompts: list[str]) -> list[Embedding]:
        torch = self._torch
        tok = self._processor(
            text=prompts, return_tensors="pt", padding=True, truncation=True
        )
        tok = {k: v.to(self._device) for k, v in tok.items() if hasattr(v, "to")}
        with torch.no_grad():
            feats = self._model.get_text_features(**tok)
        return [Embedding.from_raw(row) for row in feats.cpu().numpy()]

    def _attribute(self, image: np.ndarray, prompt: str) -> HeatMap:
        text_emb = self._embed_texts([prompt])[0]
        cam = attribute_vision_tower(
            self._torch,
            self._model,
            self._pixel_values(image),
            text_emb.vector,
            self._attribution_layer,
            self._patch,
        )
        return _upsample_max_one(cam, image.shape[1], image.shape[0])


def attribute_vision_tower(
    torch, model, pixel_values, text_vector: np.ndarray, layer: int, patch: int
) -> np.ndarray:
    """Grad-CAM grid for cosine(image embedding, text vector)."""
    captured: dict = {}

    vision = model.vision_model if hasattr(model, "vision_model") else model
    block = vision.encoder.layers[layer]

    def hook(_module, _inputs, output):
        acts = output[0] if isinstance(output, tuple) else output
        acts.retain_grad()
        captured["acts"] = acts

    handle = block.register_forward_hook(hook)
    try:
        model.zero_grad(set_to_none=True)
        with torch.enable_grad():
            feats = model.get_image_features(pixel_values=pixel_values)
            img = feats[0]
            img = img / img.norm()
            text = torch.tensor(
                np.asarray(text_vector, dtype=np.float32), device=img.device
            )
            sim = (img * text).sum()
            sim.backward()
    finally:
        handle.remove()
    acts = captured["acts"]
    grads = acts.grad
    if grads is None:
        raise BackendError("attribution", "no gradient reached the target block")
    side = pixel_values.shape[-1] // patch
    return gradcam_from_similarity(torch, acts.detach(), grads, (side, side))


def _upsample_max_one(cam: np.ndarray, width: int, height: int) -> HeatMap:
    from PIL import Image

    pil = Image.fromarray(cam.astype(np.float32), mode="F").resize(
        (width, height), Image.BILINEAR
    )
    up = np.maximum(np.asarray(pil, dtype=np.float64), 0.0)
    peak = up.max()
    if peak > 0:
        up = up / peak
        return HeatMap(width, height, up, "max_one")
    return HeatMap(width, height, up, "raw")


def _sqrt_tokens(n: int) -> int:
    side = int(math.isqrt(n))
    if side * side != n:
        raise BackendError("attribution", f"{n} spatial tokens is not a square grid")
    return side
