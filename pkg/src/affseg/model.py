"""The full segmentation network: encoder, decoder, and the image/logit
layout boundary (images enter [B, C, H, W]; logits leave [B, K, H, W])."""

from __future__ import annotations

import numpy as np

from .config import ModelConfig, validate_config
from .decoder import Decoder
from .encoder import Encoder, EncoderOutput
from .errors import ConfigError, ShapeError
from .nn import Module
from .tensor import Tensor, astensor


class SegModel(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=np.float64):
        result = validate_config(cfg)
        if not result.ok:
            raise ConfigError("; ".join(result.violations))
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.dtype = dtype
        self.encoder = Encoder(cfg, rng=rng, dtype=dtype)
        self.decoder = Decoder(cfg, rng=rng, dtype=dtype)

    def encode(self, images) -> EncoderOutput:
        x = astensor(images)
        if x.ndim != 4:
            raise ShapeError(f"expected [B, C, H, W] images, got shape {x.shape}")
        b, c, h, w = x.shape
        if (h, w) != tuple(self.cfg.img_size) or c != self.cfg.in_channels:
            raise ShapeError(
                f"images {c}x{h}x{w} do not match config"
                f" {self.cfg.in_channels}x{self.cfg.img_size[0]}x{self.cfg.img_size[1]}"
            )
        if x.dtype != self.dtype:
            x = Tensor(x.data.astype(self.dtype), requires_grad=x.requires_grad)
        return self.encoder(x)

    def __call__(self, images) -> Tensor:
        """images [B, in_channels, H, W] -> logits [B, num_classes, H, W]."""
        return self.decoder(self.encode(images))
