#!/usr/bin/env python3
"""Regenerates timm_tiny.{json,bin} and timm_tiny_expected.bin.

A small randomly initialised timm VisionTransformer is exported with
tools/export_vit.py; its CLS embedding (after the final norm) and the output
of block 1 on fixed inputs are stored for the C++ forward-pass test.
Needs torch and timm.
"""

import pathlib
import sys

import numpy as np
import timm
import torch

here = pathlib.Path(__file__).resolve().parent
sys.path.insert(0, str(here.parent.parent / "tools"))
import export_vit  # noqa: E402

torch.manual_seed(0)
model = timm.models.vision_transformer.VisionTransformer(
    img_size=16, patch_size=4, embed_dim=16, depth=3, num_heads=2, mlp_ratio=2.0, num_classes=0, global_pool="token")
for p in model.parameters():
    torch.nn.init.normal_(p, std=0.3)
model = model.double().eval()

sd = {k: v.detach().numpy() for k, v in model.state_dict().items()}
spec = {"identifier": "timm-tiny/seed=0", "num_blocks": 3, "embed_dim": 16, "num_heads": 2, "mlp_dim": 32,
        "patch_size": 4, "input_resolution": 16, "mean": [0.5] * 3, "std": [0.5] * 3, "layer_norm_eps": 1e-6,
        "dropout": 0.0, "tap_layer_norm": False}
export_vit.write_archive(here / "timm_tiny.bin", export_vit.arrays_for(sd, spec))
(here / "timm_tiny.json").write_text(
    __import__("json").dumps({"version": 1, "kind": "vit", "spec": spec, "arrays": "timm_tiny.bin"}, indent=2) + "\n")

# Normalised inputs, n x H x W x C.
n = 4
yy, xx = np.meshgrid(np.arange(16), np.arange(16), indexing="ij")
pixels = np.stack([np.stack([np.sin(0.3 * (i + 1) * xx + c) * np.cos(0.2 * yy - i) for c in range(3)], axis=-1)
                   for i in range(n)])
x = torch.tensor(pixels).permute(0, 3, 1, 2)
with torch.no_grad():
    h = model._pos_embed(model.patch_embed(x))
    outs = []
    for blk in model.blocks:
        h = blk(h)
        outs.append(h.clone())
    cls = model.norm(h)[:, 0]
export_vit.write_archive(here / "timm_tiny_expected.bin", {
    "pixels": pixels.reshape(n, -1),
    "cls": cls.numpy(),
    "block1": outs[1].numpy().reshape(n, -1),
})
print("wrote timm_tiny.{json,bin} and timm_tiny_expected.bin")
