#!/usr/bin/env python3
"""Export vision-transformer weights (timm naming) to the dualad weight format.

Writes <stem>.json (architecture) and <stem>.bin (named float64 arrays).

    # straight from timm (needs `pip install timm` and network access once)
    python tools/export_vit.py --timm vit_base_patch16_224.augreg2_in21k_ft_in1k weights/vit_base_patch16_224

    # from a saved state dict (.pth/.pt via torch, or .npz)
    python tools/export_vit.py --state-dict vit_b16.pth weights/vit_base_patch16_224
"""

import argparse
import json
import pathlib
import struct

import numpy as np

MAGIC = b"DUALADA1"
VERSION = 1


def load_state_dict(args):
    if args.timm:
        import timm

        model = timm.create_model(args.timm, pretrained=True)
        return {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}, args.timm
    path = pathlib.Path(args.state_dict)
    if path.suffix == ".npz":
        with np.load(path) as z:
            return {k: z[k] for k in z.files}, path.stem
    import torch

    sd = torch.load(path, map_location="cpu", weights_only=True)
    if "state_dict" in sd:
        sd = sd["state_dict"]
    return {k: v.detach().cpu().numpy() for k, v in sd.items()}, path.stem


def infer_spec(sd, args, name):
    w = sd["patch_embed.proj.weight"]  # D x 3 x p x p
    dim, _, patch, _ = w.shape
    blocks = 1 + max(int(k.split(".")[1]) for k in sd if k.startswith("blocks."))
    tokens = sd["pos_embed"].shape[1]
    side = int(round((tokens - 1) ** 0.5))
    return {
        "identifier": args.identifier or name,
        "num_blocks": blocks,
        "embed_dim": int(dim),
        "num_heads": args.heads or max(1, int(dim) // 64),
        "mlp_dim": int(sd["blocks.0.mlp.fc1.weight"].shape[0]),
        "patch_size": int(patch),
        "input_resolution": int(side * patch),
        "mean": args.mean,
        "std": args.std,
        "layer_norm_eps": 1e-6,
        "dropout": args.dropout,
        "tap_layer_norm": False,
    }


def arrays_for(sd, spec):
    out = {}
    d = spec["embed_dim"]
    out["patch_embed.proj.weight"] = sd["patch_embed.proj.weight"].reshape(d, -1)
    out["patch_embed.proj.bias"] = sd["patch_embed.proj.bias"]
    out["cls_token"] = sd["cls_token"].reshape(1, d)
    out["pos_embed"] = sd["pos_embed"].reshape(-1, d)
    names = ["norm1.weight", "norm1.bias", "attn.qkv.weight", "attn.qkv.bias", "attn.proj.weight", "attn.proj.bias",
             "norm2.weight", "norm2.bias", "mlp.fc1.weight", "mlp.fc1.bias", "mlp.fc2.weight", "mlp.fc2.bias"]
    for b in range(spec["num_blocks"]):
        for n in names:
            key = f"blocks.{b}.{n}"
            out[key] = sd[key]
    out["norm.weight"] = sd["norm.weight"]
    out["norm.bias"] = sd["norm.bias"]
    return out


def write_archive(path, arrays):
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(arrays)))
        for name in sorted(arrays):
            a = np.ascontiguousarray(arrays[name], dtype="<f8")
            raw = name.encode()
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(struct.pack("<I", a.ndim))
            f.write(struct.pack(f"<{a.ndim}Q", *a.shape))
            f.write(a.tobytes(order="C"))


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--timm", help="timm model name, downloaded with pretrained weights")
    src.add_argument("--state-dict", help="saved state dict (.pth, .pt or .npz) with timm parameter names")
    p.add_argument("stem", help="output path without extension")
    p.add_argument("--identifier", help="backbone identifier recorded in caches and reports")
    p.add_argument("--heads", type=int, help="attention heads (default embed_dim / 64)")
    p.add_argument("--mean", type=float, nargs=3, default=[0.5, 0.5, 0.5])
    p.add_argument("--std", type=float, nargs=3, default=[0.5, 0.5, 0.5])
    p.add_argument("--dropout", type=float, default=0.1, help="student dropout rate")
    args = p.parse_args()

    sd, name = load_state_dict(args)
    spec = infer_spec(sd, args, name)
    stem = pathlib.Path(args.stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    bin_path = stem.with_name(stem.name + ".bin")
    write_archive(bin_path, arrays_for(sd, spec))
    manifest = {"version": 1, "kind": "vit", "spec": spec, "arrays": bin_path.name}
    stem.with_name(stem.name + ".json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"wrote {bin_path} ({spec['num_blocks']} blocks, dim {spec['embed_dim']})")


if __name__ == "__main__":
    main()
