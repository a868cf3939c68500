#!/usr/bin/env python3
"""Convert torchvision VGG-19 weights into the encoder archive the C++ code loads.

Usage:
    convert_vgg19.py OUT.smx                      # download ImageNet weights via torchvision
    convert_vgg19.py OUT.smx --state-dict vgg.pth # use a local torchvision state_dict

The default lookup location is $STYLE_MIXER_CACHE/vgg19_encoder.smx
(falling back to ~/.cache/style_mixer/vgg19_encoder.smx).
"""

import argparse
import os
import struct
import sys

import numpy as np

MAGIC = b"SMXARCH1"
DTYPES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1, np.dtype(np.int64): 2}

# Index of each convolution inside torchvision's vgg19().features.
CONVS = [
    ("conv1_1", 0), ("conv1_2", 2),
    ("conv2_1", 5), ("conv2_2", 7),
    ("conv3_1", 10), ("conv3_2", 12), ("conv3_3", 14), ("conv3_4", 16),
    ("conv4_1", 19), ("conv4_2", 21), ("conv4_3", 23), ("conv4_4", 25),
    ("conv5_1", 28),
]


def write_archive(path, arrays, config=None):
    config_text = "".join(f"{k}={v}\n" for k, v in sorted((config or {}).items())).encode()
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(config_text)))
        f.write(config_text)
        f.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays:
            arr = np.ascontiguousarray(arr)
            encoded = name.encode()
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<BB", DTYPES[arr.dtype], arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}q", *arr.shape))
            f.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())
    os.replace(tmp, path)


def load_state_dict(path):
    import torch

    if path:
        state = torch.load(path, map_location="cpu", weights_only=True)
    else:
        import torchvision

        state = torchvision.models.vgg19(weights=torchvision.models.VGG19_Weights.IMAGENET1K_V1).state_dict()
    return {k: v.detach().float().numpy() for k, v in state.items()}


def convert(state):
    arrays = []
    for name, index in CONVS:
        for part in ("weight", "bias"):
            key = f"features.{index}.{part}"
            if key not in state:
                raise KeyError(f"state_dict has no '{key}' (needed for {name}.{part})")
            arrays.append((f"{name}.{part}", state[key].astype(np.float32)))
    return arrays


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("output", help="destination .smx file")
    parser.add_argument("--state-dict", help="local torchvision VGG-19 state_dict (.pth)")
    args = parser.parse_args(argv)

    arrays = convert(load_state_dict(args.state_dict))
    os.makedirs(os.path.dirname(os.path.abspath(args.output)), exist_ok=True)
    write_archive(args.output, arrays, {"kind": "vgg19_encoder"})
    print(f"wrote {len(arrays)} arrays to {args.output}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
