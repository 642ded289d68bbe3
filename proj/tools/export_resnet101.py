#!/usr/bin/env python3
"""Export torchvision ResNet weights (stem + layer1..layer3) to a coronagan tensor archive.

Writes OUT/resnet.json and OUT/resnet.bin. Point CORONAGAN_EXTRACTOR_PATH (or
`coronagan evaluate --extractor`) at OUT.
"""

import argparse
import json
import pathlib
import sys

import numpy as np

ARCHS = ("resnet50", "resnet101", "resnet152")


def build_model(arch, random_init=False, seed=0):
    import torch
    import torchvision

    if arch not in ARCHS:
        raise SystemExit(f"unsupported arch {arch!r}; choose one of {', '.join(ARCHS)}")
    ctor = getattr(torchvision.models, arch)
    if not random_init:
        weights = torchvision.models.get_model_weights(arch).IMAGENET1K_V1
        return ctor(weights=weights).eval()
    torch.manual_seed(seed)
    model = ctor(weights=None)
    # Non-trivial batch-norm statistics so folding is actually exercised.
    with torch.no_grad():
        for m in model.modules():
            if isinstance(m, torch.nn.BatchNorm2d):
                m.weight.uniform_(0.5, 1.5)
                m.bias.uniform_(-0.2, 0.2)
                m.running_mean.uniform_(-0.2, 0.2)
                m.running_var.uniform_(0.5, 2.0)
    return model.eval()


def as_4d(t):
    a = t.detach().cpu().numpy().astype("<f4")
    if a.ndim == 1:
        a = a.reshape(a.shape[0], 1, 1, 1)
    if a.ndim != 4:
        raise ValueError(f"unexpected tensor rank {a.ndim}")
    return np.ascontiguousarray(a)


def export(model, out_dir, arch):
    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    keep = ("conv1.", "bn1.", "layer1.", "layer2.", "layer3.")
    entries = {}
    offset = 0
    with open(out / "resnet.bin", "wb") as blob:
        for name, t in model.state_dict().items():
            if not name.startswith(keep) or name.endswith("num_batches_tracked"):
                continue
            a = as_4d(t)
            blob.write(a.tobytes())
            entries[name] = {"shape": list(a.shape), "dtype": "float32", "offset": offset}
            offset += a.nbytes
    manifest = {
        "format": "coronagan-tensors",
        "version": 1,
        "blob": "resnet.bin",
        "meta": {"arch": arch},
        "tensors": entries,
    }
    (out / "resnet.json").write_text(json.dumps(manifest, indent=1) + "\n")
    return len(entries)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--arch", default="resnet101", choices=ARCHS)
    p.add_argument("--random", action="store_true",
                   help="random weights instead of ImageNet (no download; for testing)")
    p.add_argument("--seed", type=int, default=0, help="seed for --random")
    args = p.parse_args(argv)
    model = build_model(args.arch, args.random, args.seed)
    n = export(model, args.out, args.arch)
    print(f"wrote {n} tensors to {args.out}")


if __name__ == "__main__":
    sys.exit(main())
