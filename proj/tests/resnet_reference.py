#!/usr/bin/env python3
"""Writes a random-weight ResNet archive plus torchvision reference features.

OUT/resnet.{json,bin}  archive from tools/export_resnet101.py
OUT/input.png          8-bit RGB test image (not 224x224, so resizing is covered)
OUT/reference.json     pooled channel means of layer1..layer3
"""

import importlib.util
import json
import pathlib
import sys

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

HERE = pathlib.Path(__file__).resolve().parent
spec = importlib.util.spec_from_file_location("export", HERE.parent / "tools" / "export_resnet101.py")
export = importlib.util.module_from_spec(spec)
spec.loader.exec_module(export)


def main(out_dir, arch="resnet50"):
    out = pathlib.Path(out_dir)
    model = export.build_model(arch, random_init=True, seed=3)
    export.export(model, out, arch)

    rng = np.random.default_rng(11)
    yy, xx = np.mgrid[0:96, 0:80]
    base = np.stack([0.5 + 0.4 * np.sin(xx / 7.0 + c) * np.cos(yy / 9.0 - c) for c in range(3)], -1)
    img = np.clip(base + rng.normal(0, 0.05, base.shape), 0, 1)
    pixels = np.round(img * 255).astype(np.uint8)
    Image.fromarray(pixels, "RGB").save(out / "input.png")

    x = torch.from_numpy(pixels.astype(np.float32) / 255.0).permute(2, 0, 1)[None]
    x = F.interpolate(x, size=(224, 224), mode="bilinear", align_corners=False, antialias=False)
    mean = torch.tensor([0.485, 0.456, 0.406]).view(1, 3, 1, 1)
    std = torch.tensor([0.229, 0.224, 0.225]).view(1, 3, 1, 1)
    x = (x - mean) / std
    pooled = {}
    with torch.no_grad():
        x = model.maxpool(model.relu(model.bn1(model.conv1(x))))
        for i, layer in enumerate((model.layer1, model.layer2, model.layer3), start=1):
            x = layer(x)
            pooled[str(i)] = x.mean(dim=(2, 3))[0].tolist()
    (out / "reference.json").write_text(json.dumps({"arch": arch, "pooled": pooled}))


if __name__ == "__main__":
    main(sys.argv[1])
