#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
"""Train the small desk network on synthetic gratings and write data/desk.vglm
and data/desk.vglb (100 held-out images).

Data generator only; it writes the model and batch formats directly.
"""
import argparse
import math
import pathlib
import struct

import numpy as np
import torch
from torch import nn

KIND = {"conv2d": 1, "relu": 2, "maxpool": 3, "avgpool": 4, "gap": 5,
        "linear": 6, "batchnorm": 7, "residual": 8, "flatten": 9}

SIZE = 16
CLASSES = 10


def make_images(n, rng):
    """Class c: grating at orientation (c % 5) * 36 deg, tinted warm (c < 5) or cool."""
    labels = rng.integers(0, CLASSES, size=n)
    yy, xx = np.mgrid[0:SIZE, 0:SIZE].astype(np.float32)
    out = np.empty((n, 3, SIZE, SIZE), np.float32)
    for i, c in enumerate(labels):
        theta = (c % 5) * math.pi / 5 + rng.normal(0, 0.2)
        freq = rng.uniform(0.55, 0.95)
        phase = rng.uniform(0, 2 * math.pi)
        g = np.sin(freq * (xx * math.cos(theta) + yy * math.sin(theta)) + phase)
        tint = np.array([1.0, 0.55, 0.2] if c < 5 else [0.2, 0.6, 1.0], np.float32)
        tint = tint + rng.normal(0, 0.25, 3).astype(np.float32)
        img = g[None] * tint[:, None, None] + rng.normal(0, 1.5, (3, SIZE, SIZE))
        out[i] = img.astype(np.float32)
    return out, labels.astype(np.int64)


class DeskNet(nn.Module):
    def __init__(self):
        super().__init__()
        self.conv1 = nn.Conv2d(3, 8, 3, padding=1)
        self.bn1 = nn.BatchNorm2d(8)
        self.conv2 = nn.Conv2d(8, 16, 3, padding=1)
        self.bn2 = nn.BatchNorm2d(16)
        self.conv3 = nn.Conv2d(16, 16, 3, padding=1)
        self.bn3 = nn.BatchNorm2d(16)
        self.fc = nn.Linear(16, CLASSES)

    def forward(self, x):
        x = nn.functional.max_pool2d(torch.relu(self.bn1(self.conv1(x))), 2)
        skip = nn.functional.max_pool2d(torch.relu(self.bn2(self.conv2(x))), 2)
        x = torch.relu(self.bn3(self.conv3(skip)) + skip)
        return self.fc(x.mean(dim=(2, 3)))


def blob(t):
    a = t.detach().cpu().numpy().astype("<f4")
    return struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape) + a.tobytes()


def conv_layer(conv):
    return (struct.pack("<7I", KIND["conv2d"], conv.in_channels, conv.out_channels,
                        conv.kernel_size[0], conv.stride[0], conv.padding[0], conv.groups)
            + blob(conv.weight) + blob(conv.bias))


def bn_layer(bn):
    return (struct.pack("<2If", KIND["batchnorm"], bn.num_features, bn.eps)
            + blob(bn.weight) + blob(bn.bias) + blob(bn.running_mean) + blob(bn.running_var))


def pool(kernel):
    return struct.pack("<4I", KIND["maxpool"], kernel, kernel, 0)


def export_model(net, path):
    tag = lambda k: struct.pack("<I", KIND[k])
    layers = [conv_layer(net.conv1), bn_layer(net.bn1), tag("relu"), pool(2),
              conv_layer(net.conv2), bn_layer(net.bn2), tag("relu"), pool(2),
              conv_layer(net.conv3), bn_layer(net.bn3), tag("residual"), tag("relu"),
              tag("gap"),
              struct.pack("<3I", KIND["linear"], 16, CLASSES) + blob(net.fc.weight) + blob(net.fc.bias)]
    data = b"VGLM" + struct.pack("<5I", 1, len(layers), 3, SIZE, SIZE) + b"".join(layers)
    data += struct.pack("<IiI", 1, 7, 10)  # residual at layer 10 adds the output of layer 7
    data += struct.pack("<I", CLASSES)
    path.write_bytes(data)


def export_batch(images, labels, path):
    data = b"VGLB" + struct.pack("<4I", len(images), 3, SIZE, SIZE)
    data += images.astype("<f4").tobytes() + labels.astype("<u2").tobytes()
    path.write_bytes(data)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(pathlib.Path(__file__).resolve().parent.parent / "data"))
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(args.seed)
    torch.manual_seed(args.seed)
    torch.set_num_threads(1)
    x_train, y_train = make_images(4000, rng)
    x_test, y_test = make_images(100, rng)

    net = DeskNet()
    opt = torch.optim.Adam(net.parameters(), lr=3e-3)
    xt, yt = torch.from_numpy(x_train), torch.from_numpy(y_train)
    for epoch in range(12):
        net.train()
        perm = torch.randperm(len(xt))
        for i in range(0, len(xt), 64):
            idx = perm[i:i + 64]
            opt.zero_grad()
            loss = nn.functional.cross_entropy(net(xt[idx]), yt[idx])
            loss.backward()
            opt.step()
    net.eval()
    with torch.no_grad():
        acc = (net(torch.from_numpy(x_test)).argmax(1).numpy() == y_test).mean()
    print(f"held-out accuracy {acc:.2f}")
    if acc <= 0.6:
        raise SystemExit("accuracy too low")
    export_model(net, out / "desk.vglm")
    export_batch(x_test, y_test, out / "desk.vglb")


if __name__ == "__main__":
    main()
