#!/usr/bin/env python3
"""Heatmaps of exported attention maps, one panel per layer.

    graphit export-attention --checkpoint run/checkpoint.bin --graphs 0,5 --out att
    python scripts/plot_attention.py att/graph_0.txt -o graph_0.png
"""

import argparse
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

HEADER = "# graphit-attention v1"


def read_attention(path):
    lines = [l.strip() for l in Path(path).read_text().splitlines()]
    if lines[0] != HEADER:
        raise ValueError(f"{path}: not an attention export")
    meta = dict(kv.split("=") for kv in lines[1].split())
    n, layers = int(meta["nodes"]), int(meta["layers"])
    maps, pos = [], 2
    for layer in range(layers):
        if lines[pos] != f"layer {layer}":
            raise ValueError(f"{path}: expected 'layer {layer}' on line {pos + 1}")
        rows = [[float(x) for x in lines[pos + 1 + i].split(",")] for i in range(n)]
        maps.append(np.array(rows))
        pos += n + 1
    return int(meta["graph_id"]), maps


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("export", type=Path)
    ap.add_argument("-o", "--output", type=Path, help="image file (default: export name with .png)")
    args = ap.parse_args()

    graph_id, maps = read_attention(args.export)
    fig, axes = plt.subplots(1, len(maps), figsize=(3.2 * len(maps), 3.2), squeeze=False)
    vmax = max(m.max() for m in maps)
    for i, (ax, m) in enumerate(zip(axes[0], maps)):
        im = ax.imshow(m, cmap="viridis", vmin=0.0, vmax=vmax)
        ax.set_title(f"layer {i + 1}")
        ax.set_xlabel("key node")
    axes[0][0].set_ylabel("query node")
    fig.colorbar(im, ax=axes[0].tolist(), shrink=0.8)
    fig.suptitle(f"graph {graph_id}")
    out = args.output or args.export.with_suffix(".png")
    fig.savefig(out, dpi=150, bbox_inches="tight")
    print(out)


if __name__ == "__main__":
    main()
