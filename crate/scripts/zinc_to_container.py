#!/usr/bin/env python3
"""Convert the 12k ZINC subset to graphit's text container.

Input is the `molecules` directory distributed with the benchmarking-gnns
suite (also what PyTorch Geometric downloads as ZINC raw data):

    train.pickle val.pickle test.pickle   lists of molecule dicts
    train.index val.index test.index      subset indices (comma separated)

Each molecule has `atom_type` (n), `bond_type` (n x n, 0 = no bond) and
`logP_SA_cycle_normalized`. Tensors are accepted as-is, so torch must be
importable when the pickles hold torch tensors.

Output directory gets ZINC_graphs.txt (train, then val, then test) and
ZINC_train.index / ZINC_val.index / ZINC_test.index.

    python scripts/zinc_to_container.py path/to/molecules data/ZINC
"""

import argparse
import pickle
from pathlib import Path


def as_list(x):
    return x.tolist() if hasattr(x, "tolist") else list(x)


def read_index(path):
    if not path.exists():
        return None
    text = path.read_text().replace(",", " ").split()
    return [int(t) for t in text]


def molecule_line(mol):
    atoms = [int(a) for a in as_list(mol["atom_type"])]
    bonds = as_list(mol["bond_type"])
    edges = []
    for u, row in enumerate(bonds):
        for v, b in enumerate(as_list(row)):
            if v > u and int(b) != 0:
                edges.append(f"{u}-{v}:{int(b)}")
    target = mol["logP_SA_cycle_normalized"]
    target = float(as_list(target)[0]) if hasattr(target, "tolist") and as_list(target) else float(target)
    return f"{target!r} | {' '.join(map(str, atoms))} | {' '.join(edges)}"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("molecules", type=Path)
    ap.add_argument("out", type=Path)
    ap.add_argument("--full", action="store_true", help="ignore the .index files and keep every molecule")
    args = ap.parse_args()

    lines, splits = [], {}
    for part in ("train", "val", "test"):
        with open(args.molecules / f"{part}.pickle", "rb") as f:
            mols = list(pickle.load(f))
        keep = None if args.full else read_index(args.molecules / f"{part}.index")
        if keep is not None:
            mols = [mols[i] for i in keep]
        start = len(lines)
        lines.extend(molecule_line(m) for m in mols)
        splits[part] = range(start, len(lines))
        print(f"{part}: {len(mols)} graphs")

    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "ZINC_graphs.txt").write_text("# target | atom types | edges\n" + "\n".join(lines) + "\n")
    for part, idx in splits.items():
        (args.out / f"ZINC_{part}.index").write_text("".join(f"{i}\n" for i in idx))


if __name__ == "__main__":
    main()
