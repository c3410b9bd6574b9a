"""Download the Cora citation graph and write it as a plain-text dataset.

The raw ``cora.content``/``cora.cites`` files ship inside an early wheel of
the PGL library on PyPI; we fetch that wheel, verify its hash and convert.

    python scripts/fetch_cora.py --out data/cora
    python scripts/fetch_cora.py --source /path/to/pgl.whl --out data/cora
"""

from __future__ import annotations

import argparse
import hashlib
import io
import logging
import sys
import urllib.request
import zipfile
from pathlib import Path

import numpy as np

from fairleak.graph import Graph, adjacency_from_edges, random_split, save_dataset

WHEEL_URL = ("https://files.pythonhosted.org/packages/ee/24/"
             "ea2bfe53745f1cb0a327cc1d49067beb0f1ac4509ceee424be2ae58313b3/"
             "pgl-0.1.0b0-cp36-cp36m-manylinux1_x86_64.whl")
WHEEL_SHA256 = "7d2d69f6b8f50c16d5cf2df9582bbb25dc6706a7f45a79778adbeb052fb39d6e"
MEMBERS = ("pgl/data/cora/cora.content", "pgl/data/cora/cora.cites")

log = logging.getLogger("fetch_cora")


def read_wheel(source: str | None) -> bytes:
    if source:
        data = Path(source).read_bytes()
    else:
        log.info("downloading %s", WHEEL_URL)
        with urllib.request.urlopen(WHEEL_URL, timeout=120) as resp:
            data = resp.read()
    digest = hashlib.sha256(data).hexdigest()
    if digest != WHEEL_SHA256:
        raise SystemExit(f"sha256 mismatch: {digest}")
    return data


def convert(content: str, cites: str, split_seed: int = 0,
            train_frac: float = 0.6, val_frac: float = 0.2) -> tuple[Graph, dict]:
    rows = [line.split("\t") for line in content.splitlines() if line.strip()]
    ids = [r[0] for r in rows]
    index = {pid: k for k, pid in enumerate(ids)}
    classes = sorted({r[-1].strip() for r in rows})
    labels = np.array([classes.index(r[-1].strip()) for r in rows], dtype=np.int64)
    features = np.array([[float(v) for v in r[1:-1]] for r in rows])

    raw, dropped, loops = 0, 0, 0
    edges = []
    for line in cites.splitlines():
        parts = line.split()
        if len(parts) != 2:
            continue
        raw += 1
        if parts[0] not in index or parts[1] not in index:
            dropped += 1
            continue
        u, v = index[parts[0]], index[parts[1]]
        if u == v:
            loops += 1
            continue
        edges.append((u, v))
    adjacency = adjacency_from_edges(len(ids), np.array(edges, dtype=np.int64))
    rng = np.random.default_rng(split_seed)
    train, val, test = random_split(labels, train_frac, val_frac, rng)
    g = Graph(adjacency, features, labels, train, val, test, num_classes=len(classes))
    stats = {"raw_citations": raw, "dangling": dropped, "self_loops": loops,
             "undirected_edges": g.num_edges, "classes": classes}
    return g, stats


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="data/cora")
    ap.add_argument("--source", help="local copy of the wheel instead of downloading")
    ap.add_argument("--split-seed", type=int, default=0)
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    with zipfile.ZipFile(io.BytesIO(read_wheel(args.source))) as zf:
        content, cites = (zf.read(m).decode() for m in MEMBERS)
    g, stats = convert(content, cites, args.split_seed)
    save_dataset(g, args.out)
    log.info("wrote %s: %d nodes, %d features, %d classes, %s", args.out, g.num_nodes,
             g.features.shape[1], g.num_classes, stats)
    return 0


if __name__ == "__main__":
    sys.exit(main())
