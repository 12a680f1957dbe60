"""Synthetic multi-case study written to disk for the manifest tests."""
import json

import numpy as np

from segbench.io import write_volume
from segbench.volume import LabelVolume, Spacing

SHAPE = (24, 20, 12)
SPACING = Spacing(0.8, 0.8, 2.5)
# raw ids: 1 healthy lung, 2 GGO, 3 CON, 4 CPP, 7 COM, 8 OAT
LESIONS = (2, 3, 4, 7, 8)


def _blob(rng, shape):
    c = rng.integers((4, 4, 2), np.array(shape) - (4, 4, 2))
    r = rng.integers(2, 4, 3)
    x, y, z = np.ogrid[: shape[0], : shape[1], : shape[2]]
    return ((x - c[0]) / r[0]) ** 2 + ((y - c[1]) / r[1]) ** 2 + ((z - c[2]) / r[2]) ** 2 <= 1


def make_reference(rng):
    a = np.zeros(SHAPE, np.uint8)
    a[2:-2, 2:-2, 1:-1] = 1
    for lab in LESIONS:
        if rng.random() < 0.75:
            a[_blob(rng, SHAPE) & (a == 1)] = lab
    return a


def perturb(rng, gt, flip):
    """Copy of ``gt`` with a fraction of voxels relabelled."""
    out = gt.copy()
    hit = rng.random(gt.shape) < flip
    out[hit] = rng.choice([0, 1, 2, 3, 4, 8], size=int(hit.sum())).astype(np.uint8)
    return out


def write_study(root, n_cases=4, methods=("A", "B"), flips=(0.02, 0.08, 0.15), seed=0,
                majority=False, tasks=("lung", "bin", "mc"), boot_n=1000):
    """Write ``n_cases`` cases with one prediction per method; return the manifest path."""
    rng = np.random.default_rng(seed)
    cases = []
    for i in range(n_cases):
        cid = f"case{i:02d}"
        gt = make_reference(rng)
        write_volume(LabelVolume(gt, SPACING), root / f"{cid}_gt.nii.gz")
        preds = {}
        for m, flip in zip(methods, flips):
            name = f"{cid}_{m}.nii" if i % 2 else f"{cid}_{m}.raw"
            write_volume(LabelVolume(perturb(rng, gt, flip), SPACING), root / name)
            preds[m] = name
        cases.append({"id": cid, "gt": f"{cid}_gt.nii.gz", "preds": preds})
    manifest = {
        "schema": 1,
        "tasks": list(tasks),
        "methods": list(methods),
        "bootstrap": {"n": boot_n, "seed": 3},
        "vote_seed": 17,
        "cases": cases,
    }
    if majority:
        manifest["majority_vote"] = {"name": "MAJ", "methods": list(methods)}
    path = root / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1))
    return path
