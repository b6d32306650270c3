"""Regenerate the cross-package test fixtures from the simulator package.

Run from this directory with the `pszsim` package installed:

    python3 generate_fixtures.py

Outputs (committed):
    masks.json           side indices and flat indices for every pattern
    mask_input.pszd      a random (4, 12, 12) complex tensor
    masked/<name>.pszd   apply_mask output for each pattern on that tensor
    dataset/             a small dataset (N=16, K=8, L=6) for training tests
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from pszsim.dataio import generate_dataset, write_tensor
from pszsim.scene import MASK_NAMES, SceneConfig, apply_mask, make_scene, mask_indices

ROOT = Path(__file__).parent

# 16 loudspeakers leave enough rendering headroom that a trained model can
# realistically halve the zero-output loss (the 6-speaker variant cannot:
# its least-squares optimum already sits at ~0.5x the baseline).
FIXTURE_SCENE = SceneConfig(
    room_dims=(6.0, 7.0, 3.0),
    rt60=0.2,
    num_loudspeakers=16,
    array_radius=1.5,
    zone_width=0.4,
    zone_height=0.4,
    zone_gap=1.0,
    control_n=12,
    monitor_n=5,
    plane_height=1.4,
    num_freqs=8,
    f_max=2000.0,
    vsrc_r_min=1.6,
    vsrc_r_max=2.4,
    ism_max_order=3,
    seed=4242,
)


def main() -> None:
    rng = np.random.default_rng(20240817)
    data = (rng.standard_normal((4, 12, 12)) + 1j * rng.standard_normal((4, 12, 12)))
    data = data.astype(np.complex64).astype(complex)  # freeze at float32 precision
    write_tensor(ROOT / "mask_input.pszd", data)

    masked_dir = ROOT / "masked"
    masked_dir.mkdir(exist_ok=True)
    meta = {}
    for name in MASK_NAMES:
        pattern = mask_indices(name)
        out = apply_mask(data, pattern)
        safe = name.replace("#", "_")
        write_tensor(masked_dir / f"{safe}.pszd", out)
        meta[name] = {
            "side_indices": list(pattern.side_indices),
            "flat_indices": pattern.flat_indices().tolist(),
            "file": f"masked/{safe}.pszd",
        }
    (ROOT / "masks.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")

    scene = make_scene(FIXTURE_SCENE)
    generate_dataset(scene, n_samples=48, seed=FIXTURE_SCENE.seed, out_dir=ROOT / "dataset")
    print("fixtures written to", ROOT)


if __name__ == "__main__":
    main()
