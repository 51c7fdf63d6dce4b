#!/usr/bin/env python3
# Render each pseudo-anomaly generator on both synthetic textures and save a
# contact sheet (image row over mask row) to pseudo_anomalies.png.
import sys

import numpy as np

from recurad import augment, dataio

out = sys.argv[1] if len(sys.argv) > 1 else "pseudo_anomalies.png"
rng = np.random.default_rng(11)
# bigger blocks and lines than the 1024-px defaults so they show at 64 px
cfg = augment.AugmentConfig(block_sizes=(160, 256), line_length=(300, 600), line_width=(1, 2))

tiles, masks = [], []
for kind in ("stripes", "checker"):
    img = dataio.render_texture(kind, 64, rng)
    tiles.append(img)
    masks.append(np.zeros_like(img))
    for gen in (augment.inject_color_block, augment.inject_copy_paste, augment.inject_lines):
        pa = gen(img, rng, cfg)
        assert np.array_equal(pa.mask, augment.diff_mask(img, pa.corrupted))
        print(f"{kind:8s} {pa.kind:12s} changed pixels: {int(pa.mask.sum()):5d}")
        tiles.append(pa.corrupted)
        masks.append(np.repeat(pa.mask, 3, axis=0))

pad = lambda t: np.pad(t, ((0, 0), (1, 1), (1, 1)), constant_values=1.0)
sheet = np.concatenate([np.concatenate([pad(t) for t in tiles], axis=2),
                        np.concatenate([pad(m) for m in masks], axis=2)], axis=1)
dataio.write_image(out, sheet)
print("wrote", out)
