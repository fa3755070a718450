"""End to end: render a sequence, track it, score it, export a cloud.

A person-sized box walks through a room while the camera orbits.  The
sequence is written in TUM layout, tracked by ``dynvo run`` exactly as a
real recording would be, scored with ``dynvo eval`` and fused into a PLY
point cloud from which the masked walker is absent.
"""

import sys
from pathlib import Path

import numpy as np
from PIL import Image

from dynvo.cli import main
from dynvo.dataset_io import export_point_cloud, load_tum, read_trajectory
from dynvo.motion_mask import DYNAMIC, MASK_INVALID, STATIC
from dynvo.synth import render_sequence, walking_scene, write_tum_dataset

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
data, run = out / "walking", out / "walking_run"

seq = render_sequence(walking_scene(noise=0.003), seed=0)
write_tum_dataset(seq, data)
print(f"rendered {len(seq.frames)} frames into {data}")

code = main(["run", str(data), "--out", str(run), "--debug-masks"])
print(f"dynvo run exit code {code}")
print((run / "metrics.csv").read_text())
main(["eval", str(data / "groundtruth.txt"), str(run / "trajectory.txt"), "--mode", "ate"])

# masks are written for the first frame of each pair; the last frame has none
tum = load_tum(data)
est = read_trajectory(run / "trajectory.txt")
values = {0: STATIC, 255: DYNAMIC, 128: MASK_INVALID}
frames, masks = [], []
for i, stamp in enumerate(tum.timestamps[:-1]):
    png = np.asarray(Image.open(run / "masks" / f"{stamp:.6f}.png"))
    masks.append(np.vectorize(values.get)(png).astype(np.uint8))
    frames.append(tum.frame(i))
n = export_point_cloud(out / "walking.ply", frames, est.poses[:-1], masks, tum.intrinsics, stride=2)
print(f"wrote {n} static points to {out / 'walking.ply'}")
