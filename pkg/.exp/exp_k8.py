import time
import numpy as np
from voxpart.synth import load_manifest, load_split
from voxpart.training import TrainConfig, train_phase2, infer, load_checkpoint, make_optimizer_from_checkpoint
from voxpart.postprocess import detect_symmetry_plane, symmetrize_map
from voxpart.evaluation import pr_curve

t0 = time.time()
manifest = load_manifest("/root/pkg/.exp/corpus32v2/manifest.txt")
def log(m): print(f"[{time.time()-t0:7.1f}s] {m}", flush=True)

ckpt = load_checkpoint("/root/pkg/.exp/ckpt_v3")
tc = TrainConfig(batch_size=16, lr=1e-3, seed=7, schedule=((1, 50), (2, 10), (4, 10), (8, 10)))
opt = make_optimizer_from_checkpoint(ckpt, dict(ckpt.net.params), tc.lr)
train_phase2(ckpt.net, manifest, tc, optimizer=opt, start_epoch=60,
             on_epoch=lambda s, e, r: log(f"p2 e{e} k{r.kernel} loss {r.loss:.4f}"))
shapes = load_split(manifest, "train")
smaps, gts, occs = [], [], []
for s in shapes:
    seg = infer(ckpt.net, s.grid, avgpool_kernel=8)
    smaps.append(symmetrize_map(seg.positive_map(), detect_symmetry_plane(s.grid), s.grid))
    gts.append(s.gt); occs.append(s.grid.bits)
log(f"kernel-8 AUC sym: {pr_curve(smaps, gts, occs).auc:.4f}")
