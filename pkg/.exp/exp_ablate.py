import os, sys, time
import numpy as np
from voxpart.synth import load_manifest, load_split
from voxpart.network import NetConfig, build_network
from voxpart.training import TrainConfig, train_phase1, train_phase2, infer
from voxpart.optim import Adam
from voxpart.postprocess import detect_symmetry_plane, symmetrize_map
from voxpart.evaluation import pr_curve

arch = sys.argv[1]          # shallow_u_stack | no_skip
stack = int(sys.argv[2])
C = int(sys.argv[3]) if len(sys.argv) > 3 else 6
t0 = time.time()
manifest = load_manifest("/root/pkg/.exp/corpus32v2/manifest.txt")
def log(msg): print(f"[{time.time()-t0:7.1f}s] {msg}", flush=True)

cfg = NetConfig(arch=arch, stack=stack, channels=C, convs_per_block=1, input_res=32)
net = build_network(cfg, 7)
tc = TrainConfig(batch_size=16, lr=1e-3, seed=7, phase1_epoch_cap=300, schedule=((1, 50), (2, 10)))
r1, _ = train_phase1(net, manifest, tc,
    on_epoch=lambda s, e, r: log(f"p1 e{e} loss {r.loss:.4f} tr {r.train_acc:.3f} va {r.val_acc:.3f}") if e % 5 == 4 else None)
log(f"phase1 converged={r1.converged} epochs={r1.epochs_run}")
if r1.converged:
    train_phase2(net, manifest, tc, optimizer=Adam(dict(net.params), lr=tc.lr),
                 on_epoch=lambda s, e, r: log(f"p2 e{e} k{r.kernel} loss {r.loss:.4f}") if e % 10 == 9 else None)
    shapes = load_split(manifest, "train")
    smaps, gts, occs = [], [], []
    for s in shapes:
        seg = infer(net, s.grid, avgpool_kernel=2)
        smaps.append(symmetrize_map(seg.positive_map(), detect_symmetry_plane(s.grid), s.grid))
        gts.append(s.gt); occs.append(s.grid.bits)
    log(f"AUC sym: {pr_curve(smaps, gts, occs).auc:.4f}")
log("done")
