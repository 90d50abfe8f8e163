import sys, time
import numpy as np
from voxpart.synth import gen_dataset, load_split
from voxpart.network import NetConfig, build_network
from voxpart.training import TrainConfig, train_phase1, train_phase2, infer
from voxpart.postprocess import detect_symmetry_plane, symmetrize_map
from voxpart.evaluation import pr_curve

C = int(sys.argv[1]) if len(sys.argv) > 1 else 5
LR = float(sys.argv[2]) if len(sys.argv) > 2 else 1e-3
SEED = int(sys.argv[3]) if len(sys.argv) > 3 else 7

t0 = time.time()
root = "/root/pkg/.exp/corpus32"
import os
if not os.path.exists(root + "/manifest.txt"):
    gen_dataset(root, "chair", 100, 100, (0.45, 0.05, 0.5), seed=7, n=32)
from voxpart.synth import load_manifest
manifest = load_manifest(root + "/manifest.txt")

cfg = NetConfig(channels=C, convs_per_block=1, input_res=32, stack=3)
net = build_network(cfg, SEED)
tc = TrainConfig(batch_size=15, lr=LR, seed=SEED, phase1_epoch_cap=300,
                 schedule=((1, 50), (2, 10)))

def log(msg):
    print(f"[{time.time()-t0:7.1f}s] {msg}", flush=True)

r1, _ = train_phase1(net, manifest, tc,
                     on_epoch=lambda s, e, r: log(f"p1 e{e} loss {r.loss:.4f} train {r.train_acc:.3f} val {r.val_acc:.3f}"))
log(f"phase1 converged={r1.converged} epochs={r1.epochs_run}")

def eval_auc(tag=""):
    shapes = load_split(manifest, "train")
    maps, smaps, gts, occs = [], [], [], []
    for s in shapes:
        seg = infer(net, s.grid, avgpool_kernel=2)
        m = seg.positive_map()
        plane = detect_symmetry_plane(s.grid)
        sm = symmetrize_map(m, plane, s.grid)
        maps.append(m); smaps.append(sm); gts.append(s.gt); occs.append(s.grid.bits)
    raw = pr_curve(maps, gts, occs).auc
    sym = pr_curve(smaps, gts, occs).auc
    log(f"AUC{tag}: raw {raw:.4f} symmetrized {sym:.4f}")
    return sym

r2 = train_phase2(net, manifest, tc,
                  on_epoch=lambda s, e, r: log(f"p2 e{e} k{r.kernel} loss {r.loss:.4f}") if e % 5 == 4 else None)
eval_auc(" final")
from voxpart.training import save_checkpoint
save_checkpoint("/root/pkg/.exp/ckpt_c3", net, None, "phase2", 60, tc, r1.history + r2.history)
log("done")
