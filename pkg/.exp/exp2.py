import os, sys, time
import numpy as np
from voxpart.synth import gen_dataset, load_manifest, load_split
from voxpart.network import NetConfig, build_network
from voxpart.training import (TrainConfig, train_phase1, train_phase2, infer,
                              save_checkpoint, load_checkpoint)
from voxpart.optim import Adam
from voxpart.postprocess import detect_symmetry_plane, symmetrize_map
from voxpart.evaluation import pr_curve

C = int(sys.argv[1]); LR = float(sys.argv[2]); SEED = int(sys.argv[3])
tag = sys.argv[4] if len(sys.argv) > 4 else "run"
t0 = time.time()
root = "/root/pkg/.exp/corpus32v2"
if not os.path.exists(root + "/manifest.txt"):
    gen_dataset(root, "chair", 100, 100, (0.40, 0.10, 0.50), seed=7, n=32)
manifest = load_manifest(root + "/manifest.txt")
def log(msg): print(f"[{time.time()-t0:7.1f}s] {msg}", flush=True)

cfg = NetConfig(channels=C, convs_per_block=1, input_res=32, stack=3)
net = build_network(cfg, SEED)
tc = TrainConfig(batch_size=16, lr=LR, seed=SEED, phase1_epoch_cap=300, schedule=((1, 50), (2, 10)))

def eval_auc(label):
    shapes = load_split(manifest, "train")
    maps, smaps, gts, occs = [], [], [], []
    for s in shapes:
        seg = infer(net, s.grid, avgpool_kernel=2)
        m = seg.positive_map()
        sm = symmetrize_map(m, detect_symmetry_plane(s.grid), s.grid)
        maps.append(m); smaps.append(sm); gts.append(s.gt); occs.append(s.grid.bits)
    raw = pr_curve(maps, gts, occs).auc
    sym = pr_curve(smaps, gts, occs).auc
    log(f"AUC {label}: raw {raw:.4f} sym {sym:.4f}")

p1ck = f"/root/pkg/.exp/p1_{tag}"
if os.path.exists(p1ck + "/manifest.txt"):
    ck = load_checkpoint(p1ck)
    net = ck.net
    log(f"loaded phase1 checkpoint ({p1ck})")
else:
    r1, head = train_phase1(net, manifest, tc,
        on_epoch=lambda s, e, r: log(f"p1 e{e} loss {r.loss:.4f} tr {r.train_acc:.3f} va {r.val_acc:.3f}"))
    log(f"phase1 converged={r1.converged} epochs={r1.epochs_run}")
    if not r1.converged: sys.exit(1)
    save_checkpoint(p1ck, net, None, "phase1done", 0, tc, [])

def hook(s, e, r):
    log(f"p2 e{e} k{r.kernel} loss {r.loss:.4f}")
    if e % 10 == 9:
        eval_auc(f"e{e}")
opt = Adam(dict(net.params), lr=tc.lr)
train_phase2(net, manifest, tc, optimizer=opt, on_epoch=hook)
eval_auc("final")
save_checkpoint(f"/root/pkg/.exp/ckpt_{tag}", net, opt, "phase2", 60, tc, [])
log("done")
