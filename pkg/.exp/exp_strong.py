import os, sys, time
import numpy as np
from voxpart.synth import load_manifest, load_split
from voxpart.network import NetConfig, build_network
from voxpart.training import TrainConfig, train_strong, strong_voxel_accuracy

t0 = time.time()
manifest = load_manifest("/root/pkg/.exp/corpus32v2/manifest.txt")
def log(msg): print(f"[{time.time()-t0:7.1f}s] {msg}", flush=True)

C = int(sys.argv[1]) if len(sys.argv) > 1 else 6
LR = float(sys.argv[2]) if len(sys.argv) > 2 else 2e-3
cfg = NetConfig(channels=C, convs_per_block=1, input_res=32, stack=3)
net = build_network(cfg, 11)
tc = TrainConfig(mode="strong", batch_size=16, lr=LR, seed=11,
                 strong_epochs=100, strong_stop_accuracy=0.90)
result = train_strong(net, manifest, tc,
    on_epoch=lambda s, e, r: log(f"strong e{e} loss {r.loss:.4f} val_acc {r.val_acc:.4f}"))
log(f"stopped after {result.epochs_run} epochs, reached={result.converged}")
val = strong_voxel_accuracy(net, load_split(manifest, "val"), "armrest", 16)
test = strong_voxel_accuracy(net, load_split(manifest, "test"), "armrest", 16)
log(f"held-out accuracy: val {val:.4f} test {test:.4f}")
