"""Train the same tiny CNN twice — local-concepts head vs global average
pooling — on the synthetic glyph corpus, and compare test accuracy.

Each glyph image carries one class-defining 4x4 glyph at a random position
plus lookalike distractor glyphs. Global average pooling smears those local
cues into one vector; the local-concepts head pools every sub-window and
stays sensitive to them, which shows up as a test-accuracy gap even when
both heads fit the training set. Takes about half a minute on one core.
"""

import tempfile
from pathlib import Path

from lcanet.cli import main as lcanet_main
from lcanet.config import load_config
from lcanet.train import run_training

root = Path(tempfile.mkdtemp(prefix="lcanet_demo_"))
lcanet_main(["synth", "--out", str(root / "data"), "--seed", "42"])
# defaults: 8 classes, 64 train + 16 test images per class

BASE = """
seed = 42
epochs = 30
batch_size = 32
lr = 0.01
momentum = 0.9
lambda_entropy = 0.1
lr_step_epoch = 0
backbone = tiny_cnn
channels = 16,32
input_size = 16
lca.embed_dim = 32
data.train = {root}/data/train
data.test = {root}/data/test
ckpt.out = {root}/{head}.lcac
log.csv = {root}/{head}.csv
head = {head}
"""

results = {}
for head in ("lca", "gap"):
    cfg_path = root / f"{head}.cfg"
    cfg_path.write_text(BASE.format(root=root, head=head))
    summary = run_training(load_config(cfg_path))
    results[head] = summary
    print(f"{head}: train {summary.final_train_acc:.2f}%  "
          f"test {summary.final_test_acc:.2f}%")

delta = results["lca"].final_test_acc - results["gap"].final_test_acc
print(f"\nlocal-concepts head vs global pooling on test: {delta:+.2f} points")
print(f"per-epoch metrics: {root}/lca.csv and {root}/gap.csv")
