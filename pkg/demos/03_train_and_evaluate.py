"""
Training a detector
===================

Generate a small corpus, train the reference network on 64-bin features,
keep the epoch with the lowest validation loss, and score held-out images.
Runs in well under a minute on a laptop CPU.
"""

import tempfile
from pathlib import Path

from coocnet import RecipeItem, TrainConfig, auc, generate_corpus, per_type_report, score_manifest, split_manifest, train
from coocnet.nn import load_checkpoint
from coocnet.synth import write_source_images

work = Path(tempfile.mkdtemp(prefix="coocnet_train_"))

sources = write_source_images(work / "sources", 120, seed=0)
recipe = [RecipeItem(k, 30) for k in ("global_blur", "resize", "additive_noise", "intensity_normalize")]
manifest = generate_corpus(sources, recipe, work / "corpus", seed=0)

# stratified 80/20 split; both classes end up in both halves
manifest = split_manifest(manifest, 0.8, seed=0)
print(len(manifest.subset("train")), "train /", len(manifest.subset("val")), "val")

config = TrainConfig(epochs=15, batch_size=16, bins=64, seed=0,
                     checkpoint_path=str(work / "model.cnet"), cache_dir=str(work / "cache"))
model, log = train(manifest, config)

for r in log.records:
    print(f"epoch {r.epoch:2d}  train loss {r.train_loss:.4f} acc {r.train_accuracy:.3f}"
          f"  val loss {r.val_loss:.4f} acc {r.val_accuracy:.3f}")
print("best epoch:", log.best_epoch)
log.to_csv(work / "train_log.csv")

# the checkpoint on disk is the best epoch, not the last one
model = load_checkpoint(work / "model.cnet")
scored = score_manifest(model, manifest.subset("val"), cache_dir=work / "cache")
print(f"validation AUC: {auc(scored):.4f}")
print(per_type_report(scored).to_text())
print("artifacts in", work)
