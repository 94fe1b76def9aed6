"""A miniature depth sweep: plain deep GCN vs the aligned version.

Trains a no-residual GCN at a few depths on a small community-detection
task (stochastic block model graphs with noisy one-hot features), with and
without the alignment update, then prints the pattern that motivates the
whole package: the plain model degrades as depth grows while the aligned
model keeps learning, and the final-layer cosine tells the collapse story.

This is a scaled-down version of what `randalign run <config>` does; see the
README for the full experiment driver and its CSV/SVG outputs.

Run: python demos/depth_sweep.py   (a few minutes on one core)
"""

from randalign.graphs import sbm_dataset
from randalign.layers import ModelConfig
from randalign.training import TrainConfig, train_run

BLOCKS = [8, 8, 8]
train = sbm_dataset(BLOCKS, p_in=0.6, p_out=0.05, noise=0.3, n_graphs=20, seed=1)
test = sbm_dataset(BLOCKS, p_in=0.6, p_out=0.05, noise=0.3, n_graphs=8,
                   seed=10001, split="test")

print(f"{'depth':>5} {'aligned':>8} {'train acc':>10} {'test acc':>9} {'final cosine':>13}")
for depth in (2, 8, 16):
    for aligned in (False, True):
        cfg = ModelConfig("gcn", depth=depth, d_in=3, d_h=12, n_classes=3,
                          use_randalign=aligned)
        rec = train_run(cfg, train, test, TrainConfig(max_epochs=80), seed=0)
        print(f"{depth:>5} {str(aligned):>8} {rec.final_train_acc:>10.3f} "
              f"{rec.final_test_acc:>9.3f} {rec.final_cosine:>13.3f}")

print()
print("reading the table: the plain model learns while shallow but slides to")
print("chance as depth grows and its embeddings collapse (cosine near 1);")
print("the aligned model keeps learning at every depth.")
