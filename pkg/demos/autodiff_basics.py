"""A tour of the dense autodiff tape.

Everything trainable in this package runs on a small reverse-mode engine:
2-D float64 tensors, an explicit tape of primitive records, and one backward
pass that fills every gradient buffer. This script builds a tiny computation,
prints the tape, and cross-checks the gradients with central differences.

Run: python demos/autodiff_basics.py
"""

import numpy as np

from randalign.autodiff import (
    Tape,
    backward,
    finite_diff_check,
    matmul,
    relu,
    sigmoid,
    sum_all,
)

rng = np.random.default_rng(0)

tape = Tape()
x = tape.tensor(rng.normal(size=(2, 3)))
w = tape.tensor(rng.normal(size=(3, 2)))
loss = sum_all(sigmoid(matmul(relu(x), w)))
backward(loss)

print("tape records (kind, inputs -> output):")
for rec in tape.records:
    print(f"  {rec.kind:>8} {rec.input_ids} -> {rec.output_id}")

print()
print("loss:", loss.values[0, 0])
print("d loss / d x:")
print(x.grad)
print("d loss / d w:")
print(w.grad)

# the same gradients, measured numerically
def f(leaf):
    w2 = leaf.tape.tensor(w.values)
    return sum_all(sigmoid(matmul(relu(leaf), w2)))

err = finite_diff_check(f, Tape().tensor(x.values.copy()), eps=1e-5)
print()
print(f"max relative error vs central differences: {err:.3e}")
