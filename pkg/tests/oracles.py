"""Slow, independent reference computations used to check the fast paths."""

import math
from itertools import product

import numpy as np


def bisect_threshold(z, alpha, iters=120):
    """Simplex mapping by bisection on the threshold.

    alpha=2 is sparsemax: sum max(z - tau, 0) = 1
    alpha=1.5 is entmax: sum max(z/2 - tau, 0)^2 = 1
    Works row-wise on 2-D input.
    """
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    if alpha == 2:
        u, power = z, 1
    else:
        u, power = z / 2.0, 2
    top = u.max(axis=1, keepdims=True)
    lo, hi = top - 1.0, top
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        mass = (np.maximum(u - mid, 0.0) ** power).sum(axis=1, keepdims=True)
        too_low = mass > 1.0
        lo = np.where(too_low, mid, lo)
        hi = np.where(too_low, hi, mid)
    tau = 0.5 * (lo + hi)
    return np.maximum(u - tau, 0.0) ** power


def reference_weights(logits, kind):
    """Mapped attention for one logit vector or row-wise for a matrix."""
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    if kind == "softmax":
        rows = []
        for row in z:
            top = max(row)
            e = [math.exp(v - top) for v in row]
            s = sum(e)
            rows.append([v / s for v in e])
        out = np.array(rows)
    else:
        out = bisect_threshold(z, 2 if kind == "sparsemax" else 1.5)
    return out[0] if np.ndim(logits) == 1 else out


def scalar_sigmoid(t):
    if t >= 0:
        return 1.0 / (1.0 + math.exp(-t))
    e = math.exp(t)
    return e / (1.0 + e)


def scalar_gate(logits, threshold, x, kind, weights=None):
    w = reference_weights(logits, kind) if weights is None else weights
    return scalar_sigmoid(math.fsum(float(wi) * float(xi) for wi, xi in zip(w, x)) - threshold)


def enumerate_paths(tree, x, kind):
    """Leaf probabilities by walking each of the 2^d root-to-leaf paths."""
    d = tree.depth
    weights = reference_weights(tree.logits, kind)
    gates = [scalar_gate(None, tree.thresholds[i], x, kind, weights[i]) for i in range(2 ** d - 1)]
    probs = []
    for bits in product((0, 1), repeat=d):
        node, p = 0, 1.0
        for go_right in bits:
            g = gates[node]
            p *= g if go_right else (1.0 - g)
            node = 2 * node + 1 + go_right
        probs.append(p)
    return np.array(probs)


def enumerate_tree_output(tree, x, kind):
    p = enumerate_paths(tree, x, kind)
    return sum(p[j] * tree.leaves[j] for j in range(len(p)))


def central_differences(f, arrays, step=1e-5):
    """d f / d a for every entry of every array in ``arrays`` (mutated and restored)."""
    out = []
    for a in arrays:
        g = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            orig = a[idx]
            a[idx] = orig + step
            fp = f()
            a[idx] = orig - step
            fm = f()
            a[idx] = orig
            g[idx] = (fp - fm) / (2 * step)
        out.append(g)
    return out


def relative_errors(analytic, numeric, floor=1e-7):
    """Entry-wise error, reported as 0 where the absolute gap is under ``floor``."""
    gap = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(gap < floor, 0.0, gap / scale)
    return rel


class TextbookAdam:
    """Adam written out directly from the Kingma & Ba pseudo-code."""

    def __init__(self, lr, beta1, beta2, eps):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = self.v = None
        self.t = 0

    def step(self, theta, grad):
        if self.m is None:
            self.m = np.zeros_like(theta)
            self.v = np.zeros_like(theta)
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad ** 2
        m_hat = self.m / (1 - self.b1 ** self.t)
        v_hat = self.v / (1 - self.b2 ** self.t)
        return theta - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
