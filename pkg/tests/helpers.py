"""Shared test utilities: finite-difference gradient checking with
kink-stencil detection, and brute-force metric oracles."""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

import kwslab.nncore as nc
from kwslab.losses import total_loss


@contextmanager
def nonsmooth_signature(store: list):
    """Record the relu masks and clip pass-through masks of every forward
    executed inside the context. Two evaluations whose signatures differ had
    a kink inside the perturbation stencil, where finite differences do not
    estimate the (one-sided) derivative."""
    orig_relu, orig_clip = nc.relu, nc.clip

    def relu_spy(t):
        store.append(np.array(nc.as_tensor(t).values > 0))
        return orig_relu(t)

    def clip_spy(t, lo, hi):
        v = nc.as_tensor(t).values
        store.append(np.array((v > lo) & (v < hi)))
        return orig_clip(t, lo, hi)

    nc.relu, nc.clip = relu_spy, clip_spy
    try:
        yield
    finally:
        nc.relu, nc.clip = orig_relu, orig_clip


def model_fd_gradcheck(model, x, labels, loss_config, h=1e-4, pair_seed=7):
    """Central finite differences over every parameter coordinate vs the
    analytic gradient, in the global vector norm.

    Coordinates whose +-h evaluations flip any relu/clip mask are excluded
    (the derivative does not exist inside the stencil there); their count is
    returned so callers can assert the exclusion stays marginal.

    Returns (relative_error, n_excluded, n_total).
    """

    def loss_and_signature():
        signature = []
        with nonsmooth_signature(signature):
            out = model.forward(x, training=True)
            loss, _ = total_loss(
                out.prob, out.logit, labels, loss_config, np.random.default_rng(pair_seed)
            )
        return loss, signature

    loss, _ = loss_and_signature()
    nc.backward(loss)
    names = sorted(model.params)
    analytic = np.concatenate([model.params[n].grad.ravel() for n in names])

    fd = np.zeros_like(analytic)
    stable = np.zeros(analytic.size, dtype=bool)
    pos = 0
    for name in names:
        flat = model.params[name].values.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            loss_p, sig_p = loss_and_signature()
            flat[i] = orig - h
            loss_m, sig_m = loss_and_signature()
            flat[i] = orig
            fd[pos] = (loss_p.item() - loss_m.item()) / (2 * h)
            stable[pos] = all(
                np.array_equal(a, b) for a, b in zip(sig_p, sig_m)
            )
            pos += 1

    diff = np.linalg.norm(analytic[stable] - fd[stable])
    denom = max(np.linalg.norm(fd[stable]), 1e-12)
    return diff / denom, int((~stable).sum()), analytic.size


# ---------------------------------------------------------------------------
# brute-force metric oracles (independent of the library implementations)
# ---------------------------------------------------------------------------


def brute_force_average_precision(scores, labels) -> float:
    """AP by explicit confusion matrices at every distinct threshold."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    k = labels.sum()
    points = []
    for tau in sorted(set(scores.tolist()), reverse=True):
        pred = scores >= tau
        tp = int(np.sum(pred & (labels == 1)))
        precision = tp / int(pred.sum())
        recall = tp / k
        points.append((recall, precision))
    ap = 0.0
    prev_recall = 0.0
    for recall, precision in points:  # already in ascending-recall order
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return ap


def brute_force_auroc(scores, labels) -> float:
    """Pairwise comparison count: wins + half-ties over all pos/neg pairs."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    total = 0.0
    for sp in pos:
        for sn in neg:
            if sp > sn:
                total += 1.0
            elif sp == sn:
                total += 0.5
    return total / (len(pos) * len(neg))
