"""Hand-unrolled numpy reference for the policy network's building blocks.

No autodiff, no shared forward code: each function re-states the arithmetic
directly so the production implementations can be checked value by value.
Also provides central finite differences for gradient verification.
"""

from __future__ import annotations

import numpy as np


def ref_sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def ref_elu(x):
    return np.where(x > 0, x, np.expm1(x))


def ref_leaky_relu(x, slope=0.2):
    return np.where(x > 0, x, slope * x)


def ref_softmax(x):
    z = np.exp(x - np.max(x))
    return z / z.sum()


def ref_gru_step(wz, uz, bz, wr, ur, br, wh, uh, bh, x, h):
    z = ref_sigmoid(wz @ x + uz @ h + bz)
    r = ref_sigmoid(wr @ x + ur @ h + br)
    cand = np.tanh(wh @ x + uh @ (r * h) + bh)
    return (1.0 - z) * h + z * cand


def ref_gat(ws, attn_vecs, features, neighborhoods):
    """Multi-head attention aggregation; returns per-node concatenated heads."""
    n = len(features)
    outputs = []
    for i in range(n):
        head_parts = []
        for w, a in zip(ws, attn_vecs):
            projected = [w @ features[j] for j in range(n)]
            scores = np.array(
                [
                    ref_leaky_relu(a @ np.concatenate([projected[i], projected[j]]))
                    for j in neighborhoods[i]
                ]
            )
            att = ref_softmax(scores)
            agg = np.zeros_like(projected[i])
            for coeff, j in zip(att, neighborhoods[i]):
                agg = agg + coeff * projected[j]
            head_parts.append(ref_elu(agg))
        outputs.append(np.concatenate(head_parts))
    return outputs


def ref_bigru(gru_fwd, gru_bwd, inputs, hidden):
    """gru_fwd/gru_bwd are 9-tuples (wz, uz, bz, wr, ur, br, wh, uh, bh)."""
    h = np.zeros(hidden)
    fwd = []
    for x in inputs:
        h = ref_gru_step(*_reorder(gru_fwd), x, h)
        fwd.append(h)
    h = np.zeros(hidden)
    bwd = [None] * len(inputs)
    for i in range(len(inputs) - 1, -1, -1):
        h = ref_gru_step(*_reorder(gru_bwd), inputs[i], h)
        bwd[i] = h
    return [np.concatenate([f, b]) for f, b in zip(fwd, bwd)]


def _reorder(nine):
    wz, uz, bz, wr, ur, br, wh, uh, bh = nine
    return wz, uz, bz, wr, ur, br, wh, uh, bh


def ref_attention_step(attn_q, attn_k, attn_v, dec_gru, embed_table,
                       prev_hidden, encoder_states, prev_action):
    query = attn_q @ prev_hidden
    scores = np.array(
        [attn_v @ np.tanh(query + attn_k @ e) for e in encoder_states]
    )
    weights = ref_softmax(scores)
    context = np.zeros_like(encoder_states[0])
    for wt, e in zip(weights, encoder_states):
        context = context + wt * e
    x = np.concatenate([context, embed_table[prev_action]])
    hidden = ref_gru_step(*_reorder(dec_gru), x, prev_hidden)
    return hidden, context, weights


def central_differences(loss_fn, flat, h=1e-5, indices=None):
    """Central finite-difference gradient of ``loss_fn`` at ``flat``."""
    flat = np.asarray(flat, dtype=np.float64)
    idx = range(flat.size) if indices is None else indices
    grad = np.zeros(flat.size)
    for i in idx:
        bumped = flat.copy()
        bumped[i] = flat[i] + h
        hi = loss_fn(bumped)
        bumped[i] = flat[i] - h
        lo = loss_fn(bumped)
        grad[i] = (hi - lo) / (2.0 * h)
    return grad
