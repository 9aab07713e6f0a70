"""Vectorized numpy implementation of the label-wise attention kernel."""
from __future__ import annotations

import numpy as np


def _mask(tokens: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    return np.arange(tokens.shape[1])[None, :] < lengths[:, None]


def lwan_forward(emb, K, Vm, Q, o, tokens, lengths):
    """Logits (B, L) and attention weights (B, L, T_max); padding positions get zero weight."""
    H = emb[tokens]
    Kh = H @ K
    Vh = H @ Vm
    scores = np.einsum("btk,lk->blt", Kh, Q)
    valid = _mask(tokens, lengths)[:, None, :]
    scores = np.where(valid, scores, -np.inf)
    scores -= scores.max(axis=2, keepdims=True)
    e = np.where(valid, np.exp(scores), 0.0)
    attn = e / e.sum(axis=2, keepdims=True)
    d = np.einsum("blt,btk->blk", attn, Vh) / lengths[:, None, None]
    logits = np.einsum("blk,lk->bl", d, o)
    return logits, attn


def lwan_backward(emb, K, Vm, Q, o, tokens, lengths, attn, g):
    """Gradients w.r.t. (emb, K, Vm, Q, o) given upstream ``g = dloss/dlogits``."""
    H = emb[tokens]
    Kh = H @ K
    Vh = H @ Vm
    inv_len = (1.0 / lengths)[:, None, None]
    d = np.einsum("blt,btk->blk", attn, Vh) * inv_len
    d_o = np.einsum("bl,blk->lk", g, d)
    dd = g[:, :, None] * o[None, :, :]
    da = np.einsum("btk,blk->blt", Vh, dd) * inv_len
    dVh = np.einsum("blt,blk->btk", attn, dd) * inv_len
    ds = attn * (da - np.sum(attn * da, axis=2, keepdims=True))
    dKh = np.einsum("blt,lk->btk", ds, Q)
    dQ = np.einsum("blt,btk->lk", ds, Kh)
    dK = np.einsum("bte,btk->ek", H, dKh)
    dVm = np.einsum("bte,btk->ek", H, dVh)
    dH = dKh @ K.T + dVh @ Vm.T
    d_emb = np.zeros_like(emb)
    np.add.at(d_emb, tokens.ravel(), dH.reshape(-1, emb.shape[1]))
    return d_emb, dK, dVm, dQ, d_o
