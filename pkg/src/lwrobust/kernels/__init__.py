"""Backend selection for the label-wise attention kernel.

The compiled extension is used when it was built; otherwise the numpy
implementation is used. Setting ``LWROBUST_PURE_PYTHON=1`` forces the
fallback. Both backends expose ``lwan_forward`` and ``lwan_backward`` with
identical signatures.
"""
from __future__ import annotations

import os
from types import SimpleNamespace

import numpy as np

from . import _lwan_py

try:
    from . import _lwan_ext
except ImportError:  # extension not built
    _lwan_ext = None

BACKENDS = {"python": _lwan_py}
if _lwan_ext is not None:
    BACKENDS["compiled"] = _lwan_ext

if os.environ.get("LWROBUST_PURE_PYTHON", "") not in ("", "0") or _lwan_ext is None:
    BACKEND = "python"
else:
    BACKEND = "compiled"


def get_backend(name: str | None = None) -> SimpleNamespace:
    name = name or BACKEND
    if name not in BACKENDS:
        raise ValueError(f"kernel backend {name!r} unavailable; have {sorted(BACKENDS)}")
    mod = BACKENDS[name]

    def forward(emb, K, Vm, Q, o, tokens, lengths):
        args = [np.ascontiguousarray(a, dtype=np.float64) for a in (emb, K, Vm, Q, o)]
        return mod.lwan_forward(*args, np.ascontiguousarray(tokens, dtype=np.int64),
                                np.ascontiguousarray(lengths, dtype=np.int64))

    def backward(emb, K, Vm, Q, o, tokens, lengths, attn, g):
        args = [np.ascontiguousarray(a, dtype=np.float64) for a in (emb, K, Vm, Q, o)]
        return mod.lwan_backward(*args, np.ascontiguousarray(tokens, dtype=np.int64),
                                 np.ascontiguousarray(lengths, dtype=np.int64),
                                 np.ascontiguousarray(attn, dtype=np.float64),
                                 np.ascontiguousarray(g, dtype=np.float64))

    return SimpleNamespace(name=name, lwan_forward=forward, lwan_backward=backward)


lwan_forward = get_backend().lwan_forward
lwan_backward = get_backend().lwan_backward
