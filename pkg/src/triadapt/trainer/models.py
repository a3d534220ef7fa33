"""Toy host networks whose linear maps are adapter sites.

Two topologies are provided:

``mlp``
    ``h <- tanh(W_i h)`` for every layer but the last, which is linear.
    Each layer has one site with role ``W``.

``attention_block``
    A single-head self-attention block followed by a feed-forward
    sublayer, both with residual connections::

        Z = softmax(Q K^T / sqrt(d)) V         Q, K, V = X W_q^T, X W_k^T, X W_v^T
        H = X + Z W_a^T
        Y = H + tanh(H W_m^T) W_o^T

    Blocks can be stacked; each carries the six roles W_q, W_k, W_v, W_a,
    W_m and W_o.

Every site is one of ``FrozenSite``, ``FullSite`` (the whole matrix
trains, the full fine-tuning arm) or ``AdapterSite`` (frozen ``W0`` plus a
triangular-split adapter, or plain LoRA with ``D`` pinned to the identity).
Forward passes keep a cache; ``backward`` returns per-site gradients.
"""

from __future__ import annotations

import numpy as np

from ..adapter import (
    AdapterState,
    batch_grads,
    forward_batch,
    grow_rank,
    init_adapter,
    input_grad,
)
from ..exceptions import ConfigurationError, DimensionError
from ..linalg import RngState, gaussian_matrix, lower_mask, strict_upper_mask

__all__ = [
    "ROLES",
    "METHODS",
    "FrozenSite",
    "FullSite",
    "AdapterSite",
    "ToyModel",
    "make_base_weights",
    "build_model",
    "attention_forward",
    "softmax",
]

ROLES = ("W_q", "W_k", "W_v", "W_a", "W_m", "W_o")
METHODS = ("triadapt", "lora", "full", "frozen")


def site_name(layer, role):
    return f"{layer:02d}.{role}"


class FrozenSite:
    trainable = False

    def __init__(self, site_id, W0):
        self.site_id = site_id
        self.W0 = np.array(W0, dtype=np.float64)
        self.W0.flags.writeable = False

    def params(self):
        return {}

    def forward(self, X, train=False):
        return X @ self.W0.T, None

    def backward(self, X, G, aux):
        return {}, G @ self.W0


class FullSite:
    """Every entry of the weight matrix is trainable."""

    trainable = True

    def __init__(self, site_id, W0):
        self.site_id = site_id
        self.W0 = np.array(W0, dtype=np.float64)
        self.W0.flags.writeable = False
        self.W = self.W0.copy()

    def params(self):
        return {"W": self.W}

    def set_param(self, name, value):
        self.W = value

    def apply_masks(self):
        pass

    def forward(self, X, train=False):
        return X @ self.W.T, None

    def backward(self, X, G, aux):
        return {"W": G.T @ X}, G @ self.W


class AdapterSite:
    """Frozen ``W0`` plus an ``AdapterState``.

    With ``lora=True`` the transformation matrix stays at ``L = I, U = 0``
    and only ``A`` and ``B`` train, which is plain LoRA. ``dropout`` drops
    inputs to the adapter branch during training only.
    """

    trainable = True

    def __init__(self, state: AdapterState, lora=False, dropout=0.0, rng=None):
        self.state = state
        self.lora = lora
        self.dropout = float(dropout)
        self._rng = rng

    @property
    def site_id(self):
        return self.state.site_id

    @property
    def W0(self):
        return self.state.W0

    def params(self):
        st = self.state
        if self.lora:
            return {"A": st.A, "B": st.B}
        return {"A": st.A, "B": st.B, "L": st.L, "U": st.U}

    def set_param(self, name, value):
        setattr(self.state, name, value)

    def apply_masks(self):
        st = self.state
        r = st.r
        st.L = np.where(lower_mask(r), st.L, 0.0)
        st.U = np.where(strict_upper_mask(r), st.U, 0.0)

    def _branch_input(self, X, train):
        if not train or self.dropout <= 0.0:
            return X, None
        keep = (self._rng.uniform(X.shape) >= self.dropout) / (1.0 - self.dropout)
        return X * keep, keep

    def forward(self, X, train=False):
        st = self.state
        Xb, keep = self._branch_input(X, train)
        if keep is None:
            return forward_batch(st, X), None
        out = X @ st.W0.T + st.scale * ((Xb @ st.A.T) @ st.D.T) @ st.B.T
        return out, keep

    def backward(self, X, G, keep):
        st = self.state
        Xb = X if keep is None else X * keep
        g = batch_grads(st, Xb, G)
        grads = {"A": g.gA, "B": g.gB}
        if not self.lora:
            grads["L"] = g.gL
            grads["U"] = g.gU
        if keep is None:
            dX = input_grad(st, G)
        else:
            dX = G @ st.W0 + keep * (st.scale * (((G @ st.B) @ st.D) @ st.A))
        return grads, dX


def softmax(S):
    S = S - S.max(axis=-1, keepdims=True)
    E = np.exp(S)
    return E / E.sum(axis=-1, keepdims=True)


def _dtanh(y):
    return 1.0 - y * y


class ToyModel:
    """Ordered collection of sites plus the forward/backward wiring."""

    def __init__(self, topology, sites, n_layers, method, dim, hidden_dim=None):
        if topology not in ("mlp", "attention_block"):
            raise ConfigurationError(f"unknown topology {topology!r}")
        self.topology = topology
        self.sites = list(sites)
        self.n_layers = n_layers
        self.method = method
        self.dim = dim
        self.hidden_dim = hidden_dim
        ids = [s.site_id for s in self.sites]
        if len(set(ids)) != len(ids):
            raise ConfigurationError("site ids must be unique")
        self._index = {s.site_id: s for s in self.sites}

    def site(self, site_id):
        return self._index[site_id]

    @property
    def adapter_sites(self):
        return [s for s in self.sites if isinstance(s, AdapterSite)]

    @property
    def trainable_sites(self):
        return [s for s in self.sites if s.trainable]

    @property
    def input_dim(self):
        return self.sites[0].W0.shape[1]

    @property
    def output_dim(self):
        return self.sites[-1].W0.shape[0]

    def forward(self, X, train=False):
        X = np.asarray(X, dtype=np.float64)
        if self.topology == "mlp":
            return self._mlp_forward(X, train)
        return self._attn_forward(X, train)

    def backward(self, cache, dY):
        if self.topology == "mlp":
            return self._mlp_backward(cache, dY)
        return self._attn_backward(cache, dY)

    # --- mlp -----------------------------------------------------------
    def _mlp_forward(self, X, train):
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise DimensionError(f"expected inputs of shape (batch, {self.input_dim}), got {X.shape}")
        cache = []
        h = X
        last = len(self.sites) - 1
        for i, site in enumerate(self.sites):
            z, aux = site.forward(h, train)
            out = np.tanh(z) if i < last else z
            cache.append((h, aux, out))
            h = out
        return h, cache

    def _mlp_backward(self, cache, dY):
        grads = {}
        g = dY
        last = len(self.sites) - 1
        for i in range(last, -1, -1):
            site = self.sites[i]
            h_in, aux, out = cache[i]
            if i < last:
                g = g * _dtanh(out)
            site_grads, g = site.backward(h_in, g, aux)
            if site.trainable:
                grads[site.site_id] = site_grads
        return grads, g

    # --- attention block -----------------------------------------------
    def _block_sites(self, layer):
        return [self._index[site_name(layer, role)] for role in ROLES]

    def _attn_forward(self, X, train):
        if X.ndim == 2:
            X = X[None]
        if X.ndim != 3 or X.shape[2] != self.dim:
            raise DimensionError(f"expected tokens of shape (batch, seq, {self.dim}), got {X.shape}")
        caches = []
        h = X
        for layer in range(self.n_layers):
            h, c = self._block_forward(layer, h, train)
            caches.append(c)
        return h, caches

    def _block_forward(self, layer, X, train):
        b, s, d = X.shape
        wq, wk, wv, wa, wm, wo = self._block_sites(layer)
        X2 = X.reshape(b * s, d)
        q, aq = wq.forward(X2, train)
        k, ak = wk.forward(X2, train)
        v, av = wv.forward(X2, train)
        Q, K, V = (m.reshape(b, s, -1) for m in (q, k, v))
        dk = Q.shape[-1]
        P = softmax(Q @ K.transpose(0, 2, 1) / np.sqrt(dk))
        Z = P @ V
        Z2 = Z.reshape(b * s, -1)
        a, aa = wa.forward(Z2, train)
        H2 = X2 + a
        m, am = wm.forward(H2, train)
        F2 = np.tanh(m)
        o, ao = wo.forward(F2, train)
        Y2 = H2 + o
        cache = dict(X2=X2, Q=Q, K=K, V=V, P=P, Z2=Z2, H2=H2, F2=F2,
                     aux=(aq, ak, av, aa, am, ao), shape=(b, s, d))
        return Y2.reshape(b, s, d), cache

    def _block_backward(self, layer, cache, dY):
        wq, wk, wv, wa, wm, wo = self._block_sites(layer)
        aq, ak, av, aa, am, ao = cache["aux"]
        b, s, d = cache["shape"]
        grads = {}

        def collect(site, g):
            if site.trainable:
                grads[site.site_id] = g

        dY2 = dY.reshape(b * s, d)
        g_o, dF2 = wo.backward(cache["F2"], dY2, ao)
        collect(wo, g_o)
        dM = dF2 * _dtanh(cache["F2"])
        g_m, dH_m = wm.backward(cache["H2"], dM, am)
        collect(wm, g_m)
        dH2 = dY2 + dH_m
        g_a, dZ2 = wa.backward(cache["Z2"], dH2, aa)
        collect(wa, g_a)
        dX2 = dH2.copy()

        Q, K, V, P = cache["Q"], cache["K"], cache["V"], cache["P"]
        dZ = dZ2.reshape(b, s, -1)
        dP = dZ @ V.transpose(0, 2, 1)
        dV = P.transpose(0, 2, 1) @ dZ
        dS = P * (dP - np.sum(dP * P, axis=-1, keepdims=True))
        inv = 1.0 / np.sqrt(Q.shape[-1])
        dQ = (dS @ K) * inv
        dK = (dS.transpose(0, 2, 1) @ Q) * inv
        X2 = cache["X2"]
        for site, dproj, aux in ((wq, dQ, aq), (wk, dK, ak), (wv, dV, av)):
            g, dx = site.backward(X2, dproj.reshape(b * s, -1), aux)
            collect(site, g)
            dX2 += dx
        return grads, dX2.reshape(b, s, d)

    def _attn_backward(self, caches, dY):
        if dY.ndim == 2:
            dY = dY[None]
        grads = {}
        g = dY
        for layer in range(self.n_layers - 1, -1, -1):
            layer_grads, g = self._block_backward(layer, caches[layer], g)
            grads.update(layer_grads)
        return grads, g

    # --- bookkeeping ---------------------------------------------------
    def grow(self, site_id, delta_r, init_policy, std, rng):
        site = self._index[site_id]
        grow_rank(site.state, delta_r, init_policy=init_policy, std=std, rng=rng)

    def can_grow(self, site_id, delta_r):
        st = self._index[site_id].state
        return st.r + delta_r <= min(st.n, st.d)

    def rank_table(self):
        rows = []
        for site in self.adapter_sites:
            layer, role = site.site_id.split(".", 1)
            rows.append({"site_id": site.site_id, "layer": int(layer), "role": role, "rank": site.state.r})
        return rows

    def base_weights(self):
        return {s.site_id: s.W0 for s in self.sites}


def site_shapes(topology, dim, hidden_dim, n_layers, in_dim=None, out_dim=None):
    """``[(site_id, (rows, cols)), ...]`` in forward order."""
    hidden_dim = hidden_dim or dim
    shapes = []
    if topology == "mlp":
        in_dim = in_dim or dim
        out_dim = out_dim or dim
        dims = [in_dim] + [hidden_dim] * (n_layers - 1) + [out_dim]
        for i in range(n_layers):
            shapes.append((site_name(i, "W"), (dims[i + 1], dims[i])))
    elif topology == "attention_block":
        for layer in range(n_layers):
            for role in ROLES:
                if role == "W_m":
                    shape = (hidden_dim, dim)
                elif role == "W_o":
                    shape = (dim, hidden_dim)
                else:
                    shape = (dim, dim)
                shapes.append((site_name(layer, role), shape))
    else:
        raise ConfigurationError(f"unknown topology {topology!r}")
    return shapes


def make_base_weights(shapes, rng: RngState, gain=1.0):
    """Random stand-in for pre-trained weights, ``N(0, gain^2 / cols)``."""
    return {
        sid: gaussian_matrix(rows, cols, gain / np.sqrt(cols), rng)
        for sid, (rows, cols) in shapes
    }


def build_model(
    topology,
    base_weights: dict,
    method="triadapt",
    *,
    n_layers=1,
    dim=None,
    hidden_dim=None,
    alpha=16.0,
    epsilon=1e-6,
    init_std=0.02,
    lora_rank=4,
    dropout=0.0,
    rng=None,
):
    """Wrap each base matrix according to ``method``.

    ``triadapt`` starts every adapter at rank 1. ``lora`` uses rank
    ``lora_rank`` with ``L = I`` and ``U = 0`` held fixed. ``full`` trains the
    matrices directly and ``frozen`` trains nothing.
    """
    if method not in METHODS:
        raise ConfigurationError(f"method must be one of {METHODS}, got {method!r}")
    rng = rng if rng is not None else RngState(0)
    sites = []
    for sid, W0 in base_weights.items():
        if method == "frozen":
            sites.append(FrozenSite(sid, W0))
        elif method == "full":
            sites.append(FullSite(sid, W0))
        else:
            st = init_adapter(W0, alpha, epsilon, init_std, rng, site_id=sid)
            if method == "lora":
                r = lora_rank
                if r > min(st.d, st.n):
                    raise ConfigurationError(f"{sid}: lora_rank {r} exceeds min(d, n)")
                st.A = gaussian_matrix(r, st.n, init_std, rng)
                st.B = np.zeros((st.d, r))
                st.L = np.eye(r)
                st.U = np.zeros((r, r))
                st.norm_record = {"prev_norm": float(np.sqrt(r)), "prev_rank": r}
            sites.append(AdapterSite(st, lora=(method == "lora"), dropout=dropout, rng=rng.spawn(len(sites) + 1)))
    if dim is None:
        dim = next(iter(base_weights.values())).shape[1]
    return ToyModel(topology, sites, n_layers, method, dim, hidden_dim)


def attention_forward(model: ToyModel, X):
    """Block output for tokens ``X`` of shape (seq, dim) or (batch, seq, dim)."""
    if model.topology != "attention_block":
        raise ConfigurationError("attention_forward needs an attention_block model")
    X = np.asarray(X, dtype=np.float64)
    squeeze = X.ndim == 2
    Y, _ = model.forward(X)
    return Y[0] if squeeze else Y
