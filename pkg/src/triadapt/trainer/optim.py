"""First-order optimisers with decoupled weight decay.

Parameters are addressed as ``(site_id, name)``. Because adapter matrices
change shape when a site grows, moment buffers are zero-padded to the new
shape with the old values kept in their top-left block.
"""

from __future__ import annotations

import numpy as np

from ..exceptions import ConfigurationError

__all__ = ["SGDW", "AdamW", "make_optimizer", "linear_decay"]


def linear_decay(base_lr, t, T):
    """Learning rate at step ``t`` (1-based): falls linearly to ``base_lr / T``."""
    return base_lr * (T - t + 1) / T


def _pad_to(buf, shape):
    if buf.shape == shape:
        return buf
    out = np.zeros(shape)
    out[: buf.shape[0], : buf.shape[1]] = buf
    return out


class SGDW:
    def __init__(self, weight_decay=0.0):
        self.weight_decay = float(weight_decay)

    def step(self, sites, grads, lr):
        for site in sites:
            g_site = grads.get(site.site_id)
            if not g_site:
                continue
            for name, p in site.params().items():
                g = g_site[name]
                site.set_param(name, p - lr * g - lr * self.weight_decay * p)
            site.apply_masks()


class AdamW:
    def __init__(self, weight_decay=0.0, beta1=0.9, beta2=0.999, eps=1e-8):
        self.weight_decay = float(weight_decay)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, sites, grads, lr):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for site in sites:
            g_site = grads.get(site.site_id)
            if not g_site:
                continue
            for name, p in site.params().items():
                g = g_site[name]
                key = (site.site_id, name)
                m = _pad_to(self.m.get(key, np.zeros_like(p)), p.shape)
                v = _pad_to(self.v.get(key, np.zeros_like(p)), p.shape)
                m = b1 * m + (1.0 - b1) * g
                v = b2 * v + (1.0 - b2) * g * g
                self.m[key], self.v[key] = m, v
                update = (m / c1) / (np.sqrt(v / c2) + self.eps)
                site.set_param(name, p - lr * update - lr * self.weight_decay * p)
            site.apply_masks()


def make_optimizer(name, weight_decay=0.0, beta1=0.9, beta2=0.999):
    if name == "sgd":
        return SGDW(weight_decay)
    if name == "adamw":
        return AdamW(weight_decay, beta1, beta2)
    raise ConfigurationError(f"unknown optimizer {name!r}")
