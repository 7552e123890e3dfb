"""Adam with per-parameter learning rates and per-parameter step counts."""

import numpy as np


class Adam:
    def __init__(self, lrs, beta1=0.9, beta2=0.999, eps=1e-15):
        self.lrs = dict(lrs)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {}
        self.v = {}
        self.t = {}

    def step(self, params, grads):
        """Update ``params[name]`` in place for every name present in ``grads``."""
        for name, g in grads.items():
            p = params[name]
            if name not in self.m or self.m[name].shape != p.shape:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
                self.t[name] = 0
            self.t[name] += 1
            t = self.t[name]
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * (g * g)
            m_hat = m / (1 - self.beta1 ** t)
            v_hat = v / (1 - self.beta2 ** t)
            p -= self.lrs[name] * m_hat / (np.sqrt(v_hat) + self.eps)

    def remap(self, parent, fresh):
        """Reindex moments after densification; rows marked fresh start from zero."""
        for name in self.m:
            for buf in (self.m, self.v):
                arr = buf[name][parent].copy()
                arr[fresh] = 0.0
                buf[name] = arr
