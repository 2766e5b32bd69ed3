"""Hand-rolled textbook PPO in numpy, used as an independent reference.

Actor: one table of 2x2 logits with row softmax. Critic: the trainer's
two-hidden-layer tanh MLP over (context one-hot, state one-hot, P row),
with backpropagation written out by hand. Plain SGD, full-batch epochs,
one-step advantages, no normalization or regularizers.
"""
from __future__ import annotations

import numpy as np


def softmax_rows(logits):
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


class ReferencePpo:
    def __init__(self, table, critic_params, gamma, eps, actor_lr, critic_lr, epochs):
        self.table = np.array(table, dtype=float)          # (2, 2)
        self.W1, self.b1, self.W2, self.b2, self.W3, self.b3 = (np.array(p, dtype=float)
                                                               for p in critic_params)
        self.gamma, self.eps = gamma, eps
        self.actor_lr, self.critic_lr, self.epochs = actor_lr, critic_lr, epochs

    @property
    def P(self):
        return softmax_rows(self.table)

    def critic_inputs(self, s, P):
        n = len(s)
        onehot = np.eye(2)[s]
        return np.concatenate([np.ones((n, 1)), onehot, P[s]], axis=1)

    def value(self, x):
        h1 = np.tanh(x @ self.W1.T + self.b1)
        h2 = np.tanh(h1 @ self.W2.T + self.b2)
        return (h2 @ self.W3.T + self.b3)[:, 0], (h1, h2)

    def critic_grads(self, x, y):
        v, (h1, h2) = self.value(x)
        n = len(y)
        dv = (v - y)[:, None] / n                      # d(0.5 mean (v-y)^2)/dv
        gW3 = dv.T @ h2
        gb3 = dv.sum(axis=0)
        dh2 = dv @ self.W3 * (1 - h2 ** 2)
        gW2 = dh2.T @ h1
        gb2 = dh2.sum(axis=0)
        dh1 = dh2 @ self.W2 * (1 - h1 ** 2)
        gW1 = dh1.T @ x
        gb1 = dh1.sum(axis=0)
        return gW1, gb1, gW2, gb2, gW3, gb3

    def update(self, s, s_next, rewards, dones, old_prob):
        s, s_next = np.asarray(s), np.asarray(s_next)
        r, d = np.asarray(rewards, float), np.asarray(dones, float)
        x0 = self.critic_inputs(s, self.P)
        v, _ = self.value(x0)
        v_next = np.zeros_like(v)
        v_next[:-1] = v[1:]
        v_next = np.where(d > 0, 0.0, v_next)
        targets = r + self.gamma * v_next
        adv = targets - v
        n = len(s)
        for _ in range(self.epochs):
            P = self.P
            prob = P[s, s_next]
            ratio = prob / old_prob
            inside = (ratio >= 1 - self.eps) & (ratio <= 1 + self.eps)
            unclipped_smaller = ratio * adv < np.clip(ratio, 1 - self.eps, 1 + self.eps) * adv
            dratio = np.where(inside | unclipped_smaller, adv, 0.0) / n
            # d prob / d logits[s, k] = prob * (1[k = s_next] - P[s, k])
            g_table = np.zeros_like(self.table)
            for i in range(n):
                row = -P[s[i]] * prob[i]
                row[s_next[i]] += prob[i]
                g_table[s[i]] += dratio[i] / old_prob[i] * row
            cg = self.critic_grads(self.critic_inputs(s, P), targets)
            self.table += self.actor_lr * g_table
            for name, g in zip(("W1", "b1", "W2", "b2", "W3", "b3"), cg):
                setattr(self, name, getattr(self, name) - self.critic_lr * g)
