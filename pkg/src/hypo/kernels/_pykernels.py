"""Pure numpy implementations of the batch kernels.

Used when the compiled extension is unavailable or ``HYPO_PURE_PYTHON=1``.
Formulas mirror ``_ckernels.pyx`` branch for branch.
"""

import numpy as np

DPO, REF_FREE, HYPO_HARD, HYPO_SOFT = 0, 1, 2, 3


def _softplus(x):
    out = np.empty_like(x)
    pos = x > 0
    xp = x[pos]
    out[pos] = xp + np.log1p(np.exp(-xp))
    out[~pos] = np.log1p(np.exp(x[~pos]))
    return out


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    z = np.exp(x[~pos])
    out[~pos] = z / (1.0 + z)
    return out


def objective_terms(code, dtheta, dref, beta, gamma, alpha, h):
    dtheta = np.ascontiguousarray(dtheta, dtype=np.float64)
    dref = np.ascontiguousarray(dref, dtype=np.float64)
    if code == DPO:
        eff = dref.copy()
    elif code == REF_FREE:
        eff = np.zeros_like(dtheta)
    elif code == HYPO_HARD:
        eff = np.maximum(dref, gamma)
    elif code == HYPO_SOFT:
        eff = np.maximum(dref, gamma) + np.log1p(np.exp(-alpha * np.abs(dref - gamma))) / alpha
    else:
        raise ValueError(f"unknown objective code {code}")
    arg = beta * (dtheta - eff - h)
    return _softplus(-arg), _sigmoid(-arg), eff


def tabular_margins(logits, prompts, chosen, rejected):
    return logits[prompts, chosen] - logits[prompts, rejected]


def scatter_pairs(grad, prompts, chosen, rejected, coef):
    """grad[x, c] += coef; grad[x, r] -= coef, accumulated in record order."""
    n_resp = grad.shape[1]
    size = grad.size
    flat = grad.reshape(-1)
    flat += np.bincount(prompts * n_resp + chosen, weights=coef, minlength=size)
    flat -= np.bincount(prompts * n_resp + rejected, weights=coef, minlength=size)
