import numpy as np

from gated_nmt import tensor as T


def numeric_grad(f, param, h=1e-5):
    """Central finite differences of the scalar f() w.r.t. one parameter tensor."""
    num = np.zeros_like(param.data)
    it = np.nditer(param.data, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = param.data[idx]
        param.data[idx] = orig + h
        lp = f().item()
        param.data[idx] = orig - h
        lm = f().item()
        param.data[idx] = orig
        num[idx] = (lp - lm) / (2.0 * h)
    return num


def rel_err(a, b, floor=1e-4):
    """Elementwise |a-b| / max(|a|,|b|,floor); floor keeps near-zero grads honest."""
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return np.abs(a - b) / denom


def assert_grads_match(f, params, h=1e-5, tol=1e-4):
    """f() rebuilds the graph and returns the scalar loss; checks every param."""
    for p in params:
        p.zero_grad()
    T.backward(f())
    for p in params:
        assert p.grad is not None, "parameter missing grad after backward"
        analytic = p.grad.copy()
        num = numeric_grad(f, p, h=h)
        worst = rel_err(analytic, num).max()
        assert worst < tol, f"gradient mismatch: max rel err {worst:.3e} >= {tol}"
