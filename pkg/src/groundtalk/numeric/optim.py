import numpy as np

from ..errors import TrainingDivergence

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


def zero_grads(params):
    for p in params:
        p.zero_grad()


def global_grad_norm(params):
    return float(np.sqrt(np.sum([np.dot(p.grad.ravel(), p.grad.ravel()) for p in params])))


def clip_grad_norm(params, max_norm=5.0):
    """Rescale gradients in place so their global L2 norm is at most max_norm.

    Returns the norm before clipping.
    """
    params = list(params)
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise TrainingDivergence("non-finite gradient", parameter=p.name)
    norm = global_grad_norm(params)
    if norm > max_norm:
        scale = max_norm / norm
        for p in params:
            p.grad *= scale
    return norm


def adam_step(params, learning_rate, beta1=BETA1, beta2=BETA2, eps=EPS):
    """Bias-corrected Adam update on every block, then zero the gradients."""
    params = list(params)
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise TrainingDivergence("non-finite gradient", parameter=p.name)
    for p in params:
        g = p.grad
        p.step += 1
        p.m *= beta1
        p.m += (1.0 - beta1) * g
        p.v *= beta2
        p.v += (1.0 - beta2) * (g * g)
        m_hat = p.m / (1.0 - beta1**p.step)
        v_hat = p.v / (1.0 - beta2**p.step)
        p.data -= learning_rate * m_hat / (np.sqrt(v_hat) + eps)
        p.grad.fill(0.0)
    return params
