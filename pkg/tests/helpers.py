import numpy as np

FD_STEP = 1e-6


def max_fd_error(net, loss_and_grads, step=FD_STEP):
    """Worst ``|analytic - central FD| / (|analytic| + 1e-8)`` over every parameter."""
    _, grads = loss_and_grads()
    worst = 0.0
    for p, g in zip(net.params, grads):
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + step
            up = loss_and_grads()[0]
            p[idx] = orig - step
            down = loss_and_grads()[0]
            p[idx] = orig
            fd = (up - down) / (2 * step)
            worst = max(worst, abs(g[idx] - fd) / (abs(g[idx]) + 1e-8))
    return worst
