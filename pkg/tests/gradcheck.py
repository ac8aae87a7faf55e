"""Central finite-difference gradient checking, float64."""

import numpy as np

from stnowcast import tensor as T


def numeric_gradient(fn, x, step=1e-5):
    """d fn / d x by central differences; fn maps the array to a scalar."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = fn(x)
        flat[i] = orig - step
        lo = fn(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * step)
    return grad


def check_gradients(build_loss, arrays, step=1e-5, rtol=1e-4):
    """Compare analytic grads against finite differences.

    `arrays` is a dict name -> float64 numpy array. `build_loss` receives a
    dict name -> Tensor (requires_grad) and returns a scalar Tensor.
    Asserts relative error <= rtol per input.
    """
    tensors = {k: T.Tensor(np.asarray(v, dtype=np.float64), requires_grad=True)
               for k, v in arrays.items()}
    loss = build_loss(tensors)
    loss.backward()
    for name, t in tensors.items():
        assert t.grad is not None, f"no gradient for {name}"

        def scalar_fn(x, name=name):
            probe = {k: T.Tensor(v.data.copy(), requires_grad=False)
                     for k, v in tensors.items()}
            probe[name] = T.Tensor(x.copy(), requires_grad=False)
            return float(build_loss(probe).data)

        num = numeric_gradient(scalar_fn, t.data, step=step)
        scale = max(np.abs(num).max(), np.abs(t.grad).max(), 1e-8)
        err = np.abs(t.grad - num).max() / scale
        assert err <= rtol, f"gradient mismatch for {name}: rel err {err:.2e}"
