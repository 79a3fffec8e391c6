"""
Reference oracles for the fixture operators.

Each oracle is the plain formula over dense float64 arrays; results are cast
to the dtype of the oracle's primary input. Nothing here touches the DSL
interpreter or its primitive numerics.
"""

from typing import Callable, Dict, Mapping, Optional

import numpy as np

from adsl_diagnostics import ComparisonError
from adsl_vm import TensorValue

ORACLES: Dict[str, 'Oracle'] = {}


class Oracle:
    def __init__(self, name: str, inputs, fn: Callable, defaults: Mapping[str, float]):
        self.name = name
        self.inputs = tuple(inputs)
        self.fn = fn
        self.defaults = dict(defaults)

    def __call__(self, inputs: Mapping[str, TensorValue], params: Optional[Mapping[str, float]] = None):
        missing = [n for n in self.inputs if n not in inputs]
        if missing:
            raise ComparisonError('{} needs inputs {}'.format(self.name, ', '.join(missing)))
        arrays = {n: inputs[n].to_array().astype(np.float64) for n in self.inputs}
        shapes = {arrays[n].shape for n in self.inputs if n not in ('gamma', 'beta')}
        if len(shapes) > 1:
            raise ComparisonError('{} inputs disagree in shape: {}'.format(self.name, sorted(shapes)))
        settings = dict(self.defaults)
        settings.update(params or {})
        dtype = inputs[self.inputs[0]].dtype
        with np.errstate(over='ignore'):
            results = self.fn(**arrays, **settings)
        return {name: TensorValue.from_array(value, dtype) for name, value in results.items()}


def oracle(name: str, *inputs: str, **defaults):
    def register(fn):
        ORACLES[name] = Oracle(name, inputs, fn, defaults)
        return fn
    return register


def reference_eval(fixture_id: str, inputs: Mapping[str, TensorValue],
                   params: Optional[Mapping[str, float]] = None) -> Dict[str, TensorValue]:
    if fixture_id not in ORACLES:
        raise KeyError('no reference oracle named {}'.format(fixture_id))
    return ORACLES[fixture_id](inputs, params)


# activation

@oracle('relu', 'x')
def _relu(x):
    return {'y': np.maximum(x, 0.0)}


@oracle('leaky_relu', 'x', alpha=0.01)
def _leaky_relu(x, alpha):
    return {'y': np.where(x > 0, x, alpha * x)}


@oracle('sigmoid', 'x')
def _sigmoid(x):
    return {'y': 1.0 / (1.0 + np.exp(-x))}


@oracle('softmax', 'x')
def _softmax(x):
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return {'y': e / e.sum(axis=-1, keepdims=True)}


# loss

@oracle('mse_loss', 'a', 'b')
def _mse_loss(a, b):
    return {'loss': np.array([np.mean((a - b) ** 2)])}


@oracle('hinge_loss', 'pred', 'target')
def _hinge_loss(pred, target):
    return {'loss': np.array([np.mean(np.maximum(0.0, 1.0 - pred * target))])}


# math

@oracle('cumsum', 'x')
def _cumsum(x):
    return {'y': np.cumsum(x, axis=-1)}


@oracle('masked_cumsum', 'x', 'mask')
def _masked_cumsum(x, mask):
    return {'y': np.cumsum(np.where(mask != 0, x, 0.0), axis=-1)}


# normalization

@oracle('layernorm', 'x', 'gamma', 'beta', eps=1e-5)
def _layernorm(x, gamma, beta, eps):
    mean = x.mean(axis=-1, keepdims=True)
    var = ((x - mean) ** 2).mean(axis=-1, keepdims=True)
    return {'y': (x - mean) / np.sqrt(var + eps) * gamma + beta}


@oracle('rmsnorm', 'x', 'gamma', eps=1e-5)
def _rmsnorm(x, gamma, eps):
    return {'y': x / np.sqrt((x ** 2).mean(axis=-1, keepdims=True) + eps) * gamma}


# optimizer

@oracle('sgd', 'param', 'grad', lr=0.1)
def _sgd(param, grad, lr):
    return {'param_out': param - lr * grad}


@oracle('adam', 'param', 'grad', 'm', 'v', lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8)
def _adam(param, grad, m, v, lr, beta1, beta2, eps):
    # first step: bias corrections use t = 1
    m_new = beta1 * m + (1 - beta1) * grad
    v_new = beta2 * v + (1 - beta2) * grad ** 2
    m_hat = m_new / (1 - beta1)
    v_hat = v_new / (1 - beta2)
    return {
        'param_out': param - lr * m_hat / (np.sqrt(v_hat) + eps),
        'm_out': m_new,
        'v_out': v_new,
    }


# reduce

@oracle('reduce_sum', 'x')
def _reduce_sum(x):
    return {'y': x.sum(axis=-1)}


@oracle('reduce_max', 'x')
def _reduce_max(x):
    return {'y': x.max(axis=-1)}


# pooling

def _windows(x, kernel):
    out_len = x.shape[-1] // kernel
    return x[..., :out_len * kernel].reshape(x.shape[:-1] + (out_len, kernel))


@oracle('avg_pool1d', 'x', kernel=2)
def _avg_pool1d(x, kernel):
    return {'y': _windows(x, int(kernel)).mean(axis=-1)}


@oracle('max_pool1d', 'x', kernel=4)
def _max_pool1d(x, kernel):
    return {'y': _windows(x, int(kernel)).max(axis=-1)}
