"""Multilayer perceptron Q-network with hand-written gradients

Layers are dense with ReLU on the hidden layers and an identity head. Weights
are stored (fan_in, fan_out) so a batch forward pass is x @ W + b.
"""
import io
import json
import logging
from dataclasses import dataclass
from typing import List

import numpy as np

from fxrl.errors import ContractError, TrainingFault

logger = logging.getLogger(__name__)

HUBER_DELTA = 1.0
MAX_GRAD_NORM = 10.0

CHECKPOINT_MAGIC = b'FXRL-CHECKPOINT'
CHECKPOINT_VERSION = 1


@dataclass
class QNetworkParams:
    """Weights and biases, one entry per layer"""
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ContractError("Weights and biases have different depths")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if b.shape != (w.shape[1],):
                raise ContractError(f"Layer {i}: bias {b.shape} does not " +
                                    f"match weight {w.shape}")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ContractError(f"Layer {i}: input {w.shape[0]} does not " +
                                    "match previous output " +
                                    f"{self.weights[i - 1].shape[1]}")

    @property
    def dims(self):
        """Layer widths from input to output"""
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def input_dim(self):
        return self.weights[0].shape[0]

    @property
    def n_actions(self):
        return self.weights[-1].shape[1]

    def arrays(self):
        """Weights then biases, layer by layer"""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self):
        """Deep copy"""
        return QNetworkParams([w.copy() for w in self.weights],
                              [b.copy() for b in self.biases])

    def map(self, func, *others):
        """Apply func array-wise with matching params, return new params"""
        weights = [func(w, *[o.weights[i] for o in others])
                   for i, w in enumerate(self.weights)]
        biases = [func(b, *[o.biases[i] for o in others])
                  for i, b in enumerate(self.biases)]
        return QNetworkParams(weights, biases)

    def equals(self, other):
        """Exact equality of shapes and values"""
        return self.dims == other.dims and all(
            np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))


def init_params(dims, rng):
    """Uniform init in +/- sqrt(6 / (fan_in + fan_out)), zero biases

    :param dims: (list of int) [d_flat, hidden..., n_actions]
    :param rng: (numpy.random.Generator)
    """
    if len(dims) < 2:
        raise ContractError(f"Need at least input and output dims, got {dims}")
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return QNetworkParams(weights, biases)


def zeros_like(params):
    return params.map(np.zeros_like)


def _as_batch(params, states):
    """Return a 2D float64 batch and whether the input was a single state"""
    states = np.asarray(states, dtype=np.float64)
    single = states.ndim == 1
    batch = states[None, :] if single else states
    if batch.ndim != 2 or batch.shape[1] != params.input_dim:
        raise ContractError(f"State width {batch.shape[-1]} does not match " +
                            f"network input {params.input_dim}")
    return batch, single


def _forward(params, batch):
    """Forward pass keeping the pre-activations and activations"""
    activations = [batch]
    pre_activations = []
    n_layers = len(params.weights)
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = activations[-1] @ w + b
        pre_activations.append(z)
        activations.append(np.maximum(z, 0.0) if i < n_layers - 1 else z)
    return pre_activations, activations


def q_forward(params, states):
    """Q-values for one state (n_a,) or a batch (B, n_a)"""
    batch, single = _as_batch(params, states)
    q = _forward(params, batch)[1][-1]
    return q[0] if single else q


def huber(errors, delta=HUBER_DELTA):
    """Elementwise Huber loss"""
    abs_err = np.abs(errors)
    return np.where(abs_err <= delta, 0.5 * errors ** 2,
                    delta * (abs_err - 0.5 * delta))


def loss_and_grads(params, states, actions, targets, delta=HUBER_DELTA):
    """Mean Huber loss over the taken-action q-values and its gradients

    :returns: (float, QNetworkParams)
    """
    batch, _ = _as_batch(params, states)
    actions = np.asarray(actions, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.float64)
    n = batch.shape[0]
    if actions.shape != (n,) or targets.shape != (n,):
        raise ContractError("actions and targets must have one entry per state")

    pre_activations, activations = _forward(params, batch)
    rows = np.arange(n)
    errors = activations[-1][rows, actions] - targets
    loss = float(huber(errors, delta).mean())

    # dL/dq is non-zero only at the taken action
    dout = np.zeros_like(activations[-1])
    dout[rows, actions] = np.clip(errors, -delta, delta) / n

    grad_w = [None] * len(params.weights)
    grad_b = [None] * len(params.weights)
    for i in reversed(range(len(params.weights))):
        grad_w[i] = activations[i].T @ dout
        grad_b[i] = dout.sum(axis=0)
        if i:
            dout = (dout @ params.weights[i].T) * (pre_activations[i - 1] > 0.0)

    return loss, QNetworkParams(grad_w, grad_b)


def global_norm(grads):
    """L2 norm over every gradient array"""
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.arrays())))


def clip_by_global_norm(grads, max_norm=MAX_GRAD_NORM):
    """Scale the gradients so their global norm is at most max_norm

    :returns: (QNetworkParams, float) clipped grads and the norm before clipping
    """
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        return grads.map(lambda g: g * scale), norm
    return grads, norm


@dataclass
class AdamState:
    """First and second moments, step count and hyperparameters"""
    m: QNetworkParams
    v: QNetworkParams
    step: int = 0
    lr: float = 2.5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1.0e-8

    def copy(self):
        return AdamState(self.m.copy(), self.v.copy(), self.step, self.lr,
                         self.beta1, self.beta2, self.eps)


def init_adam(params, lr=2.5e-4, beta1=0.9, beta2=0.999, eps=1.0e-8):
    return AdamState(zeros_like(params), zeros_like(params), 0, lr, beta1,
                     beta2, eps)


def adam_update(params, grads, opt):
    """One bias-corrected Adam step

    :returns: (QNetworkParams, AdamState) new objects, the inputs are untouched
    """
    step = opt.step + 1
    m = opt.m.map(lambda m_, g: opt.beta1 * m_ + (1.0 - opt.beta1) * g, grads)
    v = opt.v.map(lambda v_, g: opt.beta2 * v_ + (1.0 - opt.beta2) * g * g,
                  grads)
    m_corr = 1.0 - opt.beta1 ** step
    v_corr = 1.0 - opt.beta2 ** step
    new_params = params.map(
        lambda p, m_, v_: p - opt.lr * (m_ / m_corr) /
        (np.sqrt(v_ / v_corr) + opt.eps), m, v)
    return new_params, AdamState(m, v, step, opt.lr, opt.beta1, opt.beta2,
                                 opt.eps)


def train_step(params, opt, states, actions, targets,
               max_grad_norm=MAX_GRAD_NORM, delta=HUBER_DELTA):
    """Huber loss, global-norm clipping and an Adam update

    :returns: (QNetworkParams, AdamState, float) new params, optimizer state
    and the loss before the update

    Raises TrainingFault when the loss or the gradients are not finite.
    """
    loss, grads = loss_and_grads(params, states, actions, targets, delta)
    grads, norm = clip_by_global_norm(grads, max_grad_norm)
    if not (np.isfinite(loss) and np.isfinite(norm)):
        raise TrainingFault(f"Non-finite loss {loss} or grad norm {norm}",
                            {'loss': loss, 'grad_norm': norm,
                             'adam_step': opt.step})
    new_params, new_opt = adam_update(params, grads, opt)
    return new_params, new_opt, loss


def save_checkpoint(path, online, target, opt, meta=None):
    """Write a deterministic checkpoint

    Layout: a magic line, one line of sorted-key JSON describing the arrays,
    then the arrays as consecutive .npy blobs.
    """
    named = []
    for prefix, params in [('online', online), ('target', target),
                           ('adam_m', opt.m), ('adam_v', opt.v)]:
        for i, (w, b) in enumerate(zip(params.weights, params.biases)):
            named += [(f'{prefix}.w{i}', w), (f'{prefix}.b{i}', b)]

    header = {
        'version': CHECKPOINT_VERSION,
        'dims': online.dims,
        'arrays': [[name, list(arr.shape)] for name, arr in named],
        'adam': {'step': opt.step, 'lr': opt.lr, 'beta1': opt.beta1,
                 'beta2': opt.beta2, 'eps': opt.eps},
        'meta': meta or {},
    }
    with open(path, 'wb') as file:
        file.write(CHECKPOINT_MAGIC + b'\n')
        file.write(json.dumps(header, sort_keys=True).encode() + b'\n')
        for _, arr in named:
            np.save(file, np.ascontiguousarray(arr, dtype=np.float64),
                    allow_pickle=False)
    logger.info("...checkpoint written to %s", path)


def load_checkpoint(path):
    """Read a checkpoint written by save_checkpoint

    :returns: (dict) with online, target (QNetworkParams), opt (AdamState)
    and meta
    """
    with open(path, 'rb') as file:
        if file.readline().rstrip(b'\n') != CHECKPOINT_MAGIC:
            raise ContractError(f"{path} is not a checkpoint")
        header = json.loads(file.readline())
        if header['version'] != CHECKPOINT_VERSION:
            raise ContractError("Unsupported checkpoint version " +
                                f"{header['version']}")
        data = io.BytesIO(file.read())

    arrays = {}
    for name, shape in header['arrays']:
        arr = np.load(data, allow_pickle=False)
        if list(arr.shape) != shape:
            raise ContractError(f"{name}: shape {arr.shape} != {shape}")
        arrays[name] = arr

    n_layers = len(header['dims']) - 1

    def params(prefix):
        return QNetworkParams(
            [arrays[f'{prefix}.w{i}'] for i in range(n_layers)],
            [arrays[f'{prefix}.b{i}'] for i in range(n_layers)])

    adam = header['adam']
    opt = AdamState(params('adam_m'), params('adam_v'), adam['step'],
                    adam['lr'], adam['beta1'], adam['beta2'], adam['eps'])
    return {'online': params('online'), 'target': params('target'),
            'opt': opt, 'meta': header['meta']}
