"""Deep Q-Network: numpy MLP with hand-written backprop, replay memory, target network."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_generator, check_observations
from .env import ObservationFilter
from .errors import BufferTooSmall, ConfigError, DimensionMismatch, IoFailure

N_ACTIONS = 10
CHECKPOINT_MAGIC = b"HVDQ"
CHECKPOINT_VERSION = 1


class MLPParams:
    """Weights of a fully connected network stored in one flat float64 vector.

    ``layers[k]`` is a ``(W, b)`` pair of views into :attr:`flat`, with ``W``
    of shape ``(fan_in, fan_out)`` so that a layer computes ``x @ W + b``.
    The flat layout is layer by layer, ``W`` row-major then ``b``.
    """

    def __init__(self, sizes, flat=None):
        self.sizes = tuple(int(s) for s in sizes)
        if len(self.sizes) < 2:
            raise DimensionMismatch("an MLP needs at least an input and an output size")
        n = sum(i * o + o for i, o in zip(self.sizes[:-1], self.sizes[1:]))
        if flat is None:
            flat = np.zeros(n)
        flat = np.ascontiguousarray(flat, dtype=np.float64)
        if flat.shape != (n,):
            raise DimensionMismatch(f"expected {n} parameters for sizes {self.sizes}, got {flat.shape}")
        self.flat = flat
        self.layers = []
        pos = 0
        for i, o in zip(self.sizes[:-1], self.sizes[1:]):
            w = flat[pos:pos + i * o].reshape(i, o)
            pos += i * o
            b = flat[pos:pos + o]
            pos += o
            self.layers.append((w, b))

    @classmethod
    def from_layers(cls, layers):
        sizes = [np.shape(layers[0][0])[0]] + [np.shape(w)[1] for w, _ in layers]
        flat = np.concatenate([np.concatenate([np.ravel(w), np.ravel(b)]) for w, b in layers])
        return cls(sizes, flat)

    @classmethod
    def glorot(cls, sizes, rng):
        """Uniform in +-sqrt(6 / (fan_in + fan_out)) for weights, zero biases."""
        params = cls(sizes)
        for w, _ in params.layers:
            limit = np.sqrt(6.0 / (w.shape[0] + w.shape[1]))
            w[...] = rng.uniform(-limit, limit, w.shape)
        return params

    def copy(self):
        return MLPParams(self.sizes, self.flat.copy())

    def zeros_like(self):
        return MLPParams(self.sizes)

    def __len__(self):
        return self.flat.size


def forward(params, x, cache=None):
    """Q-values for one input vector (shape ``(n_actions,)``) or a batch (``(B, n_actions)``).

    ReLU after every layer but the last. If ``cache`` is a list, the layer
    inputs and pre-activations are appended to it for :func:`backward`.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.sizes[0]:
        raise DimensionMismatch(f"input has {x.shape[-1]} features, network expects {params.sizes[0]}")
    h = x
    last = len(params.layers) - 1
    for k, (w, b) in enumerate(params.layers):
        z = h @ w + b
        if cache is not None:
            cache.append((h, z))
        h = z if k == last else np.maximum(z, 0.0)
    return h


def _forward_unchecked(layers, h):
    last = len(layers) - 1
    for k, (w, b) in enumerate(layers):
        h = h @ w + b
        if k != last:
            h = np.maximum(h, 0.0)
    return h


def backward(params, cache, d_out, out=None):
    """Gradient of ``sum(d_out * output)`` with respect to every parameter.

    ``out`` is an optional preallocated :class:`MLPParams` to write into.
    """
    grads = params.zeros_like() if out is None else out
    delta = d_out
    for k in range(len(params.layers) - 1, -1, -1):
        h, z = cache[k]
        if k != len(params.layers) - 1:
            delta = delta * (z > 0)
        gw, gb = grads.layers[k]
        gw[...] = h.T @ delta
        gb[...] = delta.sum(axis=0)
        if k:
            delta = delta @ params.layers[k][0].T
    return grads


def _loss_grad(err, loss):
    if loss == "huber":
        return np.clip(err, -1.0, 1.0)
    return 2.0 * err


def batch_loss(params, batch, y, loss="squared"):
    if not isinstance(batch, Batch):
        batch = Batch.from_transitions(batch)
    q = forward(params, batch.s)[np.arange(len(batch)), batch.a]
    err = q - y
    if loss == "huber":
        a = np.abs(err)
        return float(np.mean(np.where(a <= 1.0, 0.5 * err**2, a - 0.5)))
    return float(np.mean(err**2))


def gradient(params, batch, y, loss="squared", out=None):
    """Gradient of the mean over the batch of ``(Q(s_i, a_i) - y_i)^2``.

    Only the taken action's output contributes for each sample. ``batch`` is a
    :class:`Batch` or a sequence of :class:`Transition`.
    """
    if not isinstance(batch, Batch):
        batch = Batch.from_transitions(batch)
    states = np.atleast_2d(batch.s)
    actions = batch.a
    y = np.asarray(y, dtype=np.float64)
    if not (len(states) == len(actions) == len(y)):
        raise DimensionMismatch("states, actions and targets must have the same length")
    cache = []
    q = forward(params, states, cache)
    rows = np.arange(len(actions))
    d_out = np.zeros_like(q)
    d_out[rows, actions] = _loss_grad(q[rows, actions] - y, loss) / len(actions)
    return backward(params, cache, d_out, out)


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: int
    r: float
    s_next: np.ndarray
    terminal: bool = False

    def __post_init__(self):
        if not 0 <= self.a < N_ACTIONS:
            raise ConfigError(f"action {self.a} outside [0, {N_ACTIONS - 1}]")
        if not np.isfinite(self.r):
            raise ConfigError("reward must be finite")


class Batch:
    """Column-wise minibatch."""

    __slots__ = ("s", "a", "r", "s_next", "terminal")

    def __init__(self, s, a, r, s_next, terminal):
        self.s, self.a, self.r, self.s_next, self.terminal = s, a, r, s_next, terminal

    def __len__(self):
        return len(self.a)

    @classmethod
    def from_transitions(cls, transitions):
        transitions = list(transitions)
        return cls(
            np.array([t.s for t in transitions], dtype=np.float64),
            np.array([t.a for t in transitions], dtype=np.int64),
            np.array([t.r for t in transitions], dtype=np.float64),
            np.array([t.s_next for t in transitions], dtype=np.float64),
            np.array([t.terminal for t in transitions], dtype=bool),
        )


def compute_targets(batch, target_params, gamma):
    """``y_i = r_i + gamma * max_a' Q_target(s'_i, a')``, or ``r_i`` for terminal transitions."""
    if not isinstance(batch, Batch):
        batch = Batch.from_transitions(batch)
    if len(batch) == 0:
        raise ConfigError("cannot compute targets for an empty batch")
    bootstrap = forward(target_params, batch.s_next).max(axis=1)
    return batch.r + gamma * np.where(batch.terminal, 0.0, bootstrap)


class ReplayBuffer:
    """Fixed-capacity FIFO transition store with uniform sampling."""

    def __init__(self, capacity, obs_dim):
        if capacity < 1:
            raise ConfigError("replay capacity must be >= 1")
        self.capacity = int(capacity)
        self.obs_dim = int(obs_dim)
        self.s = np.zeros((self.capacity, self.obs_dim))
        self.s_next = np.zeros((self.capacity, self.obs_dim))
        self.a = np.zeros(self.capacity, dtype=np.int64)
        self.r = np.zeros(self.capacity)
        self.terminal = np.zeros(self.capacity, dtype=bool)
        self.cursor = 0
        self.fill = 0

    def __len__(self):
        return self.fill

    def push(self, s, a, r, s_next, terminal=False):
        i = self.cursor
        self.s[i] = s
        self.a[i] = a
        self.r[i] = r
        self.s_next[i] = s_next
        self.terminal[i] = terminal
        self.cursor = (i + 1) % self.capacity
        self.fill = min(self.fill + 1, self.capacity)

    def sample_indices(self, batch_size, rng):
        if self.fill < batch_size:
            raise BufferTooSmall(f"buffer holds {self.fill} transitions, minibatch needs {batch_size}")
        return rng.choice(self.fill, size=batch_size, replace=False)

    def sample(self, batch_size, rng):
        idx = self.sample_indices(batch_size, rng)
        return Batch(self.s[idx], self.a[idx], self.r[idx], self.s_next[idx], self.terminal[idx])


class Adam:
    def __init__(self, size, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        _adam_kernel(params.flat, grads.flat, self.m, self.v, self.lr, self.beta1, self.beta2,
                     self.eps, 1 - self.beta1**self.t, 1 - self.beta2**self.t)


@numba.njit(cache=True)
def _adam_kernel(theta, g, m, v, lr, b1, b2, eps, bias1, bias2):
    for i in range(theta.size):
        m[i] = b1 * m[i] + (1 - b1) * g[i]
        v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i]
        theta[i] -= lr * (m[i] / bias1) / (np.sqrt(v[i] / bias2) + eps)


class SGD:
    def __init__(self, size, lr=1e-4):
        self.lr = lr

    def step(self, params, grads):
        params.flat -= self.lr * grads.flat


def make_optimizer(name, size, lr):
    if name == "adam":
        return Adam(size, lr)
    if name == "sgd":
        return SGD(size, lr)
    raise ConfigError(f"optimizer must be 'adam' or 'sgd', got {name!r}")


def linear_schedule(step, total_steps, fraction=0.1, start=1.0, end=0.05):
    """Linear decay from ``start`` to ``end`` over the first ``fraction`` of ``total_steps``."""
    horizon = fraction * total_steps
    if horizon <= 0:
        return end
    progress = min(step / horizon, 1.0)
    return start + progress * (end - start)


class MinMaxNormalizer(TransformerMixin, BaseEstimator):
    """Fixed min-max scaling to ``[0, 1]`` from declared variable ranges (no data fitting)."""

    def __init__(self, lo=None, hi=None):
        self.lo = lo
        self.hi = hi

    def fit(self, X=None, y=None):
        lo = np.asarray(self.lo, dtype=np.float64)
        hi = np.asarray(self.hi, dtype=np.float64)
        if lo.shape != hi.shape or np.any(lo >= hi):
            raise ConfigError("normalizer ranges must satisfy lo < hi per variable")
        self.lo_, self.scale_ = lo, hi - lo
        self.n_features_in_ = lo.size
        return self

    def transform(self, X):
        return (np.asarray(X, dtype=np.float64) - self.lo_) / self.scale_

    def inverse_transform(self, X):
        return np.asarray(X, dtype=np.float64) * self.scale_ + self.lo_


class DQNAgent(BaseEstimator):
    """DQN with uniform replay and a periodically synchronised target network.

    ``fit`` takes an :class:`~hvacrl.env.HVACEnv`; ``predict`` maps full
    observation vectors to greedy actions. Step counters (``train_frequency``,
    ``target_sync_interval``, ``learning_starts``) count environment steps
    across all episodes.
    """

    def __init__(self, lr=1e-4, gamma=0.99, batch_size=32, buffer_capacity=100_000,
                 target_sync_interval=10_000, train_frequency=4, learning_starts=1000,
                 eps_fraction=0.1, eps_initial=1.0, eps_final=0.05,
                 optimizer="adam", loss="squared", hidden=(64, 64), episodes=50,
                 groups=("Env", "Energy", "Action", "Aux"), random_state=None):
        self.lr = lr
        self.gamma = gamma
        self.batch_size = batch_size
        self.buffer_capacity = buffer_capacity
        self.target_sync_interval = target_sync_interval
        self.train_frequency = train_frequency
        self.learning_starts = learning_starts
        self.eps_fraction = eps_fraction
        self.eps_initial = eps_initial
        self.eps_final = eps_final
        self.optimizer = optimizer
        self.loss = loss
        self.hidden = hidden
        self.episodes = episodes
        self.groups = groups
        self.random_state = random_state

    def _validate(self):
        if self.lr <= 0 or self.gamma <= 0:
            raise ConfigError("lr and gamma must be > 0")
        if self.batch_size < 1 or self.batch_size > self.buffer_capacity:
            raise ConfigError("batch_size must lie in [1, buffer_capacity]")
        if self.target_sync_interval < 1 or self.train_frequency < 1:
            raise ConfigError("target_sync_interval and train_frequency must be >= 1")
        if self.loss not in ("squared", "huber"):
            raise ConfigError(f"loss must be 'squared' or 'huber', got {self.loss!r}")

    def _setup(self, obs_spec, n_actions, rng):
        self._validate()
        self.filter_ = ObservationFilter(obs_spec, tuple(self.groups)).fit()
        sub = self.filter_.spec_
        self.normalizer_ = MinMaxNormalizer(sub.lo, sub.hi).fit()
        sizes = (len(sub), *self.hidden, n_actions)
        self.params_ = MLPParams.glorot(sizes, rng)
        self.target_params_ = self.params_.copy()
        self.optimizer_ = make_optimizer(self.optimizer, len(self.params_), self.lr)
        self.buffer_ = ReplayBuffer(self.buffer_capacity, len(sub))
        self.n_features_in_ = len(obs_spec)
        self.n_actions_ = n_actions
        self.rng_ = rng
        self._grads = self.params_.zeros_like()
        self._mask = self.filter_.mask_
        self._lo, self._scale = self.normalizer_.lo_, self.normalizer_.scale_

    def _prep(self, obs):
        return (obs[self._mask] - self._lo) / self._scale

    def preprocess(self, obs):
        return self.normalizer_.transform(self.filter_.transform(obs))

    def q_values(self, obs):
        check_is_fitted(self, "params_")
        return forward(self.params_, self.preprocess(obs))

    def act(self, obs, eps=0.0, rng=None):
        """Epsilon-greedy action for one raw observation; greedy ties go to the lowest index."""
        if not 0.0 <= eps <= 1.0:
            raise ConfigError(f"eps must lie in [0, 1], got {eps}")
        rng = self.rng_ if rng is None else check_generator(rng)
        if eps > 0.0 and rng.random() < eps:
            return int(rng.integers(self.n_actions_))
        return int(np.argmax(self.q_values(obs)))

    def predict(self, X):
        check_is_fitted(self, "params_")
        X = check_observations(X, self.n_features_in_)
        return np.argmax(forward(self.params_, self.preprocess(X)), axis=1)

    def train_step(self, env_step_count):
        """Learning work due after ``env_step_count`` environment steps.

        Returns whether an optimizer update was made.
        """
        updated = False
        if self.buffer_.fill >= self.learning_starts and env_step_count % self.train_frequency == 0:
            batch = self.buffer_.sample(self.batch_size, self.rng_)
            y = compute_targets(batch, self.target_params_, self.gamma)
            grads = gradient(self.params_, batch, y, self.loss, out=self._grads)
            self.optimizer_.step(self.params_, grads)
            updated = True
        if env_step_count % self.target_sync_interval == 0:
            self.target_params_.flat[...] = self.params_.flat
        return updated

    def fit(self, env, y=None):
        if self.episodes < 1:
            raise ConfigError(f"episodes must be >= 1, got {self.episodes}")
        rng = check_generator(self.random_state)
        self._setup(env.observation_spec, env.n_actions, rng)
        total = self.episodes * env.episode_length
        step = 0
        self.episode_returns_ = []
        for _ in range(self.episodes):
            s = self._prep(env.reset())
            ret = 0.0
            while not env.done:
                eps = linear_schedule(step, total, self.eps_fraction,
                                      self.eps_initial, self.eps_final)
                if rng.random() < eps:
                    a = int(rng.integers(self.n_actions_))
                else:
                    a = int(np.argmax(_forward_unchecked(self.params_.layers, s)))
                result = env.step(a)
                s_next = self._prep(result.observation)
                # episode ends are time limits, so every transition bootstraps
                self.buffer_.push(s, a, result.reward, s_next, False)
                step += 1
                self.train_step(step)
                ret += result.reward
                s = s_next
            self.episode_returns_.append(ret / env.episode_length)
        self.n_env_steps_ = step
        return self

    def save(self, path):
        check_is_fitted(self, "params_")
        save_checkpoint(self.params_, path)
        meta = {"params": self.get_params(), "sizes": list(self.params_.sizes)}
        meta["params"]["groups"] = list(self.groups)
        meta["params"]["hidden"] = list(self.hidden)
        try:
            Path(str(path) + ".json").write_text(json.dumps(meta, sort_keys=True, indent=1))
        except OSError as exc:
            raise IoFailure(f"cannot write {path}.json: {exc}") from exc

    @classmethod
    def load(cls, path, obs_spec):
        try:
            meta = json.loads(Path(str(path) + ".json").read_text())
        except OSError as exc:
            raise IoFailure(f"cannot read {path}.json: {exc}") from exc
        params = meta["params"]
        params["groups"] = tuple(params["groups"])
        params["hidden"] = tuple(params["hidden"])
        agent = cls(**params)
        agent._setup(obs_spec, meta["sizes"][-1], check_generator(agent.random_state))
        weights = load_checkpoint(path)
        if weights.sizes != agent.params_.sizes:
            raise DimensionMismatch(f"checkpoint sizes {weights.sizes} differ from {agent.params_.sizes}")
        agent.params_ = weights
        agent.target_params_ = weights.copy()
        return agent


def save_checkpoint(params, path):
    """Binary layout, little-endian: ``b"HVDQ"``, uint32 version, uint32 layer count L,
    L + 1 uint32 layer sizes, then the float64 parameter vector (per layer: W
    row-major ``(fan_in, fan_out)``, then b)."""
    sizes = params.sizes
    header = CHECKPOINT_MAGIC + struct.pack(f"<II{len(sizes)}I", CHECKPOINT_VERSION, len(sizes) - 1, *sizes)
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(params.flat.astype("<f8").tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path):
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read checkpoint {path}: {exc}") from exc
    if data[:4] != CHECKPOINT_MAGIC:
        raise ConfigError(f"{path} is not a DQN checkpoint")
    version, n_layers = struct.unpack_from("<II", data, 4)
    if version != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {version}")
    sizes = struct.unpack_from(f"<{n_layers + 1}I", data, 12)
    offset = 12 + 4 * (n_layers + 1)
    flat = np.frombuffer(data, dtype="<f8", offset=offset).astype(np.float64)
    return MLPParams(sizes, flat)
