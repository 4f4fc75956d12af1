"""Tokenized softmax policy with exact log-probabilities and gradients.

Each of the ``num_slots`` action slots has its own linear logit head over the
observation features, and slots are decoded independently (parallel
decoding). Temperature divides the logits before the softmax, both when
sampling and when scoring, so a recorded log-probability always refers to the
distribution the token was actually drawn from.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .envsim import EnvConfig, Observation

MAGIC = b"TTTP"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHHII")  # magic, version, num_slots, vocab_size, feature_dim


def log_softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = z - np.max(z, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


@dataclass(frozen=True)
class PolicyParams:
    """Immutable logit weights of shape ``(num_slots, vocab_size, feature_dim)``."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64, order="C")
        if w.ndim != 3:
            raise ValueError(f"weights must be 3-d (slots, vocab, features), got shape {w.shape}")
        if w.shape[1] < 2:
            raise ValueError("vocab_size must be >= 2")
        if not np.all(np.isfinite(w)):
            raise FloatingPointError("policy weights contain non-finite values")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    @classmethod
    def zeros(cls, num_slots: int, vocab_size: int, feature_dim: int) -> PolicyParams:
        return cls(np.zeros((num_slots, vocab_size, feature_dim)))

    @property
    def num_slots(self) -> int:
        return self.weights.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.weights.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.weights.shape[2]

    def __eq__(self, other):
        if not isinstance(other, PolicyParams):
            return NotImplemented
        return self.weights.shape == other.weights.shape and np.array_equal(self.weights, other.weights)

    __hash__ = None


@dataclass(frozen=True)
class ActionChunk:
    tokens: tuple[int, ...]
    log_prob: float


def featurize(obs: Observation, config: EnvConfig) -> np.ndarray:
    """One-hot position, one-hot stage, per-stage flags, gripper bit."""
    n, k = config.grid_size, config.num_stages
    phi = np.zeros(config.feature_dim)
    x, y = obs.agent_pos
    phi[y * n + x] = 1.0
    base = n * n
    phi[base + obs.stage_index] = 1.0
    base += k + 1
    for i, flag in enumerate(obs.item_flags):
        if flag:
            phi[base + i] = 1.0
    if obs.gripper:
        phi[base + k] = 1.0
    return phi


def _scaled_log_probs(params: PolicyParams, phi: np.ndarray, temperature: float) -> np.ndarray:
    if not temperature > 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    logits = params.weights @ phi
    if not np.all(np.isfinite(logits)):
        raise FloatingPointError("non-finite policy logits")
    return log_softmax(logits / temperature, axis=-1)


def action_probabilities(params: PolicyParams, phi: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Per-slot token distribution, shape ``(num_slots, vocab_size)``."""
    return np.exp(_scaled_log_probs(params, phi, temperature))


def _check_tokens(tokens, params: PolicyParams) -> np.ndarray:
    tokens = np.asarray(tokens, dtype=np.int64).reshape(-1)
    if tokens.shape[0] != params.num_slots:
        raise ValueError(f"expected {params.num_slots} tokens, got {tokens.shape[0]}")
    if np.any(tokens < 0) or np.any(tokens >= params.vocab_size):
        raise ValueError(f"tokens {tokens.tolist()} outside [0, {params.vocab_size})")
    return tokens


def sample_chunk(params: PolicyParams, phi: np.ndarray, temperature: float, rng=None) -> ActionChunk:
    """Draw one token per slot from ``softmax(logits / temperature)``.

    ``rng`` may be a seed or a ``numpy.random.Generator``.
    """
    rng = np.random.default_rng(rng)
    logp = _scaled_log_probs(params, phi, temperature)
    cdf = np.cumsum(np.exp(logp), axis=-1)
    u = rng.random(params.num_slots)
    tokens = [min(int(np.searchsorted(cdf[j], u[j] * cdf[j, -1], side="right")), params.vocab_size - 1)
              for j in range(params.num_slots)]
    lp = float(sum(logp[j, tok] for j, tok in enumerate(tokens)))
    return ActionChunk(tuple(tokens), lp)


def greedy_chunk(params: PolicyParams, phi: np.ndarray) -> tuple[int, ...]:
    logits = params.weights @ phi
    return tuple(int(t) for t in np.argmax(logits, axis=-1))


def log_prob(params: PolicyParams, phi: np.ndarray, tokens, temperature: float) -> float:
    tokens = _check_tokens(tokens, params)
    logp = _scaled_log_probs(params, phi, temperature)
    return float(sum(logp[j, tok] for j, tok in enumerate(tokens.tolist())))


def grad_log_prob(params: PolicyParams, phi: np.ndarray, tokens, temperature: float) -> np.ndarray:
    """Exact gradient of :func:`log_prob` with respect to the weights."""
    tokens = _check_tokens(tokens, params)
    coeff = -np.exp(_scaled_log_probs(params, phi, temperature))
    coeff[np.arange(params.num_slots), tokens] += 1.0
    return coeff[:, :, None] * phi[None, None, :] / temperature


def apply_update(params: PolicyParams, gradient: np.ndarray, step_size: float) -> PolicyParams:
    gradient = np.asarray(gradient, dtype=np.float64)
    if gradient.shape != params.weights.shape:
        raise ValueError(f"gradient shape {gradient.shape} does not match params {params.weights.shape}")
    return PolicyParams(params.weights + step_size * gradient)


def save_params(params: PolicyParams, path) -> None:
    """Write the flat little-endian binary format (16-byte header + float64 data)."""
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, params.num_slots, params.vocab_size, params.feature_dim)
    Path(path).write_bytes(header + params.weights.astype("<f8").tobytes(order="C"))


def load_params(path) -> PolicyParams:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: file too short for a params header")
    magic, version, slots, vocab, feats = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported params version {version}")
    expected = _HEADER.size + 8 * slots * vocab * feats
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    return PolicyParams(data.reshape(slots, vocab, feats).astype(np.float64))


class TokenPolicy(ClassifierMixin, BaseEstimator):
    """Scikit-learn style wrapper around :class:`PolicyParams`.

    ``fit`` performs behavior cloning: gradient ascent on the summed
    log-likelihood of the demonstrated tokens at temperature 1, starting from
    ``warm_start`` params or from zeros (the uniform policy).

    Parameters
    ----------
    vocab_size : int
        Size of the action-token alphabet.
    num_slots : int
        Tokens per action chunk.
    n_epochs : int
        Full-batch gradient-ascent passes over the demonstrations.
    step_size : float
        Ascent step size applied to the summed gradient.
    temperature : float
        Temperature used by ``predict_proba`` and ``sample``.
    warm_start : PolicyParams or None
        Initial params; zeros when None.
    """

    def __init__(self, vocab_size=6, num_slots=1, n_epochs=50, step_size=0.1, temperature=1.0, warm_start=None):
        self.vocab_size = vocab_size
        self.num_slots = num_slots
        self.n_epochs = n_epochs
        self.step_size = step_size
        self.temperature = temperature
        self.warm_start = warm_start

    def fit(self, X, y):
        X = check_array(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64).reshape(X.shape[0], -1)
        if y.shape[1] != self.num_slots:
            raise ValueError(f"y must have {self.num_slots} token(s) per row, got {y.shape[1]}")
        if np.any(y < 0) or np.any(y >= self.vocab_size):
            raise ValueError("y contains tokens outside the vocabulary")
        if self.warm_start is not None:
            params = self.warm_start
            if params.weights.shape != (self.num_slots, self.vocab_size, X.shape[1]):
                raise ValueError("warm_start shape does not match the data")
        else:
            params = PolicyParams.zeros(self.num_slots, self.vocab_size, X.shape[1])
        self.loglik_curve_ = []
        onehot = np.zeros((X.shape[0], self.num_slots, self.vocab_size))
        np.put_along_axis(onehot, y[:, :, None], 1.0, axis=-1)
        for _ in range(self.n_epochs):
            logp = log_softmax(np.einsum("svd,nd->nsv", params.weights, X), axis=-1)
            self.loglik_curve_.append(float(np.sum(logp * onehot)))
            grad = np.einsum("nsv,nd->svd", onehot - np.exp(logp), X)
            params = apply_update(params, grad, self.step_size)
        logp = log_softmax(np.einsum("svd,nd->nsv", params.weights, X), axis=-1)
        self.loglik_curve_.append(float(np.sum(logp * onehot)))
        self.params_ = params
        self.classes_ = np.arange(self.vocab_size)
        self.n_features_in_ = X.shape[1]
        return self

    def predict_log_proba(self, X):
        """Log-probabilities of shape ``(n, vocab)``, or ``(n, slots, vocab)`` for multi-slot chunks."""
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        out = log_softmax(np.einsum("svd,nd->nsv", self.params_.weights, X) / self.temperature, axis=-1)
        return out[:, 0, :] if self.num_slots == 1 else out

    def predict_proba(self, X):
        return np.exp(self.predict_log_proba(X))

    def predict(self, X):
        """Greedy tokens; one column per slot when ``num_slots > 1``."""
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        tokens = np.argmax(np.einsum("svd,nd->nsv", self.params_.weights, X), axis=-1)
        return tokens[:, 0] if self.num_slots == 1 else tokens
