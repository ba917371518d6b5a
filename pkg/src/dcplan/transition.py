"""Learnable surrounding-agent transition model.

A Gaussian feedforward network (two 128-unit tanh hidden layers, mean and
scale heads) predicts the one-step change of the four nearest agents'
states. Gradients are hand-derived so they can be checked against finite
differences, and members of the bootstrapped ensemble train independently
on with-replacement resamples of the dataset.

Inference for rollouts goes through ``EnsembleRollout``, which stacks all
member weights into float32 arrays and evaluates every member and rollout
lane in one batched matmul per layer.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import intersection as world
from .errors import EmptyDataset, NonFiniteLoss
from .seeds import derive_seed, rng_from
from .sim import AgentState, Intention, WorldState, REACH_DV, REACH_OMEGA

__all__ = [
    "TrainConfig", "DataUnit", "GaussianNet", "TransitionModel",
    "TransitionEnsemble", "EnsembleRollout",
    "encode_state", "encode_action", "encode_target", "decode_deltas",
    "bootstrap_resample", "bootstrap_indices",
    "EGO_FEATS", "AGENT_SLOTS", "AGENT_FEATS", "SLOT_TARGET", "N_FEATURES",
    "N_TARGETS", "ACTION_FEATS", "BLANK_REL",
]

EGO_FEATS = 4                  # b, d, heading error, speed
AGENT_SLOTS = 4
AGENT_FEATS = 7                # rel x, rel y, heading, speed, intention one-hot
SLOT_TARGET = 4                # delta x, y, heading, speed
N_FEATURES = EGO_FEATS + AGENT_SLOTS * AGENT_FEATS
N_TARGETS = AGENT_SLOTS * SLOT_TARGET
ACTION_FEATS = 12              # candidate one-hot (10) + terminal (offset, speed)
BLANK_REL = 500.0              # blank-obstacle sentinel offset

_DT = 0.1


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-4
    epochs: int = 200
    batch_size: int = 64
    sigma_min: float = 1e-3
    hidden: int = 128
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


@dataclass(frozen=True)
class DataUnit:
    """One supervised unit: state features, action encoding, agent targets."""

    features: np.ndarray       # (N_FEATURES,)
    action: np.ndarray         # (ACTION_FEATS,)
    target: np.ndarray         # (N_TARGETS,)


# -- encoding ---------------------------------------------------------------


def _slot_order(state: WorldState) -> list:
    ego = state.ego
    dists = [np.hypot(a.x - ego.x, a.y - ego.y) for a in state.agents]
    order = sorted(range(len(state.agents)), key=lambda i: (dists[i], i))
    return order[:AGENT_SLOTS]


def encode_state(state: WorldState, path=None):
    """Fixed-layout feature vector for one world state.

    Ego enters relative to the reference path (arc length, offset, heading
    error, speed); the four nearest agents enter sorted by distance with
    ego-relative positions; missing agents become the blank sentinel.

    Returns:
        (features (N_FEATURES,), slot_agents): slot_agents[k] is the index
        into ``state.agents`` encoded at slot k, or -1 for a blank slot.
    """
    if path is None:
        path = world.ego_path()
    ego = state.ego
    b, d, _ = path.project(np.array([ego.x, ego.y]))
    b = float(b)
    head_err = _wrap(ego.heading - float(path.heading_at(min(b, path.length - 1e-9))))
    feats = np.empty(N_FEATURES)
    feats[0] = b
    feats[1] = float(d)
    feats[2] = head_err
    feats[3] = ego.speed
    order = _slot_order(state)
    slot_agents = np.full(AGENT_SLOTS, -1, dtype=int)
    for k in range(AGENT_SLOTS):
        off = EGO_FEATS + k * AGENT_FEATS
        if k < len(order):
            a = state.agents[order[k]]
            slot_agents[k] = order[k]
            feats[off + 0] = a.x - ego.x
            feats[off + 1] = a.y - ego.y
            feats[off + 2] = a.heading
            feats[off + 3] = a.speed
            feats[off + 4:off + 7] = a.intention.one_hot
        else:
            feats[off + 0] = BLANK_REL
            feats[off + 1] = BLANK_REL
            feats[off + 2] = 0.0
            feats[off + 3] = 0.0
            feats[off + 4:off + 7] = Intention.STRAIGHT.one_hot
    return feats, slot_agents


def encode_action(action_id: int, terminal_offset: float, terminal_speed: float,
                  n_actions: int = 10) -> np.ndarray:
    vec = np.zeros(ACTION_FEATS)
    vec[action_id] = 1.0
    vec[n_actions] = terminal_offset
    vec[n_actions + 1] = terminal_speed
    return vec


def encode_target(state: WorldState, next_agents, slot_agents) -> np.ndarray:
    """Per-slot (dx, dy, dheading, dspeed) targets; blank slots stay zero."""
    target = np.zeros(N_TARGETS)
    for k, idx in enumerate(slot_agents):
        if idx < 0:
            continue
        a0 = state.agents[idx]
        a1 = next_agents[idx]
        off = k * SLOT_TARGET
        target[off + 0] = a1.x - a0.x
        target[off + 1] = a1.y - a0.y
        target[off + 2] = _wrap(a1.heading - a0.heading)
        target[off + 3] = a1.speed - a0.speed
    return target


def decode_deltas(agents, slot_agents, deltas, dt: float = _DT):
    """Apply clamped per-slot deltas to the tracked agents.

    The clamp keeps every implied motion inside the one-step reachable
    bounds shared with the simulator.
    """
    out = list(agents)
    for k, idx in enumerate(slot_agents):
        if idx < 0:
            continue
        a = agents[idx]
        off = k * SLOT_TARGET
        dx, dy, dh, dv = deltas[off:off + SLOT_TARGET]
        max_disp = a.speed * dt + 0.5 * (REACH_DV / dt) * dt * dt
        norm = float(np.hypot(dx, dy))
        if norm > max_disp and norm > 0:
            scale = max_disp / norm
            dx *= scale
            dy *= scale
        dh = float(np.clip(dh, -REACH_OMEGA * dt, REACH_OMEGA * dt))
        dv = float(np.clip(dv, -REACH_DV, REACH_DV))
        out[idx] = AgentState(a.x + float(dx), a.y + float(dy), a.heading + dh,
                              max(0.0, a.speed + dv), a.intention)
    return tuple(out)


def _wrap(a: float) -> float:
    return float((a + np.pi) % (2 * np.pi) - np.pi)


# -- bootstrap ----------------------------------------------------------------


def bootstrap_indices(n_items: int, n_subsets: int, rng: np.random.Generator):
    if n_items < 1:
        raise EmptyDataset("cannot bootstrap an empty dataset")
    return [rng.integers(0, n_items, size=n_items) for _ in range(n_subsets)]


def bootstrap_resample(dataset, n: int, rng: np.random.Generator):
    """n with-replacement resamples, each exactly |dataset| units."""
    items = list(dataset)
    return [[items[i] for i in idx] for idx in bootstrap_indices(len(items), n, rng)]


# -- Gaussian network ----------------------------------------------------------

_PARAM_ORDER = ("W1", "b1", "W2", "b2", "Wm", "bm", "Ws", "bs")


def _softplus(x):
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _inv_softplus(y: float) -> float:
    return float(np.log(np.expm1(y)))


class GaussianNet:
    """Feedforward Gaussian regressor with hand-written gradients.

    Architecture: input -> 128 tanh -> 128 tanh -> (mean, raw scale) heads;
    the predicted sigma is sigma_min + softplus(raw), so it never falls
    below the floor.
    """

    def __init__(self, n_in: int, n_out: int, hidden: int = 128,
                 sigma_min: float = 1e-3, seed: int = 0):
        self.n_in = n_in
        self.n_out = n_out
        self.hidden = hidden
        self.sigma_min = sigma_min
        self.seed = seed
        rng = rng_from(seed, "init")
        def glorot(n1, n2):
            return rng.normal(0.0, np.sqrt(2.0 / (n1 + n2)), size=(n1, n2))
        self.params = {
            "W1": glorot(n_in, hidden), "b1": np.zeros(hidden),
            "W2": glorot(hidden, hidden), "b2": np.zeros(hidden),
            "Wm": glorot(hidden, n_out), "bm": np.zeros(n_out),
            "Ws": glorot(hidden, n_out),
            # start sigma near 1 in standardized units
            "bs": np.full(n_out, _inv_softplus(1.0)),
        }

    # forward / loss ------------------------------------------------------

    def forward(self, X):
        p = self.params
        z1 = X @ p["W1"] + p["b1"]
        h1 = np.tanh(z1)
        z2 = h1 @ p["W2"] + p["b2"]
        h2 = np.tanh(z2)
        mu = h2 @ p["Wm"] + p["bm"]
        sraw = h2 @ p["Ws"] + p["bs"]
        sigma = self.sigma_min + _softplus(sraw)
        return mu, sigma, (X, h1, h2, sraw)

    def predict(self, X):
        mu, sigma, _ = self.forward(np.atleast_2d(np.asarray(X, float)))
        return mu, sigma

    def nll(self, X, Y) -> float:
        mu, sigma, _ = self.forward(X)
        z = (Y - mu) / sigma
        return float(np.mean(np.sum(np.log(sigma) + 0.5 * z * z, axis=1)))

    def nll_grad(self, X, Y):
        """Mean NLL over the batch and its analytic parameter gradients."""
        p = self.params
        mu, sigma, (X, h1, h2, sraw) = self.forward(X)
        B = X.shape[0]
        diff = mu - Y
        loss = float(np.mean(np.sum(np.log(sigma) + 0.5 * (diff / sigma) ** 2, axis=1)))
        dmu = diff / (sigma ** 2) / B
        dsigma = (1.0 / sigma - diff ** 2 / sigma ** 3) / B
        dsraw = dsigma * expit(sraw)
        grads = {}
        grads["Wm"] = h2.T @ dmu
        grads["bm"] = dmu.sum(axis=0)
        grads["Ws"] = h2.T @ dsraw
        grads["bs"] = dsraw.sum(axis=0)
        dh2 = dmu @ p["Wm"].T + dsraw @ p["Ws"].T
        dz2 = dh2 * (1.0 - h2 * h2)
        grads["W2"] = h1.T @ dz2
        grads["b2"] = dz2.sum(axis=0)
        dh1 = dz2 @ p["W2"].T
        dz1 = dh1 * (1.0 - h1 * h1)
        grads["W1"] = X.T @ dz1
        grads["b1"] = dz1.sum(axis=0)
        return loss, grads

    # parameter vector helpers (used by the gradient check) ----------------

    def get_flat(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in _PARAM_ORDER])

    def set_flat(self, flat: np.ndarray) -> None:
        i = 0
        for k in _PARAM_ORDER:
            n = self.params[k].size
            self.params[k] = flat[i:i + n].reshape(self.params[k].shape).copy()
            i += n

    def flat_grad(self, grads) -> np.ndarray:
        return np.concatenate([grads[k].ravel() for k in _PARAM_ORDER])

    # training -------------------------------------------------------------

    def fit(self, X, Y, cfg: TrainConfig, seed: int | None = None):
        """Minibatch Adam on the Gaussian NLL; returns per-epoch mean loss."""
        X = np.asarray(X, float)
        Y = np.asarray(Y, float)
        if X.shape[0] == 0:
            raise EmptyDataset("fit needs at least one sample")
        rng = rng_from(self.seed if seed is None else seed, "shuffle")
        m = {k: np.zeros_like(v) for k, v in self.params.items()}
        v = {k: np.zeros_like(vv) for k, vv in self.params.items()}
        t = 0
        losses = []
        n = X.shape[0]
        for epoch in range(cfg.epochs):
            perm = rng.permutation(n)
            epoch_loss = 0.0
            n_batches = 0
            for start in range(0, n, cfg.batch_size):
                idx = perm[start:start + cfg.batch_size]
                loss, grads = self.nll_grad(X[idx], Y[idx])
                if not np.isfinite(loss):
                    raise NonFiniteLoss(
                        f"non-finite NLL at epoch {epoch}, batch {n_batches}",
                        epoch=epoch, batch=n_batches)
                t += 1
                b1c = 1.0 - cfg.adam_beta1 ** t
                b2c = 1.0 - cfg.adam_beta2 ** t
                for k, g in grads.items():
                    m[k] = cfg.adam_beta1 * m[k] + (1 - cfg.adam_beta1) * g
                    v[k] = cfg.adam_beta2 * v[k] + (1 - cfg.adam_beta2) * g * g
                    self.params[k] -= cfg.learning_rate * (m[k] / b1c) / (
                        np.sqrt(v[k] / b2c) + cfg.adam_eps)
                epoch_loss += loss
                n_batches += 1
            losses.append(epoch_loss / max(n_batches, 1))
        return losses


# -- standardization -----------------------------------------------------------


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def from_data(cls, X, std_floor: float = 1e-2) -> "Standardizer":
        X = np.asarray(X, float)
        return cls(mean=X.mean(axis=0), std=np.maximum(X.std(axis=0), std_floor))

    def transform(self, X):
        return (np.asarray(X, float) - self.mean) / self.std

    def inverse(self, Z):
        return np.asarray(Z, float) * self.std + self.mean


# -- driving transition model ----------------------------------------------------


def _stack_units(units):
    X = np.stack([u.features for u in units])
    A = np.stack([u.action for u in units])
    Y = np.stack([u.target for u in units])
    return X, A, Y


class TransitionModel:
    """One ensemble member: Gaussian net plus shared standardization.

    The action input is masked by default, respecting the factorization in
    which candidate actions only steer the ego; set
    ``condition_on_action=True`` to feed the action encoding as extra
    features.
    """

    def __init__(self, seed: int, cfg: TrainConfig = TrainConfig(),
                 condition_on_action: bool = False,
                 x_stats: Standardizer | None = None,
                 y_stats: Standardizer | None = None):
        self.seed = seed
        self.cfg = cfg
        self.condition_on_action = condition_on_action
        n_in = N_FEATURES + (ACTION_FEATS if condition_on_action else 0)
        self.net = GaussianNet(n_in, N_TARGETS, hidden=cfg.hidden,
                               sigma_min=cfg.sigma_min, seed=seed)
        self.x_stats = x_stats
        self.y_stats = y_stats

    def _inputs(self, X, A):
        if self.condition_on_action:
            X = np.concatenate([X, A], axis=1)
        return self.x_stats.transform(X)

    def train(self, units, cfg: TrainConfig | None = None):
        """Supervised Gaussian NLL fit; returns the per-epoch loss curve."""
        if not units:
            raise EmptyDataset("training set is empty")
        cfg = cfg or self.cfg
        X, A, Y = _stack_units(units)
        if self.x_stats is None:
            full = np.concatenate([X, A], axis=1) if self.condition_on_action else X
            self.x_stats = Standardizer.from_data(full)
        if self.y_stats is None:
            self.y_stats = Standardizer.from_data(Y)
        Xs = self._inputs(X, A)
        Ys = self.y_stats.transform(Y)
        return self.net.fit(Xs, Ys, cfg, seed=derive_seed(self.seed, "fit"))

    def predict(self, features, action=None):
        """Per-dimension (mu, sigma) in standardized target units."""
        X = np.atleast_2d(np.asarray(features, float))
        A = np.atleast_2d(np.asarray(action, float)) if action is not None \
            else np.zeros((X.shape[0], ACTION_FEATS))
        mu, sigma = self.net.predict(self._inputs(X, A))
        return mu, sigma

    def sample_next(self, state: WorldState, action, rng: np.random.Generator,
                    path=None, clamp: bool = True):
        """Draw one next-step agent set from the predictive Gaussian."""
        feats, slot_agents = encode_state(state, path)
        mu, sigma = self.predict(feats, action)
        z = mu[0] + sigma[0] * rng.standard_normal(N_TARGETS)
        deltas = self.y_stats.inverse(z)
        if not clamp:
            out = list(state.agents)
            for k, idx in enumerate(slot_agents):
                if idx < 0:
                    continue
                a = state.agents[idx]
                off = k * SLOT_TARGET
                out[idx] = AgentState(a.x + deltas[off], a.y + deltas[off + 1],
                                      a.heading + deltas[off + 2],
                                      max(0.0, a.speed + deltas[off + 3]), a.intention)
            return tuple(out)
        return decode_deltas(state.agents, slot_agents, deltas)


class TransitionEnsemble:
    """n independently bootstrapped and trained transition models."""

    def __init__(self, members, member_seeds):
        if len(members) < 1:
            raise ValueError("ensemble needs at least one member")
        self.members = list(members)
        self.member_seeds = list(member_seeds)

    def __len__(self):
        return len(self.members)

    @classmethod
    def fit(cls, units, n: int, cfg: TrainConfig, root_seed: int,
            condition_on_action: bool = False, progress=None):
        """Bootstrap + train n members on shared standardization statistics.

        Returns (ensemble, loss_curves).
        """
        if not units:
            raise EmptyDataset("cannot train an ensemble on an empty dataset")
        units = list(units)
        X, A, Y = _stack_units(units)
        full = np.concatenate([X, A], axis=1) if condition_on_action else X
        x_stats = Standardizer.from_data(full)
        y_stats = Standardizer.from_data(Y)
        idx_sets = bootstrap_indices(len(units), n, rng_from(root_seed, "bootstrap"))
        members = []
        seeds = []
        curves = []
        for i, idx in enumerate(idx_sets):
            seed = derive_seed(root_seed, "member", i)
            model = TransitionModel(seed, cfg, condition_on_action,
                                    x_stats=x_stats, y_stats=y_stats)
            subset = [units[j] for j in idx]
            curves.append(model.train(subset, cfg))
            members.append(model)
            seeds.append(seed)
            if progress is not None:
                progress(i, n)
        return cls(members, seeds), curves

    # checkpoints ---------------------------------------------------------

    def save(self, directory) -> None:
        os.makedirs(directory, exist_ok=True)
        manifest = {
            "format": "dcplan-ensemble",
            "version": 1,
            "n": len(self.members),
            "member_seeds": [int(s) for s in self.member_seeds],
            "condition_on_action": self.members[0].condition_on_action,
            "sigma_min": self.members[0].cfg.sigma_min,
            "hidden": self.members[0].cfg.hidden,
        }
        with open(os.path.join(directory, "manifest.json"), "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=1, sort_keys=True)
        for i, m in enumerate(self.members):
            _save_member(m, os.path.join(directory, f"member_{i:03d}.dcpt"))

    @classmethod
    def load(cls, directory, n: int | None = None) -> "TransitionEnsemble":
        with open(os.path.join(directory, "manifest.json"), "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
        total = manifest["n"]
        take = total if n is None else min(n, total)
        members = [
            _load_member(os.path.join(directory, f"member_{i:03d}.dcpt"),
                         manifest)
            for i in range(take)
        ]
        return cls(members, manifest["member_seeds"][:take])


_MAGIC = b"DCPT"
_CKPT_VERSION = 1


def _save_member(model: TransitionModel, path) -> None:
    """Versioned little-endian binary checkpoint for one member."""
    net = model.net
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IIIIQI", _CKPT_VERSION, net.n_in, net.hidden,
                             net.n_out, model.seed & (2 ** 64 - 1),
                             1 if model.condition_on_action else 0))
        for arr in (model.x_stats.mean, model.x_stats.std,
                    model.y_stats.mean, model.y_stats.std):
            fh.write(np.asarray(arr, "<f8").tobytes())
        fh.write(net.get_flat().astype("<f8").tobytes())


def _load_member(path, manifest) -> TransitionModel:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError(f"{path}: not a transition checkpoint")
        version, n_in, hidden, n_out, seed, cond = struct.unpack("<IIIIQI", fh.read(28))
        if version != _CKPT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        cfg = TrainConfig(hidden=hidden, sigma_min=manifest.get("sigma_min", 1e-3))
        model = TransitionModel(seed, cfg, condition_on_action=bool(cond))
        x_mean = np.frombuffer(fh.read(8 * n_in), "<f8").copy()
        x_std = np.frombuffer(fh.read(8 * n_in), "<f8").copy()
        y_mean = np.frombuffer(fh.read(8 * n_out), "<f8").copy()
        y_std = np.frombuffer(fh.read(8 * n_out), "<f8").copy()
        model.x_stats = Standardizer(x_mean, x_std)
        model.y_stats = Standardizer(y_mean, y_std)
        flat = np.frombuffer(fh.read(), "<f8").copy()
        model.net.set_flat(flat)
    return model


# -- stacked fast path ------------------------------------------------------------


class EnsembleRollout:
    """All member weights stacked into float32 arrays for batched rollouts.

    ``forward`` evaluates (n_members, lanes) inputs with one batched matmul
    per layer, which is what keeps a full planning step within the 10 Hz
    budget.
    """

    def __init__(self, ensemble: TransitionEnsemble):
        nets = [m.net for m in ensemble.members]
        self.n = len(nets)
        self.sigma_min = np.float32(nets[0].sigma_min)
        def stack(key):
            return np.ascontiguousarray(
                np.stack([n.params[key] for n in nets]).astype(np.float32))
        self.W1 = stack("W1")
        self.b1 = stack("b1")[:, None, :]
        self.W2 = stack("W2")
        self.b2 = stack("b2")[:, None, :]
        self.Wm = stack("Wm")
        self.bm = stack("bm")[:, None, :]
        self.Ws = stack("Ws")
        self.bs = stack("bs")[:, None, :]
        m0 = ensemble.members[0]
        self.x_mean = m0.x_stats.mean.astype(np.float32)
        self.x_std = m0.x_stats.std.astype(np.float32)
        self.y_mean = m0.y_stats.mean.astype(np.float32)
        self.y_std = m0.y_stats.std.astype(np.float32)
        self.condition_on_action = m0.condition_on_action

    def forward(self, X):
        """X: (n, B, n_in) standardized float32 -> (mu, sigma) same shape out."""
        h = np.tanh(X @ self.W1 + self.b1)
        h = np.tanh(h @ self.W2 + self.b2)
        mu = h @ self.Wm + self.bm
        sraw = h @ self.Ws + self.bs
        sigma = self.sigma_min + np.maximum(sraw, 0.0) + np.log1p(np.exp(-np.abs(sraw)))
        return mu, sigma
