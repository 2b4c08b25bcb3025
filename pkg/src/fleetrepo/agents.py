"""Grid agent (who goes first) and vehicle agent (where each driver goes), trained jointly with A2C."""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass

import numpy as np

from . import nn
from .config import AgentConfig
from .episode import Episode, GridTurn, Policy
from .rewards import RewardWeights, balance_reward, preference_reward, total_reward
from .world import STAY_SLOT, GapVector

log = logging.getLogger(__name__)

VEHICLE_DIM = 18


class ReplayBuffer:
    """FIFO transition store with uniform sampling."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("buffer capacity must be positive")
        self.capacity = capacity
        self.items: deque = deque(maxlen=capacity)

    def __len__(self):
        return len(self.items)

    def add(self, item):
        self.items.append(item)

    def sample(self, rng, k: int) -> list:
        idx = rng.choice(len(self.items), size=min(k, len(self.items)), replace=False)
        return [self.items[i] for i in sorted(idx)]


@dataclass
class VehicleTransition:
    state: np.ndarray
    valid: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray | None = None
    next_valid: np.ndarray | None = None
    done: bool | None = None

    @property
    def complete(self) -> bool:
        return self.done is not None and (self.done or self.next_state is not None)


@dataclass
class GridTransition:
    state: np.ndarray
    n: int
    order: list  # scored-row positions in sampled order; for the joint agent, one slot per scored driver
    reward: float
    valid_mask: np.ndarray | None = None


def masked_probs(logits, valid) -> np.ndarray:
    z = np.where(valid, logits, -np.inf)
    z = z - z[valid].max()
    w = np.where(valid, np.exp(z), 0.0)
    return w / w.sum()


def lowest_argmax(x, valid) -> int:
    z = np.where(valid, x, -np.inf)
    return int(np.flatnonzero(z == z.max())[0])


def standardize_gap(x, valid) -> np.ndarray:
    """Z-score the 9 gap entries of a vehicle state over its valid slots; the preference block is untouched.

    A flat neighborhood maps to zeros. Works on one state (18,) or a batch (B, 18).
    """
    x = np.array(x, dtype=np.float64)
    valid = np.asarray(valid, bool)
    gap = x[..., :9]
    n = valid.sum(axis=-1, keepdims=True)
    mu = np.where(valid, gap, 0.0).sum(axis=-1, keepdims=True) / n
    sd = np.sqrt(np.where(valid, (gap - mu) ** 2, 0.0).sum(axis=-1, keepdims=True) / n)
    x[..., :9] = np.where(valid & (sd > 0), (gap - mu) / np.where(sd > 0, sd, 1.0), 0.0)
    return x


def _critic_loss(value_col, target):
    v = nn.index(value_col, (slice(None), 0))
    d = nn.sub(v, target)
    return nn.mean(nn.mul(d, d)), v


def _check_finite(*losses):
    for loss in losses:
        if not np.isfinite(loss.data).all():
            raise FloatingPointError(f"non-finite loss {float(loss.data)}")


class _ActorCritic:
    """Persistence shared by the three actor-critic pairs."""

    norm = None

    def state_arrays(self, prefix):
        out = {}
        for net, name, opt in ((self.actor, "actor", self.actor_opt), (self.critic, "critic", self.critic_opt)):
            out.update({f"{prefix}/{name}/{k}": p.data for k, p in net.params.items()})
            out.update(opt.state_arrays(f"{prefix}/{name}/adam"))
        if self.norm is not None:
            out.update(self.norm.state_arrays(f"{prefix}/norm"))
        return out

    def load_state_arrays(self, arrays, prefix, weights_only=False):
        for net, name, opt in ((self.actor, "actor", self.actor_opt), (self.critic, "critic", self.critic_opt)):
            for k, p in net.params.items():
                p.data = arrays[f"{prefix}/{name}/{k}"].copy()
            if not weights_only:
                opt.load_state_arrays(arrays, f"{prefix}/{name}/adam")
        if self.norm is not None:
            self.norm.load_state_arrays(arrays, f"{prefix}/norm")


class VehicleAgent(_ActorCritic):
    """Picks one of the 9 neighbor slots from the live gap and the driver's predicted preference."""

    def __init__(self, hidden=64, lr=1e-4, rng=None, input_norm=True, gap_norm=False):
        rng = np.random.default_rng(0) if rng is None else rng
        self.actor = nn.Mlp(VEHICLE_DIM, 9, (hidden, hidden), rng)
        self.critic = nn.Mlp(VEHICLE_DIM, 1, (hidden, hidden), rng)
        self.actor_opt = nn.Adam(self.actor.params, lr=lr)
        self.critic_opt = nn.Adam(self.critic.params, lr=lr)
        self.norm = nn.RunningNorm(VEHICLE_DIM) if input_norm else None
        self.gap_norm = gap_norm

    @staticmethod
    def features(live_delta, valid, rho) -> np.ndarray:
        return np.concatenate([np.where(valid, live_delta, 0), np.asarray(rho, dtype=np.float64)]).astype(np.float64)

    def _in(self, x, valid):
        if self.gap_norm:
            x = standardize_gap(x, valid)
        return x if self.norm is None else self.norm(x)

    def track(self, x, valid):
        """Feed one raw state to the running input normalizer."""
        if self.norm is not None:
            self.norm.update(standardize_gap(x, valid) if self.gap_norm else x)

    def policy(self, x, valid) -> np.ndarray:
        if not np.asarray(valid).any():
            raise ValueError("no valid slot for the vehicle agent")
        return masked_probs(self.actor.predict(self._in(x, valid)), valid)

    def act(self, x, valid, rng=None, greedy=False) -> tuple[int, float]:
        """Sample a slot (or take the argmax, lowest index on ties). Returns (slot, log_prob)."""
        p = self.policy(x, valid)
        if greedy:
            slot = lowest_argmax(self.actor.predict(self._in(x, valid)), valid)
        else:
            slot = int(rng.choice(9, p=p))
        return slot, float(np.log(p[slot]))

    def update(self, batch: list[VehicleTransition], weights: RewardWeights):
        if not all(b.complete for b in batch):
            raise RuntimeError("vehicle transition used before its next state was recorded")
        valid = np.stack([b.valid for b in batch])
        x = self._in(np.stack([b.state for b in batch]), valid)
        acts = np.array([b.action for b in batch])
        target = np.array([b.reward for b in batch], dtype=np.float64)
        live = [i for i, b in enumerate(batch) if not b.done]
        if live:
            nxt = self._in(np.stack([batch[i].next_state for i in live]),
                           np.stack([batch[i].next_valid for i in live]))
            target[live] += weights.gamma * self.critic.predict(nxt)[:, 0]
        rows = np.arange(len(batch))
        self.actor.zero_grad()
        self.critic.zero_grad()
        logits = self.actor(x)
        logp = nn.index(nn.log_softmax(logits, valid), (rows, acts))
        ent = nn.categorical_entropy(nn.softmax(logits, valid))
        value = nn.index(self.critic(x), (slice(None), 0))
        actor_loss, critic_loss = nn.a2c_losses(logp, ent, value, target, weights.entropy_beta)
        _check_finite(actor_loss, critic_loss)
        actor_loss.backward()
        critic_loss.backward()
        self.actor_opt.step()
        self.critic_opt.step()
        return actor_loss.item(), critic_loss.item()


class GridAgent(_ActorCritic):
    """Scores up to ``n_max`` idle drivers of one grid; the order is a Plackett-Luce draw over the scores."""

    def __init__(self, n_max=20, hidden=64, lr=1e-4, temperature=0.1, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.n_max = n_max
        self.temperature = temperature
        self.dim = 9 + 9 * n_max
        self.actor = nn.Mlp(self.dim, n_max, (hidden, hidden), rng)
        self.critic = nn.Mlp(self.dim, 1, (hidden, hidden), rng)
        self.actor_opt = nn.Adam(self.actor.params, lr=lr)
        self.critic_opt = nn.Adam(self.critic.params, lr=lr)

    def state(self, delta, valid, prefs) -> np.ndarray:
        """Gap vector followed by one preference row per driver, zero-padded to ``n_max`` rows."""
        prefs = np.asarray(prefs, dtype=np.float64).reshape(-1, 9)
        if len(prefs) > self.n_max:
            raise ValueError(f"{len(prefs)} drivers exceed n_max={self.n_max}")
        rows = np.zeros((self.n_max, 9))
        rows[: len(prefs)] = prefs
        return np.concatenate([np.where(valid, delta, 0).astype(np.float64), rows.ravel()])

    def scores(self, state) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.actor.predict(state)))

    def act(self, state, n: int, rng=None, greedy=False) -> tuple[list[int], float]:
        """Order of the first ``n`` rows. Greedy mode sorts by descending score, lower row first on ties."""
        if n < 1:
            raise ValueError("grid agent needs at least one driver")
        s = self.scores(state)[:n]
        if greedy:
            return [int(i) for i in np.lexsort((np.arange(n), -s))], 0.0
        return nn.plackett_luce_sample(s / self.temperature, rng)

    def update(self, batch: list[GridTransition], weights: RewardWeights):
        x = np.stack([b.state for b in batch])
        target = np.array([b.reward for b in batch], dtype=np.float64)
        b_size = len(batch)
        self.actor.zero_grad()
        self.critic.zero_grad()
        scaled = nn.mul(nn.sigmoid(self.actor(x)), 1.0 / self.temperature)
        critic_loss, value = _critic_loss(self.critic(x), target)
        adv = target - value.data
        lp_terms = None
        for i, b in enumerate(batch):
            lp = nn.plackett_luce_log_prob(nn.index(scaled, (i, slice(0, b.n))), b.order)
            term = nn.mul(lp, -adv[i] / b_size)
            lp_terms = term if lp_terms is None else nn.add(lp_terms, term)
        mask = np.arange(self.n_max)[None, :] < np.array([b.n for b in batch])[:, None]
        ent = nn.categorical_entropy(nn.softmax(scaled, mask))
        actor_loss = nn.sub(lp_terms, nn.mul(nn.mean(ent), weights.entropy_beta))
        _check_finite(actor_loss, critic_loss)
        actor_loss.backward()
        critic_loss.backward()
        self.actor_opt.step()
        self.critic_opt.step()
        return actor_loss.item(), critic_loss.item()


class JointAgent(_ActorCritic):
    """Single agent emitting one slot distribution per scored driver at once (order-free ablation)."""

    def __init__(self, n_max=20, hidden=64, lr=1e-4, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.n_max = n_max
        self.dim = 9 + 9 * n_max
        self.actor = nn.Mlp(self.dim, 9 * n_max, (hidden, hidden), rng)
        self.critic = nn.Mlp(self.dim, 1, (hidden, hidden), rng)
        self.actor_opt = nn.Adam(self.actor.params, lr=lr)
        self.critic_opt = nn.Adam(self.critic.params, lr=lr)

    state = GridAgent.state

    def act(self, state, n, valid, rng=None, greedy=False) -> list[int]:
        logits = self.actor.predict(state).reshape(self.n_max, 9)[:n]
        if greedy:
            return [lowest_argmax(row, valid) for row in logits]
        return [int(rng.choice(9, p=masked_probs(row, valid))) for row in logits]

    def update(self, batch, weights: RewardWeights):
        """``batch`` items are GridTransition with ``order`` holding each scored driver's slot."""
        x = np.stack([b.state for b in batch])
        target = np.array([b.reward for b in batch], dtype=np.float64)
        b_size = len(batch)
        self.actor.zero_grad()
        self.critic.zero_grad()
        logits = nn.reshape(self.actor(x), (b_size, self.n_max, 9))
        masks = np.ones((b_size, self.n_max, 9), dtype=bool)
        bi, ki, ai = [], [], []
        for i, b in enumerate(batch):
            masks[i, : b.n] = b.valid_mask
            for k, slot in enumerate(b.order):
                bi.append(i)
                ki.append(k)
                ai.append(slot)
        bi, ki, ai = np.array(bi), np.array(ki), np.array(ai)
        logp = nn.log_softmax(logits, masks)
        critic_loss, value = _critic_loss(self.critic(x), target)
        adv = target - value.data
        lp = nn.index(logp, (bi, ki, ai))
        ent = nn.index(nn.categorical_entropy(nn.softmax(logits, masks)), (bi, ki))
        actor_loss = nn.sub(nn.mul(nn.total(nn.mul(lp, -adv[bi])), 1.0 / b_size),
                            nn.mul(nn.mean(ent), weights.entropy_beta))
        _check_finite(actor_loss, critic_loss)
        actor_loss.backward()
        critic_loss.backward()
        self.actor_opt.step()
        self.critic_opt.step()
        return actor_loss.item(), critic_loss.item()



def pearson_order(rhos, delta, valid) -> list[int]:
    """Drivers whose preference correlates most with the deficit (-gap) go first; ties by position."""
    v = np.asarray(valid, bool)
    target = -np.asarray(delta, dtype=np.float64)[v]
    corr = []
    for rho in rhos:
        r = np.asarray(rho)[v]
        if r.std() == 0 or target.std() == 0:
            corr.append(0.0)
        else:
            corr.append(float(np.corrcoef(r, target)[0, 1]))
    return [int(i) for i in np.lexsort((np.arange(len(rhos)), -np.array(corr)))]


class DualAgentPolicy(Policy):
    """Sequential per-grid repositioning: the grid agent orders drivers, the vehicle agent picks each slot
    against the live gap. In training mode transitions are stored and both agents update once per step."""

    name = "dual_agent"

    def __init__(self, cfg: AgentConfig, rng=None, training=True):
        rng = np.random.default_rng(0) if rng is None else rng
        self.cfg = cfg
        self.training = training
        self.weights = RewardWeights(cfg.alpha_b, cfg.alpha_p if cfg.pref_reward else 0.0, cfg.gamma,
                                     cfg.entropy_beta, cfg.batch)
        self.vehicle = VehicleAgent(cfg.hidden, cfg.lr, rng, cfg.input_norm, cfg.gap_norm)
        self.grid = None
        if cfg.order_mode == "learned":
            self.grid = GridAgent(cfg.n_max, cfg.hidden, cfg.lr, cfg.order_temperature, rng)
        elif cfg.order_mode == "joint":
            self.grid = JointAgent(cfg.n_max, cfg.hidden, cfg.lr, rng)
        self.vehicle_buffer = ReplayBuffer(cfg.buffer_capacity)
        self.grid_buffer = ReplayBuffer(cfg.buffer_capacity)
        self._pending: list[tuple[int, VehicleTransition]] = []
        self.updates = 0
        self.last_losses: dict[str, tuple[float, float]] = {}

    # --- acting -------------------------------------------------------------

    def _rho(self, turn, d):
        """Preference input of the Vehicle Agent (and the joint net); zeroed in preference-blind ablations."""
        return turn.pred_rho(d) if self.cfg.pref_state else np.zeros(9)

    def play_grid(self, turn: GridTurn, rng):
        drivers = sorted(turn.drivers)
        scored, overflow = drivers[: self.cfg.n_max], drivers[self.cfg.n_max:]
        greedy = not self.training
        if self.cfg.order_mode == "joint":
            return self._play_joint(turn, scored, overflow, rng)
        gstate, order = None, None
        if self.cfg.order_mode == "learned":
            # the ordering agent always sees preferences, so ablations can reuse a learned order
            gstate = self.grid.state(turn.gap0.delta, turn.valid, [turn.pred_rho(d) for d in scored])
            order, _ = self.grid.act(gstate, len(scored), rng, greedy)
        elif self.cfg.order_mode == "fixed":
            order = pearson_order([turn.pred_rho(d) for d in scored], turn.gap0.delta, turn.valid)
        else:
            order = [int(i) for i in rng.permutation(len(scored))]
        rewards = []
        for d in [scored[i] for i in order] + overflow:
            x = self.vehicle.features(turn.live_delta, turn.valid, self._rho(turn, d))
            slot, _ = self.vehicle.act(x, turn.valid, rng, greedy)
            r = self._reward(turn, d, slot)
            turn.recommend(d, slot)
            rewards.append(r)
            if self.training:
                self.vehicle.track(x, turn.valid)
                self._pending.append((d, VehicleTransition(x, turn.valid.copy(), slot, r)))
        if self.training and gstate is not None:
            self.grid_buffer.add(GridTransition(gstate, len(scored), order, float(np.mean(rewards))))

    def _reward(self, turn, d, slot):
        r_b = balance_reward(turn.gap0, slot, turn.commitments)
        r_p = preference_reward(turn.pred_rho(d), turn.valid, slot) if self.weights.alpha_P else 0.0
        return total_reward(self.weights, r_b, r_p)

    def _play_joint(self, turn, scored, overflow, rng):
        gstate = self.grid.state(turn.gap0.delta, turn.valid, [self._rho(turn, d) for d in scored])
        slots = self.grid.act(gstate, len(scored), turn.valid, rng, not self.training)
        rewards = []
        for d, slot in zip(scored, slots):
            rewards.append(self._reward(turn, d, slot))
            turn.recommend(d, slot)
        for d in overflow:
            turn.recommend(d, STAY_SLOT)
        if self.training:
            self.grid_buffer.add(GridTransition(gstate, len(scored), slots, float(np.mean(rewards)),
                                                turn.valid.copy()))

    # --- learning -----------------------------------------------------------

    def end_step(self, episode: Episode):
        if not self.training:
            return
        sim = episode.sim
        obs = None if sim.done else episode.observe()
        for d, tr in self._pending:
            drv = sim.drivers[d]
            if obs is None or drv.status != "idle":
                tr.done = True
            else:
                gap = episode.initial_gap(drv.grid, obs)
                rho = obs.pred_rho[d] if self.cfg.pref_state else np.zeros(9)
                tr.next_state = self.vehicle.features(gap.delta, gap.valid, rho)
                tr.next_valid = gap.valid
                tr.done = False
            self.vehicle_buffer.add(tr)
        self._pending = []
        rng = episode.rngs["replay"]
        if len(self.vehicle_buffer) and not self.cfg.freeze_vehicle:
            self.last_losses["vehicle"] = self.vehicle.update(self.vehicle_buffer.sample(rng, self.cfg.batch),
                                                              self.weights)
            self.updates += 1
        if self.grid is not None and len(self.grid_buffer) and not self.cfg.freeze_grid:
            self.last_losses["grid"] = self.grid.update(self.grid_buffer.sample(rng, self.cfg.batch), self.weights)

    def end_episode(self, episode):
        self._pending = []

    # --- persistence ----------------------------------------------------------

    def state_arrays(self) -> dict:
        out = self.vehicle.state_arrays("vehicle")
        if self.grid is not None:
            out.update(self.grid.state_arrays("grid"))
        return out

    def load_state_arrays(self, arrays, weights_only=False):
        self.vehicle.load_state_arrays(arrays, "vehicle", weights_only)
        if self.grid is not None:
            self.grid.load_state_arrays(arrays, "grid", weights_only)

    def load_grid_weights(self, arrays):
        """Borrow a trained ordering network (used by the preference ablations, which keep the learned order)."""
        if self.grid is None:
            raise ValueError("this configuration has no grid agent")
        self.grid.load_state_arrays(arrays, "grid", weights_only=True)


def train_vehicle_bandit(delta, rho=None, valid=None, episodes=500, seed=0, hidden=64, lr=1e-4,
                         weights: RewardWeights = RewardWeights(alpha_P=0.0), gap_norm=False) -> VehicleAgent:
    """One driver facing the same gap every episode; each episode is a single terminal recommendation."""
    rng = np.random.default_rng(seed)
    valid = np.ones(9, bool) if valid is None else np.asarray(valid, bool)
    rho = np.where(valid, 1.0, 0.0) / valid.sum() if rho is None else np.asarray(rho)
    gap = GapVector(np.where(valid, delta, 0).astype(np.int64), valid)
    agent = VehicleAgent(hidden, lr, rng, gap_norm=gap_norm)
    buf = ReplayBuffer(10_000)
    x = agent.features(gap.delta, valid, rho)
    for _ in range(episodes):
        agent.track(x, valid)
        slot, _ = agent.act(x, valid, rng)
        r_p = preference_reward(rho, valid, slot) if weights.alpha_P else 0.0
        buf.add(VehicleTransition(x, valid, slot, total_reward(weights, balance_reward(gap, slot), r_p), done=True))
        agent.update(buf.sample(rng, weights.batch), weights)
    return agent
