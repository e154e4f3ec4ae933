"""Replay-based Q-learning over yearly market episodes.

One training epoch walks a single episode (a calendar year of the
training slice, drawn with a recency-biased distribution). At every
decision the agent picks an epsilon-greedy action, maps it to a feasible
one, but stores the simulated outcome of *every* feasible action as one
replay item (an ExperienceList). Each step then samples a minibatch of
stored lists and takes one SGD step on the masked TD loss; the target
network is re-synced once per epoch.

Targets per list: for every feasible action j with reward r_j and
successor state s'_j,

    z_j = r_j + gamma * Qhat(s'_j, a*_j)   (z_j = r_j when the list is terminal)

where a*_j is the target network's argmax at s'_j, passed through the
feasibility mapping when that argmax is not executable there. Infeasible
entries are excluded from the loss via the mask, which is the same as
regressing them onto the network's own prediction.

Randomness is split off one seed into five independent streams, in
spawn order: network init, encoder pretraining, episode sampling,
action selection, replay sampling.
"""

import csv
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .actionspace import FeasibilityContext, decode, encode, map_action
from .checkpoint import load_arrays
from .environment import MarketEnvironment, TradeParams, episode_config
from .errors import NumericError, ValidationError
from .marketdata import AlignedMarket
from .qnet import (Dims, QNetwork, masked_td_loss, pretrain_autoencoder,
                   save_network, sgd_update)

__all__ = [
    "ExperienceList",
    "ReplayMemory",
    "EpisodeSlice",
    "yearly_episodes",
    "episode_probabilities",
    "sample_episode",
    "epsilon_at",
    "choose_action",
    "LatentCache",
    "build_targets",
    "TrainerSettings",
    "Trainer",
    "pretraining_windows",
]


@dataclass
class ExperienceList:
    """All feasible branches of one visited state, stored as a unit.

    t indexes the decision date in the aligned dataset, so feature
    windows for the state (t) and its successors (t+1) can be recovered
    from the shared market data instead of being copied here.
    """

    t: int
    weights: np.ndarray
    action_indices: np.ndarray
    rewards: np.ndarray
    next_weights: np.ndarray
    next_values: np.ndarray
    terminal: bool


def experience_from_branches(t: int, weights: np.ndarray, branches, terminal: bool) -> ExperienceList:
    return ExperienceList(
        t=t,
        weights=np.asarray(weights, dtype=np.float64).copy(),
        action_indices=np.array([b.action_index for b in branches], dtype=np.int64),
        rewards=np.array([b.reward for b in branches]),
        next_weights=np.stack([b.next_weights for b in branches]),
        next_values=np.array([b.next_value for b in branches]),
        terminal=terminal,
    )


class ReplayMemory:
    """FIFO buffer of ExperienceLists with uniform minibatch sampling."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValidationError(f"replay capacity must be >= 1, got {capacity}")
        self._buf = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._buf)

    @property
    def capacity(self) -> int:
        return self._buf.maxlen

    def push(self, item: ExperienceList) -> None:
        self._buf.append(item)

    def sample(self, rng: np.random.Generator, batch_size: int):
        """Uniform sample without replacement; smaller when the buffer is."""
        k = min(batch_size, len(self._buf))
        if k == 0:
            raise ValidationError("cannot sample from an empty replay memory")
        idx = rng.choice(len(self._buf), size=k, replace=False)
        return [self._buf[i] for i in idx]


@dataclass(frozen=True)
class EpisodeSlice:
    """One calendar year of the dataset: date indices start..end inclusive."""

    year: int
    start: int
    end: int


def yearly_episodes(market: AlignedMarket, window: int, *, start: int = 0,
                    end: int | None = None, min_decisions: int = 2):
    """Calendar-year episode slices inside [start, end], oldest first.

    A year qualifies when it leaves at least ``min_decisions`` decision
    dates after the feature lookback; the first year loses its opening
    ``window`` dates to that lookback.
    """
    if end is None:
        end = market.n_dates - 1
    if not 0 <= start < end <= market.n_dates - 1:
        raise ValidationError(f"bad episode range [{start}, {end}] for {market.n_dates} dates")
    slices = []
    t = start
    while t <= end:
        year = market.year_of(t)
        stop = t
        while stop + 1 <= end and market.year_of(stop + 1) == year:
            stop += 1
        n_decisions = stop - max(t, window)
        if n_decisions >= min_decisions:
            slices.append(EpisodeSlice(year=year, start=t, end=stop))
        t = stop + 1
    if not slices:
        raise ValidationError("no calendar year in range has enough decision dates")
    return slices


def episode_probabilities(n_episodes: int, beta: float) -> np.ndarray:
    """Truncated-geometric episode weights, oldest first.

    The most recent of N episodes is drawn with probability
    beta / (1 - (1-beta)^N) and each step back in time multiplies the
    probability by (1 - beta).
    """
    if not 0 < beta < 1:
        raise ValidationError(f"recency bias must be in (0, 1), got {beta}")
    if n_episodes < 1:
        raise ValidationError("need at least one episode")
    back = np.arange(n_episodes - 1, -1, -1, dtype=np.float64)
    probs = beta * (1.0 - beta) ** back
    return probs / (1.0 - (1.0 - beta) ** n_episodes)


def sample_episode(slices, beta: float, rng: np.random.Generator) -> EpisodeSlice:
    probs = episode_probabilities(len(slices), beta)
    return slices[int(rng.choice(len(slices), p=probs))]


def epsilon_at(epoch: int, total_epochs: int, start: float, end: float,
               decay_fraction: float) -> float:
    """Linear decay from start to end over the first decay_fraction of epochs."""
    horizon = max(1, int(round(total_epochs * decay_fraction)))
    if epoch >= horizon:
        return end
    return start + (end - start) * (epoch / horizon)


def choose_action(q: np.ndarray, ctx: FeasibilityContext, epsilon: float,
                  rng: np.random.Generator):
    """Epsilon-greedy pick over the full action space, then feasibility-map it.

    Consumes one uniform draw, plus one integer draw on the explore
    branch. Returns (intended_index, executed_action, executed_index).
    """
    n_actions = q.shape[0]
    if rng.random() < epsilon:
        intended = int(rng.integers(n_actions))
    else:
        intended = int(np.argmax(q))
    executed = map_action(ctx, decode(intended, ctx.n_assets), q)
    return intended, executed, encode(executed)


class LatentCache:
    """Memoized encoder outputs per decision index, for a frozen encoder.

    Latents depend only on market data and encoder weights, so while the
    encoder is frozen one batched encode per new index set replaces all
    repeated LSTM work. Invalidate after any encoder update.
    """

    def __init__(self, net: QNetwork, market: AlignedMarket, window: int):
        self.net = net
        self.market = market
        self.window = window
        self._rows: dict[int, np.ndarray] = {}

    def invalidate(self) -> None:
        self._rows.clear()

    def get(self, ts) -> np.ndarray:
        """Latent rows, shape (len(ts), I*latent), computing misses in one batch."""
        ts = [int(t) for t in ts]
        missing = sorted({t for t in ts if t not in self._rows})
        if missing:
            X4 = np.stack([self.market.window(t, self.window) for t in missing])
            lat = self.net.encode(X4)
            for j, t in enumerate(missing):
                self._rows[t] = lat[j]
        return np.stack([self._rows[t] for t in ts])


def build_targets(target_net: QNetwork, market: AlignedMarket, trade: TradeParams,
                  batch, gamma: float, *, cache: LatentCache | None = None,
                  window: int | None = None):
    """TD targets and feasibility mask for a minibatch of ExperienceLists.

    Returns (targets, mask), both (B, n_actions); mask is True exactly at
    each list's stored feasible actions. Non-terminal bootstraps use the
    target network's argmax at the successor, feasibility-mapped there
    when needed. All successor evaluations run in one batched forward.
    """
    dims = target_net.dims
    B = len(batch)
    targets = np.zeros((B, dims.n_actions))
    mask = np.zeros((B, dims.n_actions), dtype=bool)

    rows = []
    for li, item in enumerate(batch):
        mask[li, item.action_indices] = True
        if item.terminal:
            targets[li, item.action_indices] = item.rewards
        else:
            for slot in range(len(item.action_indices)):
                rows.append((li, slot))

    if rows:
        next_w = np.stack([batch[li].next_weights[slot] for li, slot in rows])
        ts_next = [batch[li].t + 1 for li, slot in rows]
        if cache is not None:
            lat = cache.get(ts_next)
            q_next = target_net.forward_latents(lat, next_w)
        else:
            if window is None:
                raise ValidationError("build_targets needs window when no cache is given")
            X4 = np.stack([market.window(t, window) for t in ts_next])
            q_next = target_net.forward(X4, next_w)

        for r, (li, slot) in enumerate(rows):
            item = batch[li]
            qrow = q_next[r]
            raw = int(np.argmax(qrow))
            ctx = FeasibilityContext(
                weights=next_w[r], value=float(item.next_values[slot]),
                trading_size=trade.trading_size,
                sell_cost=trade.sell_cost, buy_cost=trade.buy_cost,
            )
            best = map_action(ctx, decode(raw, dims.n_assets), qrow)
            boot = qrow[encode(best)]
            targets[li, item.action_indices[slot]] = item.rewards[slot] + gamma * boot
    return targets, mask


@dataclass(frozen=True)
class TrainerSettings:
    """Learning hyperparameters; defaults suit year-scale daily data."""

    epochs: int = 500
    batch_size: int = 32
    gamma: float = 0.9
    learning_rate: float = 1e-7
    replay_capacity: int = 2000
    recency_bias: float = 0.3
    epsilon_start: float = 1.0
    epsilon_end: float = 0.1
    epsilon_decay_fraction: float = 0.8
    encoder_frozen: bool = True

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValidationError("epochs and batch_size must be >= 1")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValidationError(f"gamma must be in [0, 1], got {self.gamma}")
        if self.learning_rate <= 0:
            raise ValidationError("learning rate must be positive")
        if not 0.0 <= self.epsilon_end <= self.epsilon_start <= 1.0:
            raise ValidationError("need 0 <= epsilon_end <= epsilon_start <= 1")
        if not 0.0 < self.epsilon_decay_fraction <= 1.0:
            raise ValidationError("epsilon decay fraction must be in (0, 1]")


@dataclass
class EpochRecord:
    epoch: int
    episode_year: int
    loss_mean: float
    episode_return: float
    epsilon: float


@dataclass
class TrainingResult:
    records: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.records[-1].loss_mean if self.records else float("nan")


def pretraining_windows(market: AlignedMarket, window: int, *, start: int = 0,
                        end: int | None = None) -> np.ndarray:
    """Pool every asset's feature window over the decision range, (M, n, 5)."""
    if end is None:
        end = market.n_dates - 1
    first = max(start, window)
    if first >= end:
        raise ValidationError(f"no usable windows in [{start}, {end}] with lookback {window}")
    chunks = [market.window(t, window) for t in range(first, end)]
    return np.concatenate(chunks, axis=0)


class Trainer:
    """Owns the networks, replay memory and RNG streams for one training run."""

    def __init__(self, market: AlignedMarket, dims: Dims, settings: TrainerSettings,
                 trade: TradeParams, *, train_start: int = 0, train_end: int | None = None,
                 seed: int = 0):
        if dims.n_assets != market.n_assets:
            raise ValidationError(
                f"network built for {dims.n_assets} assets, dataset has {market.n_assets}"
            )
        self.market = market
        self.dims = dims
        self.settings = settings
        self.trade = trade
        self.episodes = yearly_episodes(market, dims.window, start=train_start,
                                        end=train_end if train_end is not None
                                        else market.n_dates - 1)

        streams = np.random.SeedSequence(seed).spawn(5)
        self._rng_init = np.random.default_rng(streams[0])
        self._rng_pretrain = np.random.default_rng(streams[1])
        self._rng_episode = np.random.default_rng(streams[2])
        self._rng_action = np.random.default_rng(streams[3])
        self._rng_replay = np.random.default_rng(streams[4])

        self.online = QNetwork(dims, self._rng_init)
        self.target = self.online.clone()
        self.replay = ReplayMemory(settings.replay_capacity)
        self.cache = LatentCache(self.online, market, dims.window) \
            if settings.encoder_frozen else None

    # -- encoder pretraining -------------------------------------------------

    def pretrain_encoder(self, *, epochs: int = 100, lr: float = 1e-3,
                         batch_size: int = 32):
        """Autoencoder pretraining on the training slice; returns loss history."""
        train_end = self.episodes[-1].end
        windows = pretraining_windows(self.market, self.dims.window,
                                      start=self.episodes[0].start, end=train_end)
        out = pretrain_autoencoder(self.online, windows, epochs=epochs, lr=lr,
                                   batch_size=batch_size, rng=self._rng_pretrain)
        self.target.copy_from(self.online)
        if self.cache is not None:
            self.cache.invalidate()
        return out["loss_history"]

    def load_encoder(self, path) -> None:
        """Overwrite encoder weights from a pretraining checkpoint."""
        arrays, meta = load_arrays(path)
        for key in ("enc.W", "enc.U", "enc.b", "enc.Wp", "enc.bp"):
            if key not in arrays:
                raise ValidationError(f"{path}: missing encoder array {key!r}")
            if arrays[key].shape != self.online.params[key].shape:
                raise ValidationError(
                    f"{path}: {key} shape {arrays[key].shape} does not match "
                    f"network {self.online.params[key].shape}"
                )
            np.copyto(self.online.params[key], arrays[key])
        self.target.copy_from(self.online)
        if self.cache is not None:
            self.cache.invalidate()

    # -- inner pieces ----------------------------------------------------------

    def _q_single(self, net: QNetwork, t: int, weights: np.ndarray) -> np.ndarray:
        if self.cache is not None:
            lat = self.cache.get([t])
            return net.forward_latents(lat, weights[None, :])[0]
        X4 = self.market.window(t, self.dims.window)[None, ...]
        return net.forward(X4, weights[None, :])[0]

    def _update(self, batch) -> float:
        targets, mask = build_targets(
            self.target, self.market, self.trade, batch, self.settings.gamma,
            cache=self.cache, window=self.dims.window,
        )
        weights = np.stack([item.weights for item in batch])
        ts = [item.t for item in batch]
        if self.cache is not None:
            lat = self.cache.get(ts)
            q, fcache = self.online.forward_latents(lat, weights, want_cache=True)
        else:
            X4 = np.stack([self.market.window(t, self.dims.window) for t in ts])
            q, fcache = self.online.forward(X4, weights, want_cache=True)
        loss, dq = masked_td_loss(q, targets, mask)
        if not np.isfinite(loss):
            raise NumericError("TD loss is not finite; lower the learning rate")
        grads = self.online.backward(fcache, dq,
                                     encoder_frozen=self.settings.encoder_frozen)
        sgd_update(self.online.params, grads, self.settings.learning_rate)
        return loss

    def run_episode(self, slice_: EpisodeSlice, epsilon: float):
        """One epoch: walk the episode, store lists, update every step."""
        env = MarketEnvironment(
            self.market,
            episode_config(self.trade, slice_.start, slice_.end, self.dims.window),
        )
        env.reset()
        losses = []
        episode_return = 0.0
        while not env.done:
            state = env.state
            q = self._q_single(self.online, state.t, state.weights)
            ctx = env.feasibility_context()
            _, executed, _ = choose_action(q, ctx, epsilon, self._rng_action)
            branches = env.simulate_all()
            terminal = state.t + 1 >= env.config.end
            self.replay.push(experience_from_branches(state.t, state.weights,
                                                      branches, terminal))
            outcome = env.step(executed)
            episode_return += outcome.reward
            batch = self.replay.sample(self._rng_replay, self.settings.batch_size)
            losses.append(self._update(batch))
        return float(np.mean(losses)), episode_return

    # -- main loop ---------------------------------------------------------------

    def run(self, *, log_path=None, checkpoint_dir=None, checkpoint_every: int = 0,
            progress=None) -> TrainingResult:
        """Full training: settings.epochs episodes with per-epoch target sync.

        Writes one CSV row per epoch to log_path when given; saves the
        online parameters every checkpoint_every epochs (and always at the
        end) into checkpoint_dir when given.
        """
        result = TrainingResult()
        log_handle = open(log_path, "w", newline="", encoding="utf-8") if log_path else None
        writer = None
        if log_handle:
            writer = csv.writer(log_handle)
            writer.writerow(["epoch", "episode_year", "loss_mean", "episode_return", "epsilon"])
        try:
            for epoch in range(self.settings.epochs):
                eps = epsilon_at(epoch, self.settings.epochs, self.settings.epsilon_start,
                                 self.settings.epsilon_end,
                                 self.settings.epsilon_decay_fraction)
                slice_ = sample_episode(self.episodes, self.settings.recency_bias,
                                        self._rng_episode)
                loss_mean, episode_return = self.run_episode(slice_, eps)
                self.target.copy_from(self.online)
                record = EpochRecord(epoch=epoch, episode_year=slice_.year,
                                     loss_mean=loss_mean, episode_return=episode_return,
                                     epsilon=eps)
                result.records.append(record)
                if writer:
                    writer.writerow([record.epoch, record.episode_year,
                                     repr(float(record.loss_mean)),
                                     repr(float(record.episode_return)),
                                     repr(float(record.epsilon))])
                if progress is not None:
                    progress(record)
                if (checkpoint_dir and checkpoint_every > 0
                        and (epoch + 1) % checkpoint_every == 0):
                    result.checkpoints.append(
                        self.save(checkpoint_dir, f"epoch_{epoch + 1:05d}"))
            if checkpoint_dir:
                result.checkpoints.append(self.save(checkpoint_dir, "final"))
        finally:
            if log_handle:
                log_handle.close()
        return result

    def save(self, directory, stem: str) -> str:
        path = Path(directory) / f"{stem}.qtc"
        save_network(self.online, path)
        return str(path)
