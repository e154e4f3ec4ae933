from fractions import Fraction

import numpy as np
import pytest

from qtrader.actionspace import FeasibilityContext, decode, encode
from qtrader.environment import (MarketEnvironment, TradeParams, episode_config)
from qtrader.errors import ValidationError
from qtrader.qnet import Dims, QNetwork, load_network
from qtrader.trainer import (EpisodeSlice, ExperienceList, LatentCache,
                             ReplayMemory, Trainer, TrainerSettings,
                             build_targets, choose_action, epsilon_at,
                             episode_probabilities, experience_from_branches,
                             pretraining_windows, sample_episode,
                             yearly_episodes)

TINY = Dims(n_assets=2, window=4, hidden=8, latent=4, h1=16, h2=8)


def tiny_trainer(market, seed=0, **kw):
    defaults = dict(epochs=3, batch_size=8, gamma=0.9, learning_rate=1e-4,
                    replay_capacity=50, recency_bias=0.3)
    defaults.update(kw)
    return Trainer(market, TINY, TrainerSettings(**defaults), TradeParams(),
                   train_start=0, train_end=None, seed=seed)


class TestExperience:
    def test_from_branches(self, small_market):
        env = MarketEnvironment(small_market,
                                episode_config(TradeParams(), 0, 10, 4))
        env.reset()
        branches = env.simulate_all()
        item = experience_from_branches(env.state.t, env.state.weights,
                                        branches, terminal=False)
        assert isinstance(item, ExperienceList)
        assert item.t == env.state.t
        assert list(item.action_indices) == [b.action_index for b in branches]
        assert item.rewards.tolist() == [b.reward for b in branches]
        np.testing.assert_array_equal(item.next_weights[0], branches[0].next_weights)
        assert not item.terminal


class TestReplayMemory:
    def test_capacity_validation(self):
        with pytest.raises(ValidationError):
            ReplayMemory(0)

    def test_fifo_eviction(self):
        mem = ReplayMemory(3)
        items = [ExperienceList(t=i, weights=np.zeros(3), action_indices=[0],
                                rewards=np.zeros(1), next_weights=np.zeros((1, 3)),
                                next_values=np.zeros(1), terminal=False)
                 for i in range(5)]
        for it in items:
            mem.push(it)
        assert len(mem) == 3
        got = sorted(x.t for x in mem.sample(np.random.default_rng(0), 3))
        assert got == [2, 3, 4]

    def test_sample_without_replacement(self):
        mem = ReplayMemory(10)
        for i in range(6):
            mem.push(ExperienceList(t=i, weights=np.zeros(3), action_indices=[0],
                                    rewards=np.zeros(1), next_weights=np.zeros((1, 3)),
                                    next_values=np.zeros(1), terminal=False))
        rng = np.random.default_rng(1)
        batch = mem.sample(rng, 6)
        assert sorted(x.t for x in batch) == list(range(6))
        assert len(mem.sample(rng, 100)) == 6

    def test_sample_empty_raises(self):
        with pytest.raises(ValidationError):
            ReplayMemory(5).sample(np.random.default_rng(0), 2)


class TestEpisodes:
    def test_yearly_slices(self, planted):
        slices = yearly_episodes(planted, window=10)
        assert [s.year for s in slices] == [2018, 2019, 2020]
        assert slices[0].start == 0
        assert slices[-1].end == planted.n_dates - 1
        for s in slices:
            assert planted.year_of(s.start) == s.year
            assert planted.year_of(s.end) == s.year

    def test_min_decisions_filter(self, planted):
        # cutting the range mid-January leaves too few decisions in 2018
        slices = yearly_episodes(planted, window=45, min_decisions=10)
        assert [s.year for s in slices] == [2019, 2020]

    def test_range_validation(self, planted):
        with pytest.raises(ValidationError):
            yearly_episodes(planted, window=4, start=50, end=10)
        with pytest.raises(ValidationError, match="no calendar year"):
            yearly_episodes(planted, window=49, end=50)

    def test_probabilities_frozen_pair(self):
        np.testing.assert_allclose(episode_probabilities(2, 0.5),
                                   [1 / 3, 2 / 3], rtol=1e-15)

    def test_probabilities_frozen_five(self):
        probs = episode_probabilities(5, 0.3)
        newest = Fraction(3, 10) / (1 - Fraction(7, 10) ** 5)
        assert probs[-1] == pytest.approx(float(newest), rel=1e-14)
        assert probs[-1] == pytest.approx(0.360607, abs=5e-7)
        np.testing.assert_allclose(probs[:-1], probs[1:] * 0.7, rtol=1e-14)
        assert probs.sum() == pytest.approx(1.0, abs=1e-14)

    def test_probabilities_validation(self):
        with pytest.raises(ValidationError):
            episode_probabilities(3, 0.0)
        with pytest.raises(ValidationError):
            episode_probabilities(3, 1.0)
        with pytest.raises(ValidationError):
            episode_probabilities(0, 0.3)

    def test_sample_episode_deterministic(self):
        slices = [EpisodeSlice(y, 0, 1) for y in (2018, 2019, 2020)]
        rng = np.random.default_rng(5)
        seq1 = [sample_episode(slices, 0.3, rng).year for _ in range(10)]
        rng = np.random.default_rng(5)
        seq2 = [sample_episode(slices, 0.3, rng).year for _ in range(10)]
        assert seq1 == seq2
        assert set(seq1) <= {2018, 2019, 2020}


class TestEpsilon:
    def test_frozen_schedule(self):
        assert epsilon_at(0, 500, 1.0, 0.1, 0.8) == 1.0
        assert epsilon_at(200, 500, 1.0, 0.1, 0.8) == pytest.approx(0.55)
        assert epsilon_at(400, 500, 1.0, 0.1, 0.8) == 0.1
        assert epsilon_at(499, 500, 1.0, 0.1, 0.8) == 0.1

    def test_tiny_run_schedule(self):
        # 3 epochs, decay over round(2.4) = 2 of them
        assert epsilon_at(0, 3, 1.0, 0.1, 0.8) == 1.0
        assert epsilon_at(1, 3, 1.0, 0.1, 0.8) == pytest.approx(0.55)
        assert epsilon_at(2, 3, 1.0, 0.1, 0.8) == 0.1


class TestChooseAction:
    def setup_method(self):
        self.ctx = FeasibilityContext(
            weights=np.array([0.015, 0.485, 0.5]), value=1_000_000.0,
            trading_size=10_000.0, sell_cost=0.0025, buy_cost=0.0025,
        )

    def test_greedy_picks_argmax(self):
        q = np.zeros(9)
        q[encode(np.array([0, -1]))] = 1.0
        intended, executed, idx = choose_action(q, self.ctx, 0.0,
                                                np.random.default_rng(0))
        assert intended == encode(np.array([0, -1]))
        assert idx == intended
        assert executed.tolist() == [0, -1]

    def test_infeasible_greedy_gets_mapped(self):
        q = np.zeros(9)
        q[encode(np.array([1, 1]))] = 1.0  # two buys, cash covers one
        intended, executed, idx = choose_action(q, self.ctx, 0.0,
                                                np.random.default_rng(0))
        assert intended == encode(np.array([1, 1]))
        assert idx != intended
        assert 0 in executed.tolist()
        assert 1 in executed.tolist()

    def test_explore_consumes_integer_draw(self):
        q = np.zeros(9)
        rng = np.random.default_rng(3)
        picks = {choose_action(q, self.ctx, 1.0, rng)[0] for _ in range(60)}
        assert len(picks) > 3  # exploring, not pinned to argmax

    def test_executed_always_feasible(self, rng):
        from qtrader.actionspace import is_feasible
        for _ in range(50):
            q = rng.normal(size=9)
            _, executed, _ = choose_action(q, self.ctx, 0.5, rng)
            assert is_feasible(self.ctx, executed)


class TestLatentCache:
    def test_matches_direct_encode(self, small_market):
        net = QNetwork(TINY, np.random.default_rng(0))
        cache = LatentCache(net, small_market, TINY.window)
        ts = [5, 7, 5, 9]
        direct = net.encode(np.stack([small_market.window(t, TINY.window)
                                      for t in sorted(set(ts))]))
        got = cache.get(ts)
        by_t = dict(zip(sorted(set(ts)), direct))
        for row, t in zip(got, ts):
            np.testing.assert_array_equal(row, by_t[t])

    def test_hits_do_not_recompute(self, small_market, monkeypatch):
        net = QNetwork(TINY, np.random.default_rng(0))
        cache = LatentCache(net, small_market, TINY.window)
        calls = []
        original = net.encode
        monkeypatch.setattr(net, "encode",
                            lambda X4: calls.append(X4.shape[0]) or original(X4))
        cache.get([4, 5])
        cache.get([5, 4, 5])
        assert calls == [2]
        cache.get([4, 6])
        assert calls == [2, 1]

    def test_invalidate(self, small_market):
        net = QNetwork(TINY, np.random.default_rng(0))
        cache = LatentCache(net, small_market, TINY.window)
        before = cache.get([5]).copy()
        net.params["enc.b"] += 0.1
        stale = cache.get([5])
        np.testing.assert_array_equal(stale, before)  # stale by design
        cache.invalidate()
        fresh = cache.get([5])
        assert not np.allclose(fresh, before)


def fill_replay(market, n_items, window=4, terminal_last=False):
    env = MarketEnvironment(market, episode_config(TradeParams(), 0,
                                                   market.n_dates - 1, window))
    env.reset()
    items = []
    for k in range(n_items):
        branches = env.simulate_all()
        is_last = terminal_last and k == n_items - 1
        items.append(experience_from_branches(env.state.t, env.state.weights,
                                              branches, terminal=is_last))
        env.step(np.array([0, 0]))
    return items


class TestBuildTargets:
    def test_terminal_targets_are_rewards(self, small_market):
        net = QNetwork(TINY, np.random.default_rng(0))
        items = fill_replay(small_market, 3, terminal_last=True)
        batch = [items[-1]]
        targets, mask = build_targets(net, small_market, TradeParams(), batch,
                                      gamma=0.9, window=TINY.window)
        assert mask.sum() == len(batch[0].action_indices)
        np.testing.assert_array_equal(targets[0, batch[0].action_indices],
                                      batch[0].rewards)

    def test_gamma_zero_reduces_to_rewards(self, small_market):
        net = QNetwork(TINY, np.random.default_rng(0))
        batch = fill_replay(small_market, 2)
        targets, _ = build_targets(net, small_market, TradeParams(), batch,
                                   gamma=0.0, window=TINY.window)
        for li, item in enumerate(batch):
            np.testing.assert_array_equal(targets[li, item.action_indices],
                                          item.rewards)

    def test_bootstrap_matches_manual_loop(self, small_market):
        net = QNetwork(TINY, np.random.default_rng(1))
        trade = TradeParams()
        batch = fill_replay(small_market, 3)
        targets, mask = build_targets(net, small_market, trade, batch,
                                      gamma=0.9, window=TINY.window)
        from qtrader.actionspace import map_action
        for li, item in enumerate(batch):
            for slot, a_idx in enumerate(item.action_indices):
                w_next = item.next_weights[slot]
                qrow = net.q_values(small_market.window(item.t + 1, TINY.window),
                                    w_next)
                ctx = FeasibilityContext(weights=w_next,
                                         value=float(item.next_values[slot]),
                                         trading_size=trade.trading_size,
                                         sell_cost=trade.sell_cost,
                                         buy_cost=trade.buy_cost)
                best = map_action(ctx, decode(int(np.argmax(qrow)), 2), qrow)
                expected = item.rewards[slot] + 0.9 * qrow[encode(best)]
                assert targets[li, a_idx] == pytest.approx(expected, rel=1e-9)
            off = np.ones(9, bool)
            off[item.action_indices] = False
            assert np.all(targets[li, off] == 0.0)
            assert np.all(~mask[li, off])

    def test_cache_path_matches_window_path(self, small_market):
        net = QNetwork(TINY, np.random.default_rng(2))
        batch = fill_replay(small_market, 4)
        cache = LatentCache(net, small_market, TINY.window)
        via_cache, m1 = build_targets(net, small_market, TradeParams(), batch,
                                      gamma=0.9, cache=cache)
        via_window, m2 = build_targets(net, small_market, TradeParams(), batch,
                                       gamma=0.9, window=TINY.window)
        np.testing.assert_array_equal(m1, m2)
        np.testing.assert_allclose(via_cache, via_window, rtol=1e-12, atol=1e-15)

    def test_needs_window_or_cache(self, small_market):
        net = QNetwork(TINY, np.random.default_rng(0))
        batch = fill_replay(small_market, 2)
        with pytest.raises(ValidationError, match="window"):
            build_targets(net, small_market, TradeParams(), batch, gamma=0.9)


class TestTrainerSettings:
    def test_validation(self):
        with pytest.raises(ValidationError):
            TrainerSettings(gamma=1.5)
        with pytest.raises(ValidationError):
            TrainerSettings(learning_rate=0.0)
        with pytest.raises(ValidationError):
            TrainerSettings(epsilon_start=0.5, epsilon_end=0.9)
        with pytest.raises(ValidationError):
            TrainerSettings(epsilon_decay_fraction=0.0)
        with pytest.raises(ValidationError):
            TrainerSettings(epochs=0)


def test_pretraining_windows(small_market):
    windows = pretraining_windows(small_market, 4)
    first = max(0, 4)
    expected_m = small_market.n_assets * (small_market.n_dates - 1 - first)
    assert windows.shape == (expected_m, 4, 5)
    np.testing.assert_array_equal(windows[:2], small_market.window(first, 4))
    with pytest.raises(ValidationError):
        pretraining_windows(small_market, 4, start=0, end=3)


class TestTrainer:
    def test_dims_mismatch(self, small_market):
        bad = Dims(n_assets=3, window=4, hidden=8, latent=4, h1=16, h2=8)
        with pytest.raises(ValidationError, match="assets"):
            Trainer(small_market, bad, TrainerSettings(), TradeParams())

    def test_three_epoch_run(self, small_market, tmp_path):
        trainer = tiny_trainer(small_market, seed=7)
        log = tmp_path / "log.csv"
        ckpt = tmp_path / "ckpts"
        ckpt.mkdir()
        result = trainer.run(log_path=log, checkpoint_dir=ckpt, checkpoint_every=2)
        assert [r.epoch for r in result.records] == [0, 1, 2]
        assert all(np.isfinite(r.loss_mean) for r in result.records)

        lines = log.read_text().strip().splitlines()
        assert lines[0] == "epoch,episode_year,loss_mean,episode_return,epsilon"
        assert len(lines) == 4
        row = lines[1].split(",")
        assert float(row[2]) == result.records[0].loss_mean
        assert float(row[4]) == 1.0

        names = sorted(p.name for p in ckpt.iterdir())
        assert names == ["epoch_00002.qtc", "final.qtc"]
        final = load_network(ckpt / "final.qtc")
        for k in trainer.online.params:
            np.testing.assert_array_equal(final.params[k], trainer.online.params[k])
        # target synced at the end of every epoch
        for k in trainer.online.params:
            np.testing.assert_array_equal(trainer.target.params[k],
                                          trainer.online.params[k])

    def test_same_seed_is_bit_identical(self, small_market, tmp_path):
        logs = []
        finals = []
        for run in range(2):
            trainer = tiny_trainer(small_market, seed=11)
            log = tmp_path / f"log{run}.csv"
            trainer.run(log_path=log)
            logs.append(log.read_bytes())
            finals.append({k: v.copy() for k, v in trainer.online.params.items()})
        assert logs[0] == logs[1]
        for k in finals[0]:
            np.testing.assert_array_equal(finals[0][k], finals[1][k])

    def test_different_seed_differs(self, small_market, tmp_path):
        params = []
        for seed in (1, 2):
            trainer = tiny_trainer(small_market, seed=seed)
            trainer.run()
            params.append(trainer.online.params)
        assert any(not np.array_equal(params[0][k], params[1][k])
                   for k in params[0])

    def test_frozen_encoder_stays_fixed(self, small_market):
        trainer = tiny_trainer(small_market, seed=3, encoder_frozen=True)
        enc_before = {k: v.copy() for k, v in trainer.online.params.items()
                      if k.startswith("enc.")}
        trainer.run()
        for k, v in enc_before.items():
            np.testing.assert_array_equal(trainer.online.params[k], v)

    def test_unfrozen_encoder_moves(self, small_market):
        trainer = tiny_trainer(small_market, seed=3, epochs=1,
                               encoder_frozen=False, learning_rate=1e-2)
        assert trainer.cache is None
        enc_before = trainer.online.params["enc.b"].copy()
        trainer.run()
        assert not np.array_equal(trainer.online.params["enc.b"], enc_before)

    def test_pretrain_then_train(self, small_market):
        trainer = tiny_trainer(small_market, seed=5, epochs=1)
        history = trainer.pretrain_encoder(epochs=4, lr=1e-3, batch_size=16)
        assert len(history) == 4
        # pretraining touched the encoder and the sync kept target equal
        np.testing.assert_array_equal(trainer.target.params["enc.W"],
                                      trainer.online.params["enc.W"])
        trainer.run()

    def test_load_encoder(self, small_market, tmp_path):
        from qtrader.checkpoint import save_arrays
        donor = QNetwork(TINY, np.random.default_rng(99))
        enc = {k: v for k, v in donor.params.items() if k.startswith("enc.")}
        path = tmp_path / "enc.qtc"
        save_arrays(path, enc, {"kind": "encoder"})

        trainer = tiny_trainer(small_market, seed=0)
        trainer.load_encoder(path)
        for k in enc:
            np.testing.assert_array_equal(trainer.online.params[k], enc[k])
            np.testing.assert_array_equal(trainer.target.params[k], enc[k])

        save_arrays(path, {k: v for k, v in enc.items() if k != "enc.b"},
                    {"kind": "encoder"})
        with pytest.raises(ValidationError, match="missing"):
            trainer.load_encoder(path)

        bad = dict(enc)
        bad["enc.b"] = np.zeros(3)
        save_arrays(path, bad, {"kind": "encoder"})
        with pytest.raises(ValidationError, match="shape"):
            trainer.load_encoder(path)
