import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from advnav.cost import CostParams, scene_costs_array
from advnav.diffkit import Tape, grad_check, make_optimizer, ops
from advnav.models import (
    collate_dataset,
    forecast,
    forecast_positions,
    init_forecaster,
    init_planner,
    nll_graph,
    plan_positions,
)
from advnav.train import (
    LossResult,
    NonFiniteLossError,
    RoundLog,
    TrainConfig,
    adversarial_round,
    adversarial_train,
    forecaster_loss,
    logs_from_csv,
    logs_to_csv,
    make_adv_optimizers,
    minibatch_indices,
    planner_loss,
    train_mle,
)
from advnav.train import _check_finite
from helpers import SMALL, cv_dataset, random_batch

TC = TrainConfig(rounds=6, batch=4, lr_forecaster=1e-3, lr_planner=1e-3)


def stationary_planner(batch):
    """Planner with a zeroed output head, plus a batch whose demo matches it."""
    psi = init_planner(SMALL)
    psi["pl.out.W"][...] = 0
    psi["pl.out.b"][...] = 0
    fut = batch.future.copy()
    fut[:, 0] = batch.last_position[:, :1]
    return psi, dataclasses.replace(batch, future=fut)


class TestConfig:
    @pytest.mark.parametrize("kw", [{"rounds": -1}, {"batch": 0}, {"lr_planner": 0.0}, {"lam": -1.0},
                                    {"beta": -0.5}, {"adv_optimizer": "rmsprop"}, {"planner_objective": "x"}])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)

    def test_beta_follows_lambda_when_unset(self):
        assert TrainConfig(lam=3.0).beta_value == 1.0
        assert TrainConfig(lam=3.0, beta=None).beta_value == 3.0
        assert TrainConfig(lam=3.0, beta=0.0).beta_value == 0.0

    def test_dict_round_trip(self):
        assert TrainConfig.from_dict(TC.to_dict()) == TC
        with pytest.raises(ValueError, match="unknown"):
            TrainConfig.from_dict({"momentum": 0.9})


class TestForecasterLoss:
    def test_demo_plans_cancel(self):
        b = random_batch(0)
        theta = init_forecaster(SMALL)
        res = forecaster_loss(theta.attach(Tape()), b, b.robot_future, SMALL, TC)
        assert res.cost_diff == 0.0
        assert float(res.loss.value) == pytest.approx(TC.lam * res.nll, rel=1e-12)

    def test_lambda_scales_likelihood_only(self):
        b = random_batch(1)
        plans = b.robot_future + 0.3
        theta = init_forecaster(SMALL)
        r1 = forecaster_loss(theta.attach(Tape()), b, plans, SMALL, TC)
        r2 = forecaster_loss(theta.attach(Tape()), b, plans, SMALL, dataclasses.replace(TC, lam=5.0))
        assert r1.cost_diff == r2.cost_diff
        assert float(r2.loss.value - r1.loss.value) == pytest.approx((5.0 - TC.lam) * r1.nll, rel=1e-10)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_grad_check(self, seed):
        b = random_batch(seed + 10)
        # plans sit on top of the forecasts so the cost branches are active
        plans = forecast_positions(init_forecaster(SMALL), b, SMALL)[:, 1] + 0.05
        theta = init_forecaster(SMALL)
        rep = grad_check(lambda p: forecaster_loss(p, b, plans, SMALL, TC).loss, theta, max_coords=200, seed=seed)
        assert rep.passed, rep


class TestPlannerLoss:
    def test_demo_plan_beta_zero(self):
        psi, b = stationary_planner(random_batch(3))
        f = forecast_positions(init_forecaster(SMALL), b, SMALL)
        res = planner_loss(psi.attach(Tape()), b, f, SMALL, dataclasses.replace(TC, beta=0.0))
        assert float(res.loss.value) == 0.0

    def test_demo_term_has_no_gradient(self):
        b = random_batch(4)
        f = forecast_positions(init_forecaster(SMALL), b, SMALL)
        cfg = dataclasses.replace(TC, beta=0.0)
        other = b.future.copy()
        other[:, 0] = f[:, 1]  # a demo that collides with the forecasts
        grads, values = [], []
        for batch in (b, dataclasses.replace(b, future=other)):
            psi = init_planner(SMALL)
            psi.zero_grad()
            res = planner_loss(psi.attach(Tape()), batch, f, SMALL, cfg)
            res.loss.tape.backward(res.loss)
            grads.append({k: g.copy() for k, g in psi.grads.items()})
            values.append(float(res.loss.value))
        assert values[0] != values[1]
        for k in grads[0]:
            np.testing.assert_array_equal(grads[0][k], grads[1][k])

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_grad_check(self, seed):
        b = random_batch(seed + 20)
        f = forecast_positions(init_forecaster(SMALL), b, SMALL)
        f[:, 1:] = b.last_position[:, :1, None] + 0.4  # humans close to the ego
        rep = grad_check(lambda p: planner_loss(p, b, f, SMALL, TC).loss, init_planner(SMALL), max_coords=200, seed=seed)
        assert rep.passed, rep


class TestMinibatches:
    def test_epochs_cover_everything(self):
        seen = np.concatenate([minibatch_indices(10, 3, 0, i) for i in range(10)])
        for e in range(3):
            assert sorted(seen[e * 10 : (e + 1) * 10]) == list(range(10))

    def test_random_access(self):
        a = [minibatch_indices(17, 5, 3, i, stream=2) for i in range(8)]
        assert np.array_equal(minibatch_indices(17, 5, 3, 6, stream=2), a[6])
        assert not np.array_equal(minibatch_indices(17, 5, 4, 6, stream=2), a[6])

    def test_batch_larger_than_data(self):
        assert len(minibatch_indices(3, 8, 0, 0)) == 8

    def test_empty(self):
        with pytest.raises(ValueError):
            minibatch_indices(0, 4, 0, 0)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 50), st.integers(1, 16), st.integers(0, 100), st.integers(0, 30))
def test_minibatch_in_range(n, size, seed, index):
    idx = minibatch_indices(n, size, seed, index)
    assert len(idx) == size and idx.min() >= 0 and idx.max() < n


class TestMle:
    def test_empty_dataset(self):
        with pytest.raises(ValueError, match="empty"):
            train_mle(random_batch(B=0), SMALL, TC)

    def test_descent_spot_check(self):
        data = collate_dataset(cv_dataset(3, H=4, T=3))
        cfg = dataclasses.replace(TC, mle_optimizer="sgd", mle_lr=1e-3, mle_batch=8)
        theta = init_forecaster(SMALL)
        opt = make_optimizer("sgd", cfg.mle_lr)

        def loss(p, mb):
            pred = ops.getitem(forecast(p, mb, SMALL), (slice(None), slice(1, None)))
            per = ops.mul(nll_graph(pred, mb.human_future, SMALL.sigma), mb.human_mask.astype(float))
            return ops.mean(ops.sum(per, axis=1))

        for i in range(20):
            mb = data.take(minibatch_indices(data.size, 8, 0, i))
            theta.zero_grad()
            before = loss(theta.attach(Tape()), mb)
            before.tape.backward(before)
            opt.step(theta)
            assert float(loss(theta.attach(Tape()), mb).value) <= float(before.value) + 1e-12

    def test_deterministic(self):
        data = collate_dataset(cv_dataset(2, H=4, T=3))
        cfg = dataclasses.replace(TC, mle_max_epochs=2)
        a, b = train_mle(data, SMALL, cfg), train_mle(data, SMALL, cfg)
        assert a[0].digest() == b[0].digest() and a[1].digest() == b[1].digest()

    def test_lambda_irrelevant(self):
        data = collate_dataset(cv_dataset(2, H=4, T=3))
        cfg = dataclasses.replace(TC, mle_max_epochs=2)
        a, b = train_mle(data, SMALL, cfg), train_mle(data, SMALL, dataclasses.replace(cfg, lam=50.0))
        assert a[0].digest() == b[0].digest() and a[1].digest() == b[1].digest()


class TestAdversarial:
    def setup_method(self):
        self.data = random_batch(5, B=12)
        self.theta, self.psi = init_forecaster(SMALL), init_planner(SMALL)

    def test_zero_rounds(self):
        th, ps, logs = adversarial_train(self.data, self.theta, self.psi, SMALL, dataclasses.replace(TC, rounds=0))
        assert th.digest() == self.theta.digest() and ps.digest() == self.psi.digest() and logs == []

    def test_inputs_not_mutated(self):
        d0, d1 = self.theta.digest(), self.psi.digest()
        adversarial_train(self.data, self.theta, self.psi, SMALL, TC)
        assert (self.theta.digest(), self.psi.digest()) == (d0, d1)

    def test_player_isolation(self):
        seen = []

        def hook(stage, i, theta, psi):
            seen.append((stage, theta.digest(), psi.digest()))

        adversarial_train(self.data, self.theta, self.psi, SMALL, TC, hook=hook)
        assert len(seen) == 3 * TC.rounds
        for k in range(0, len(seen), 3):
            (_, t0, p0), (_, t1, p1), (_, t2, p2) = seen[k : k + 3]
            assert t1 == t0 and p1 != p0  # planner step
            assert p2 == p1 and t2 != t1  # forecaster step

    def test_resume_matches_single_run(self):
        cfg = dataclasses.replace(TC, adv_optimizer="adam")
        th, ps, logs = adversarial_train(self.data, self.theta, self.psi, SMALL, cfg)
        opts = make_adv_optimizers(cfg)
        th1, ps1, logs1 = adversarial_train(self.data, self.theta, self.psi, SMALL, cfg, rounds=2, optimizers=opts)
        th2, ps2, logs2 = adversarial_train(self.data, th1, ps1, SMALL, cfg, start_round=2, rounds=4, optimizers=opts)
        assert th2.digest() == th.digest() and ps2.digest() == ps.digest()
        assert logs1 + logs2 == logs

    def test_checkpoint_cadence(self):
        calls = []
        cfg = dataclasses.replace(TC, checkpoint_every=4)
        adversarial_train(self.data, self.theta, self.psi, SMALL, cfg,
                          checkpoint=lambda done, *rest: calls.append(done))
        assert calls == [4, 6]

    def test_non_finite_reports_sample(self):
        hist = self.data.hist.copy()
        hist[:, 1] = np.nan
        bad = dataclasses.replace(self.data, hist=hist)
        with pytest.raises(NonFiniteLossError) as info:
            adversarial_train(bad, self.theta, self.psi, SMALL, TC)
        assert info.value.round_index == 0 and "episode" in info.value.sample

    def test_steps_do_not_increase_own_loss(self):
        b = self.data.take(np.arange(8))
        f_now = forecast_positions(self.theta, b, SMALL)
        p_now = plan_positions(self.psi, b, f_now, SMALL)
        cfg = dataclasses.replace(TC, lr_forecaster=1e-5, lr_planner=1e-5)
        theta, psi = self.theta.copy(), self.psi.copy()
        p0 = float(planner_loss(psi.attach(Tape()), b, f_now, SMALL, cfg).loss.value)
        f0 = float(forecaster_loss(theta.attach(Tape()), b, p_now, SMALL, cfg).loss.value)
        opt_f, opt_p = make_adv_optimizers(cfg)
        adversarial_round(b, theta, psi, opt_f, opt_p, SMALL, cfg, CostParams(), 0)
        assert float(planner_loss(psi.attach(Tape()), b, f_now, SMALL, cfg).loss.value) <= p0
        assert float(forecaster_loss(theta.attach(Tape()), b, p_now, SMALL, cfg).loss.value) <= f0

    def test_round_log_plan_cost(self):
        b = self.data.take(minibatch_indices(self.data.size, TC.batch, TC.seed, 0, stream=3))
        f = forecast_positions(self.theta, b, SMALL)
        p = plan_positions(self.psi, b, f, SMALL)
        expect = scene_costs_array(p, f[:, 1:], b.radii[:, 0], b.radii[:, 1:], b.human_mask).mean()
        _, _, logs = adversarial_train(self.data, self.theta, self.psi, SMALL, dataclasses.replace(TC, rounds=1))
        assert logs[0].plan_cost == pytest.approx(expect, rel=1e-12)


class TestRoundLog:
    def test_rejects_non_finite(self):
        with pytest.raises(ValueError, match="non-finite"):
            RoundLog(0, 0.0, float("nan"), 0, 0, 0, 0, 0, 0, 0)

    def test_csv_round_trip(self):
        _, _, logs = adversarial_train(random_batch(6, B=8), init_forecaster(SMALL), init_planner(SMALL), SMALL, TC)
        text = logs_to_csv(logs)
        assert logs_from_csv(text) == logs
        assert text.splitlines()[0].startswith("round,")

    def test_csv_bad_header(self):
        with pytest.raises(ValueError):
            logs_from_csv("a,b\n1,2\n")


class TestStepNormalization:
    def setup_method(self):
        self.b = random_batch(7, B=6)
        self.theta, self.psi = init_forecaster(SMALL), init_planner(SMALL)

    def moved(self, cfg):
        th, ps, _ = adversarial_train(self.b, self.theta, self.psi, SMALL, dataclasses.replace(cfg, rounds=1))
        return max(np.abs(th[k] - self.theta[k]).max() for k in th.names())

    def test_adam_step_shrinks_with_lambda(self):
        cfg = dataclasses.replace(TC, adv_optimizer="adam", lam=1e6, beta=1.0)
        assert 0 < self.moved(cfg) <= cfg.lr_forecaster / 1e6 * (1 + 1e-6)
        assert self.moved(dataclasses.replace(cfg, normalize_steps=False)) > cfg.lr_forecaster / 2

    def test_sgd_matches_scaled_loss(self):
        cfg = dataclasses.replace(TC, adv_optimizer="sgd", lam=50.0, beta=1.0)
        th, _, _ = adversarial_train(self.b, self.theta, self.psi, SMALL, dataclasses.replace(cfg, rounds=1))
        mb = self.b.take(minibatch_indices(self.b.size, cfg.batch, cfg.seed, 0, stream=3))
        f_now = forecast_positions(self.theta, mb, SMALL)
        p_now = plan_positions(self.psi, mb, f_now, SMALL)
        manual = self.theta.copy()
        res = forecaster_loss(manual.attach(Tape()), mb, p_now, SMALL, cfg)
        manual.zero_grad()
        res.loss.tape.backward(ops.scale(res.loss, 1 / 50.0))
        make_optimizer("sgd", cfg.lr_forecaster).step(manual)
        for k in th.names():
            np.testing.assert_allclose(th[k], manual[k], rtol=0, atol=1e-15)

    def test_no_change_at_unit_weights(self):
        cfg = dataclasses.replace(TC, lam=1.0, beta=1.0)
        a, _, _ = adversarial_train(self.b, self.theta, self.psi, SMALL, cfg)
        b, _, _ = adversarial_train(self.b, self.theta, self.psi, SMALL, dataclasses.replace(cfg, normalize_steps=False))
        assert a.digest() == b.digest()


def test_overflowing_batch_mean_is_reported():
    b = random_batch(8, B=2)
    per = np.array([1e308, 1e308])
    res = LossResult(Tape().constant(np.array(np.inf)), per, 0.0, 0.0)
    with pytest.raises(NonFiniteLossError) as info:
        _check_finite(res, b, 5, "forecaster")
    assert info.value.round_index == 5 and info.value.sample.startswith("episode")
