import numpy as np
import pytest
from conftest import random_spd

from dynekf import backend_opt as bo
from dynekf import backend_std as bs
from dynekf import equiv, sim
from dynekf.errors import StateError
from dynekf.models import NoiseModel, measure
from dynekf.quadcost import StaticFeature, belief_deviation
from dynekf.state import FilterConfig, FrameData, Static


def test_collapse_without_terms_is_identity(rng):
    cost = bo.init(np.zeros(3), random_spd(rng, 3))
    assert bo.gn_collapse(cost) is cost
    assert cost.value() == pytest.approx(0.0)


def test_collapse_twice_is_idempotent(rng):
    cost = bo.init([1.0, 2.0, 0.3], 1e-3 * np.eye(3), FilterConfig(NoiseModel.from_levels(1, 1)))
    cost = bo.gn_collapse(bo.add_measurement_terms(cost, [(np.array([3.0, 1.0]), Static(0))]))
    z = measure(cost.prior.mean[:3], cost.prior.mean_of(StaticFeature(0))) + 0.01
    once = bo.gn_collapse(bo.add_measurement_terms(cost, [(z, Static(0))]))
    again = bo.gn_collapse(once)
    assert again is once
    assert np.linalg.eigvalsh(cost.prior.cov - once.prior.cov)[0] > -1e-15


def test_pending_terms_block_step_and_drop(rng):
    cost = bo.init(np.zeros(3), np.eye(3))
    cost = bo.add_measurement_terms(cost, [(np.ones(2), Static(0))])
    with pytest.raises(StateError):
        bo.step(cost, FrameData(0, None))
    with pytest.raises(StateError):
        bo.drop_history(cost)


def test_empty_last_frame_is_identity(rng):
    cost = bo.init(np.zeros(3), random_spd(rng, 3))
    out = bo.step(cost, FrameData(0, None))
    np.testing.assert_array_equal(out.prior.mean, cost.prior.mean)
    np.testing.assert_array_equal(out.prior.cov, cost.prior.cov)


def test_static_feature_contracts_over_two_steps():
    cfg = FilterConfig(NoiseModel(sigma_v=1e-6 * np.eye(2)))
    cost = bo.init(np.zeros(3), 1e-6 * np.eye(3), cfg)
    f = np.array([4.0, 1.0])
    x = np.zeros(3)
    var = []
    for t in range(3):
        cost = bo.step(cost, FrameData(t, [1.0, 0.0, 0.0], static={0: measure(x, f)}))
        var.append(np.trace(cost.state.estimate.marginal([StaticFeature(0)]).cov))
        x = x + [1.0, 0.0, 0.0]
    assert var[0] > var[1] > var[2]


def test_propagation_marginalizes_old_ego_pose(rng):
    cost = bo.init([1.0, 1.0, 0.2], random_spd(rng, 3, 1e-3))
    cost = bo.gn_collapse(bo.add_measurement_terms(cost, [(np.array([2.0, 0.5]), Static(3))]))
    odom = np.array([0.4, -0.1, 0.05])
    opt = bo.marg_collapse(bo.add_dynamics_term(cost, odom)).state
    std = bs.state_propagate(cost.state, odom)
    assert opt.t == std.t == 1
    dm, dc = belief_deviation(std.belief, opt.belief)
    assert max(dm, dc) < 1e-8


# ---------------------------------------------------------------------------
# sub-block agreement with the covariance form


@pytest.mark.parametrize("case", [c for c in equiv.CASES if c != "object_pose_augment"])
def test_sub_blocks_match_covariance_form(case):
    res = equiv.run_case(case, 100, seed=1)
    assert not res.errors
    assert res.deviation < 1e-8, res


def test_pose_cost_matches_pose_augmentation():
    res = equiv.run_case("object_pose_augment", 100, seed=1, object_cost="pose")
    assert not res.errors
    assert res.deviation < 1e-8


def test_feature_cost_matches_for_single_feature_objects():
    rng = np.random.default_rng(5)
    for _ in range(20):
        noise = equiv.random_noise(rng)
        cfg = FilterConfig(noise, drop_object_history=False, object_cost="feature")
        st = equiv.random_state(rng, cfg, n_static=1, objects={0: (1, True, ()), 1: (1, True, (3,))}, t=4)
        std = bs.object_pose_augment(st)
        opt = bo.gn_collapse(bo.add_object_transform_terms(bo.from_state(st))).state
        assert max(belief_deviation(std.belief, opt.belief)) < 1e-8


def test_feature_cost_adds_rigidity_information():
    # with several features the per-feature residuals also tighten the clouds
    rng = np.random.default_rng(6)
    cfg = FilterConfig(equiv.random_noise(rng), drop_object_history=False, object_cost="feature")
    st = equiv.random_state(rng, cfg, n_static=0, objects={0: (3, True, ())}, t=4)
    std = bs.object_pose_augment(st)
    opt = bo.gn_collapse(bo.add_object_transform_terms(bo.from_state(st))).state
    keys = st.belief.layout.keys
    assert np.trace(opt.belief.marginal(keys).cov) < np.trace(std.belief.marginal(keys).cov)
    np.testing.assert_allclose(std.belief.marginal(keys).cov, st.belief.cov, rtol=1e-12)


def test_full_scenario_pose_cost_matches_covariance_form(scenario):
    noise = NoiseModel.from_levels(1, 1)
    seed = sim.run_seeds(0, 1)[0]
    frames = sim.simulate_frames(scenario, noise, seed)
    prior = sim.sample_prior(scenario, noise, seed)
    cfg = FilterConfig(noise, object_cost="pose")
    std = sim.run_filter(scenario, frames, prior, cfg, "std", keep_beliefs=True)
    opt = sim.run_filter(scenario, frames, prior, cfg, "opt", keep_beliefs=True)
    assert sim.max_belief_deviation(std.beliefs, opt.beliefs) < 1e-6
