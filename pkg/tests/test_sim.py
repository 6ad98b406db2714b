import copy
import json

import numpy as np
import pytest

from dynekf import sim
from dynekf.errors import MetricError
from dynekf.models import NoiseModel, measure
from dynekf.state import FilterConfig


def test_scenario_structure(scenario):
    assert scenario.steps == 121
    assert len(scenario.agents) == 3
    assert scenario.landmarks.shape == (40, 2)
    extent = scenario.ego[-1, 0] - scenario.ego[0, 0]
    assert 800 < extent < 1200
    np.testing.assert_allclose(scenario.times[[0, -1]], [0.0, 60.0])


def test_scenario_is_deterministic():
    a, b = sim.build_scenario(4), sim.build_scenario(4)
    np.testing.assert_array_equal(a.ego, b.ego)
    np.testing.assert_array_equal(a.landmarks, b.landmarks)


def test_agent_clouds_are_rigid(scenario):
    for ag in scenario.agents:
        c = ag.clouds()
        d = np.linalg.norm(c[:, :, None] - c[:, None, :], axis=-1)
        np.testing.assert_allclose(d, np.broadcast_to(d[0], d.shape), atol=1e-9)


def test_truth_poses_reproduce_clouds(scenario, truth):
    from dynekf.models import object_transform

    for a, ag in enumerate(scenario.agents):
        t0 = scenario.first_seen(a)
        for t in (t0, 60, 120):
            np.testing.assert_allclose(object_transform(truth.agent_poses[a][t], ag.cloud(t0)), ag.cloud(t), atol=1e-9)


def test_scenario_config_validation():
    with pytest.raises(ValueError):
        sim.ScenarioConfig(n_landmarks=0).validate()
    with pytest.raises(ValueError):
        sim.ScenarioConfig(dt=0.0).validate()
    with pytest.raises(ValueError):
        sim.ScenarioConfig.from_dict({"lanes": 3})


def test_zero_noise_frames_are_exact(scenario):
    frames = sim.simulate_frames(scenario, NoiseModel.from_levels(3, 3), 1, inject=False)
    for t in (0, 50, 120):
        for k, z in frames[t].static.items():
            np.testing.assert_allclose(z, measure(scenario.ego[t], scenario.landmarks[k]), atol=1e-12)
    assert frames[-1].odom is None
    assert frames[0].new_objects == {0, 1, 2}


def test_frames_are_deterministic(scenario):
    noise = NoiseModel.from_levels(2, 2)
    s = sim.run_seeds(3, 2)[1]
    a = sim.simulate_frames(scenario, noise, s)
    b = sim.simulate_frames(scenario, noise, s)
    for fa, fb in zip(a, b):
        np.testing.assert_array_equal(fa.odom if fa.odom is not None else [], fb.odom if fb.odom is not None else [])
        for k in fa.static:
            np.testing.assert_array_equal(fa.static[k], fb.static[k])


def test_measurement_noise_covariance(scenario):
    noise = NoiseModel.from_levels(1, 3)
    errs = []
    for s in sim.run_seeds(11, 3):
        for t, fr in enumerate(sim.simulate_frames(scenario, noise, s)):
            for k, z in fr.static.items():
                errs.append(z - measure(scenario.ego[t], scenario.landmarks[k]))
    errs = np.array(errs)
    assert errs.shape[0] >= 10_000
    emp = np.cov(errs.T)
    assert np.abs(emp - noise.sigma_v).max() < 0.05 * noise.sigma_v[0, 0]


def test_common_random_numbers(scenario):
    s = sim.run_seeds(0, 1)[0]
    lo = sim.simulate_frames(scenario, NoiseModel.from_levels(1, 1), s)
    hi = sim.simulate_frames(scenario, NoiseModel.from_levels(1, 3), s)
    t = 10
    e_lo = lo[t].static[0] - measure(scenario.ego[t], scenario.landmarks[0])
    e_hi = hi[t].static[0] - measure(scenario.ego[t], scenario.landmarks[0])
    np.testing.assert_allclose(e_hi, 10 * e_lo, rtol=1e-6)


# ---------------------------------------------------------------------------
# metrics


def test_rms_of_truth_is_zero(truth):
    rep = sim.compute_rms(truth, truth)
    for g in rep.groups:
        np.testing.assert_array_equal(rep.rms(g), 0.0)
    assert rep.axes("static") == ("x", "y")


def test_rms_constant_offset(truth):
    est = copy.deepcopy(truth)
    est.ego[:, 0] += 0.1
    assert sim.compute_rms(est, truth).rms("ego", "x") == pytest.approx(0.1)


def test_rms_wraps_angles(truth):
    eps = 1e-3
    est, ref = copy.deepcopy(truth), copy.deepcopy(truth)
    est.ego[:, 2] = np.pi - eps
    ref.ego[:, 2] = -np.pi + eps
    assert sim.compute_rms(est, ref).rms("ego", "theta") == pytest.approx(2 * eps)


def test_rms_length_mismatch(truth):
    est = copy.deepcopy(truth)
    est.ego = est.ego[:-1]
    with pytest.raises(MetricError):
        sim.compute_rms(est, truth)


def test_rms_merge_pools_samples(truth):
    a, b = copy.deepcopy(truth), copy.deepcopy(truth)
    a.ego[:, 1] += 0.3
    b.ego[:, 1] -= 0.4
    pooled = sim.compute_rms(a, truth).merge(sim.compute_rms(b, truth))
    assert pooled.rms("ego", "y") == pytest.approx(np.sqrt((0.09 + 0.16) / 2))


# ---------------------------------------------------------------------------
# filters end to end


@pytest.mark.parametrize("backend", ["std", "opt"])
def test_zero_noise_recovers_truth(scenario, backend):
    res = sim.run_monte_carlo(scenario, [(1, 1)], runs=1, backend=backend, inject=False)[0]
    assert not res.failures and not res.psd_violations
    for g, axes in res.report.as_dict().items():
        for ax, v in axes.items():
            assert v < 1e-6, (g, ax, v)


def test_monte_carlo_failures_are_recorded(scenario, monkeypatch):
    def broken(*a, **k):
        from dynekf.errors import NumericError

        raise NumericError("boom")

    monkeypatch.setattr(sim, "run_filter", broken)
    res = sim.run_monte_carlo(scenario, [(1, 1)], runs=2)[0]
    assert res.report is None
    assert [i for i, _ in res.failures] == [0, 1]
    assert "boom" in res.failures[0][1]


def test_monte_carlo_is_deterministic(scenario):
    a = sim.run_monte_carlo(scenario, [(2, 2)], runs=2, seed=5)[0]
    b = sim.run_monte_carlo(scenario, [(2, 2)], runs=2, seed=5)[0]
    assert a.report.as_dict() == b.report.as_dict()


def test_ego_nees_band(scenario):
    res = sim.run_monte_carlo(scenario, [(1, 1)], runs=25, seed=0)[0]
    assert not res.failures
    assert 0.5 * 3 <= res.nees_mean <= 2.0 * 3


def test_both_backends_report_agreement(scenario):
    res = sim.run_monte_carlo(scenario, [(1, 1)], runs=1, backend="both", config=FilterConfig(object_cost="pose"))
    assert [r.backend for r in res] == ["std", "opt"]
    assert res[0].agreement < 1e-6
    assert res[0].report.as_dict().keys() == res[1].report.as_dict().keys()


# ---------------------------------------------------------------------------
# configuration and files


def test_config_round_trip(tmp_path):
    cfg = sim.ExperimentConfig(seed=3, runs=2, levels=[(1, 2)], backend="opt", smoothing=True)
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(cfg.to_dict()))
    assert sim.load_config(p) == cfg
    p.write_text(json.dumps({"config": cfg.to_dict(), "files": []}))
    assert sim.load_config(p) == cfg


def test_config_errors(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text("[1, 2]")
    with pytest.raises(TypeError):
        sim.load_config(p)
    with pytest.raises(ValueError):
        sim.ExperimentConfig.from_dict({"runs": 0})
    with pytest.raises(ValueError):
        sim.ExperimentConfig.from_dict({"levels": [[1, 4]]})
    with pytest.raises(ValueError):
        sim.ExperimentConfig.from_dict({"colour": "red"})


def test_trajectory_rows(scenario, truth):
    rows = sim.trajectory_rows(scenario, truth, truth)
    entities = 1 + len(scenario.landmarks) + sum(ag.body.shape[0] for ag in scenario.agents) + len(scenario.agents)
    assert len(rows) == scenario.steps * entities
    assert all(r[4:7] == r[7:10] for r in rows)
