from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hvacrl import env as E
from hvacrl.errors import ActionOutOfRange, ConfigError, EmptyWeather, EnvGroupMissing, EpisodeFinished
from hvacrl.weather import WeatherSeries, synthesize

from oracles import action_rows, reward_oracle

WEATHER = synthesize("hot", seed=0, hours=200)


def flat(cmd):
    out = []
    for h, c in zip(cmd.heating, cmd.cooling):
        out.append(h)
        if c is not None:
            out.append(c)
    return out


@pytest.mark.parametrize("table, fixture", [(E.WAREHOUSE_ACTIONS, "warehouse_actions.csv"),
                                            (E.DATACENTER_ACTIONS, "datacenter_actions.csv")])
def test_action_tables_match_transcription(table, fixture):
    rows = action_rows(fixture)
    assert len(table) == len(rows) == 10
    for a, row in enumerate(rows):
        assert flat(E.decode_action(table, a)) == row


def test_named_action_rows():
    assert flat(E.decode_action(E.WAREHOUSE_ACTIONS, 0)) == [15, 30, 15, 30, 15]
    assert flat(E.decode_action(E.WAREHOUSE_ACTIONS, 9)) == [21, 21, 21, 21, 24]
    assert flat(E.decode_action(E.DATACENTER_ACTIONS, 5)) == [20, 25, 20, 25]


@pytest.mark.parametrize("a", [-1, 10, 2.0, True, "3"])
def test_decode_rejects_bad_actions(a):
    with pytest.raises(ActionOutOfRange):
        E.decode_action(E.WAREHOUSE_ACTIONS, a)


def test_fixed_action_band_inside_comfort_range():
    for table in (E.WAREHOUSE_ACTIONS, E.DATACENTER_ACTIONS):
        assert all(18 <= v <= 27 for v in flat(table[7]))


def test_reward_examples():
    p = E.RewardParams()
    assert E.reward(0.0, [20.0, 21.0, 22.0], p) == 0.0
    assert E.reward(10_000.0, [20.0, 21.0], p) == pytest.approx(-0.5, abs=1e-12)
    assert E.reward(0.0, [29.0, 20.0, 20.0], p) == pytest.approx(-6.5, abs=1e-12)


def test_reward_matches_oracle_on_random_cases():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        w = rng.uniform(0, 1)
        lp, lt = rng.uniform(1e-6, 1e-2), rng.uniform(0.1, 10)
        lo = rng.uniform(10, 22)
        hi = lo + rng.uniform(0.5, 12)
        temps = list(rng.uniform(0, 45, rng.integers(1, 4)))
        p = rng.uniform(0, 2e5)
        params = E.RewardParams(w, lp, lt, lo, hi)
        assert abs(E.reward(p, temps, params) - reward_oracle(p, temps, w, lp, lt, lo, hi)) <= 1e-12


def test_distance_penalty_variant():
    p = E.RewardParams(penalty="distance")
    assert E.reward(0.0, [29.0, 16.0], p) == pytest.approx(-0.5 * (2.0 + 2.0))


def test_reward_params_validation():
    with pytest.raises(ConfigError):
        E.RewardParams(omega=1.5)
    with pytest.raises(ConfigError):
        E.RewardParams(t_min=27, t_max=18)
    with pytest.raises(ConfigError):
        E.RewardParams(lambda_p=0)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 1), st.floats(0, 3e5), st.lists(st.floats(-30, 60), min_size=1, max_size=3))
def test_reward_nonpositive(w, p, temps):
    assert E.reward(p, temps, E.RewardParams(omega=w)) <= 0.0


@settings(max_examples=200, deadline=None)
@given(st.floats(0.01, 0.49), st.floats(0.01, 0.49), st.floats(1, 3e5), st.floats(27.5, 50))
def test_reward_terms_move_with_omega(w, dw, p, hot):
    lo, hi = E.RewardParams(omega=w), E.RewardParams(omega=w + dw)
    energy = lambda params: -params.omega * params.lambda_p * p
    comfort = lambda params: E.reward(p, [hot], params) - energy(params)
    assert abs(comfort(hi)) < abs(comfort(lo))
    assert abs(energy(hi)) > abs(energy(lo))


@settings(max_examples=200, deadline=None)
@given(st.floats(-50, 80))
def test_comfort_zero_set(t):
    assert (E.comfort_violation(t, E.RewardParams()) == 0.0) == (18.0 <= t <= 27.0)


def test_make_env_sizes():
    wh = E.make_env("warehouse", WEATHER)
    dc = E.make_env("datacenter", WEATHER)
    assert wh.n_actions == dc.n_actions == 10
    assert len(wh.observation_spec) == 19
    assert len(dc.observation_spec) == 25
    assert wh.episode_length == (200 - 1) * 4


def test_episode_length_formula():
    env = E.make_env("warehouse", WEATHER, dt=600.0)
    assert env.episode_length == int(3600 * 199 // 600)


def test_make_env_errors():
    with pytest.raises(ConfigError):
        E.make_env("igloo", WEATHER)
    with pytest.raises(EmptyWeather):
        E.make_env("warehouse", None)
    with pytest.raises(ConfigError):
        E.make_env("warehouse", WEATHER, dt=0.0)


def test_same_seed_same_initial_observation():
    a = E.make_env("warehouse", WEATHER, seed=11).observe()
    b = E.make_env("warehouse", WEATHER, seed=11).observe()
    np.testing.assert_array_equal(a, b)
    temps = a[[E.make_env("warehouse", WEATHER).observation_spec.index(n) for n in ("T_office", "T_fs", "T_bs")]]
    assert np.all((temps >= 18) & (temps <= 24))


@pytest.mark.parametrize("building, names", [
    ("warehouse", ["T_office_hs", "T_office_cs", "T_fs_hs", "T_fs_cs", "T_bs_hs"]),
    ("datacenter", ["T_wz_hs", "T_wz_cs", "T_ez_hs", "T_ez_cs"]),
])
def test_reset_observes_action_five_setpoints(building, names):
    env = E.make_env(building, WEATHER)
    obs = env.reset()
    spec = env.observation_spec
    assert [obs[spec.index(n)] for n in names] == flat(env.action_table[5])


def test_setpoints_follow_last_action():
    env = E.make_env("warehouse", WEATHER)
    result = env.step(0)
    assert result.observation[env.observation_spec.index("T_office_hs")] == 15


def test_office_empty_on_sunday_night():
    # hour 0 of the weather is Monday 00:00, so hour 6*24+3 is Sunday 03:00
    series = synthesize("hot", seed=0, hours=6 * 24 + 10)
    env = E.make_env("warehouse", series.slice(6 * 24 + 3, 6 * 24 + 10))
    assert env.hour_of_week() == 6 * 24 + 3
    assert env.observe()[env.observation_spec.index("C_office")] == 0
    weekday = E.make_env("warehouse", series.slice(10, 20))
    assert weekday.observe()[weekday.observation_spec.index("C_office")] == 10


def test_datacenter_comfort_proxies():
    env = E.make_env("datacenter", WEATHER, seed=4)
    obs = env.observe()
    spec = env.observation_spec
    t = obs[spec.index("T_wz")]
    assert obs[spec.index("T_wz_cmr")] == t == obs[spec.index("T_wz_pa")]
    assert obs[spec.index("T_wz_ccv")] == 0.5
    assert obs[spec.index("T_wz_cfm")] == pytest.approx(min(100.0, 100.0 * abs(t - 23.0) / 10.0))


def test_groups_partition_variables():
    spec = E.make_env("warehouse", WEATHER).observation_spec
    groups = {v.name: v.group for v in spec.variables}
    assert sorted(n for n, g in groups.items() if g == "Energy") == ["P_total"]
    assert all(groups[n] == "Action" for n in groups if n.endswith(("_hs", "_cs")))
    assert groups["C_office"] == "Aux"


def test_step_contract_and_episode_end():
    series = synthesize("hot", seed=1, hours=3)
    env = E.make_env("warehouse", series)
    results = [env.step(a) for a in (0, 3, 7, 9, 1, 2, 4, 5)]
    assert all(r.reward <= 0 for r in results)
    assert [r.done for r in results] == [False] * 7 + [True]
    assert results[-1].info["sim_time"] == 8 * 900.0
    assert len(results[0].info["violations"]) == 3
    with pytest.raises(EpisodeFinished):
        env.step(0)
    with pytest.raises(ActionOutOfRange):
        E.make_env("warehouse", series).step(10)


def test_reset_restarts_episode():
    series = synthesize("hot", seed=1, hours=3)
    env = E.make_env("warehouse", series)
    while not env.done:
        env.step(5)
    env.reset()
    assert not env.done and env.steps == 0


def test_equal_seeds_equal_streams():
    actions = np.random.default_rng(0).integers(0, 10, 60)
    streams = []
    for _ in range(2):
        env = E.make_env("datacenter", WEATHER, seed=5)
        streams.append([env.step(int(a)) for a in actions])
    for a, b in zip(*streams):
        np.testing.assert_array_equal(a.observation, b.observation)
        assert a.reward == b.reward and a.info == b.info


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 9), min_size=1, max_size=40), st.integers(0, 1000))
def test_reward_nonpositive_along_trajectories(actions, seed):
    env = E.make_env("warehouse", WEATHER, seed=seed)
    for a in actions:
        assert env.step(a).reward <= 0.0


def test_filter_env_only():
    env = E.make_env("warehouse", WEATHER)
    sub, spec = E.filter_observation(env.observe(), env.observation_spec, {"Env"})
    assert len(sub) == len(spec) == 12
    assert spec.names[:6] == ["T_out", "H_out", "V_out", "W_out", "S_diffuse", "S_direct"]


def test_filter_full_set_is_identity():
    env = E.make_env("datacenter", WEATHER)
    obs = env.observe()
    sub, spec = E.filter_observation(obs, env.observation_spec, set(E.GROUPS))
    np.testing.assert_array_equal(sub, obs)
    assert spec == env.observation_spec


def test_filter_requires_env():
    env = E.make_env("warehouse", WEATHER)
    with pytest.raises(EnvGroupMissing):
        E.filter_observation(env.observe(), env.observation_spec, {"Energy"})
    with pytest.raises(EnvGroupMissing):
        E.filter_observation(env.observe(), env.observation_spec, set())


@settings(max_examples=20, deadline=None)
@given(st.sets(st.sampled_from(["Energy", "Action", "Aux"])), st.lists(st.integers(0, 9), max_size=10))
def test_filter_commutes_with_observe(extra, actions):
    groups = {"Env"} | extra
    a = E.make_env("datacenter", WEATHER, seed=2)
    b = E.make_env("datacenter", WEATHER, seed=2)
    filt = E.ObservationFilter(a.observation_spec, tuple(groups)).fit()
    for act in actions:
        a.step(act)
        b.step(act)
    direct = E.filter_observation(a.observe(), a.observation_spec, groups)[0]
    np.testing.assert_array_equal(direct, filt.transform(b.observe()))


def test_observation_filter_estimator_api():
    env = E.make_env("warehouse", WEATHER)
    filt = E.ObservationFilter(env.observation_spec, ("Env", "Energy"))
    assert filt.get_params()["groups"] == ("Env", "Energy")
    X = np.stack([env.observe(), env.step(3).observation])
    out = filt.fit_transform(X)
    assert out.shape == (2, 13)
