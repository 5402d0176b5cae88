import json

import pytest
from hypothesis import given, strategies as st

from funcport.config import ConfigError, EstimatorConfig, build_market, build_utility, parse_config


def test_minimal_config_materializes_defaults():
    cfg = parse_config("{}")
    assert cfg.estimator.n_steps == 64
    assert cfg.estimator.n_inner == 10_000
    assert cfg.estimator.bump == 0.05
    assert cfg.market.family == "constant" and cfg.utility.family == "log"
    echoed = json.loads(cfg.dumps())
    assert echoed["market"]["sigma"] == [[0.2]]
    assert echoed["run"]["refinement"] == [32, 64, 128]


def test_gamma_one_rejected_with_path():
    with pytest.raises(ConfigError, match=r"^utility\.gamma: must satisfy gamma < 1 and gamma != 0$") as err:
        parse_config('{"utility": {"family": "power", "gamma": 1.0}}')
    assert err.value.path == "utility.gamma"


def test_unknown_key_suggests():
    with pytest.raises(ConfigError, match="did you mean 'market'"):
        parse_config('{"marekt": {}}')
    with pytest.raises(ConfigError, match=r"estimator\.n_inr.*'n_inner'"):
        parse_config('{"estimator": {"n_inr": 10}}')


def test_malformed_json_position():
    with pytest.raises(ConfigError, match="line 1 column 12"):
        parse_config('{"market": ')


@pytest.mark.parametrize("doc, path", [
    ('{"market": {"n": 0}}', "market.n"),
    ('{"market": {"horizon": -1}}', "market.horizon"),
    ('{"market": {"s0": [0.0]}}', "market.s0"),
    ('{"market": {"n": 2, "alpha": [0.1]}}', "market.alpha"),
    ('{"market": {"sigma": [[0.0]]}}', "market.sigma"),
    ('{"market": {"family": "heston"}}', "market.family"),
    ('{"market": {"family": "path-dependent-demo", "amplitude": 1.5}}', "market.amplitude"),
    ('{"market": {"family": "time-varying-deterministic", "sigma_slope": -2}}', "market.sigma_slope"),
    ('{"utility": {"x0": 0}}', "utility.x0"),
    ('{"utility": {"gamma": 0.5}}', "utility.gamma"),
    ('{"utility": {"family": "power"}}', "utility.gamma"),
    ('{"estimator": {"n_inner": 11}}', "estimator.n_inner"),
    ('{"estimator": {"bump": 0}}', "estimator.bump"),
    ('{"estimator": {"seed": -1}}', "estimator.seed"),
    ('{"estimator": {"antithetic": 1}}', "estimator.antithetic"),
    ('{"run": {"format": "xml"}}', "run.format"),
    ('{"run": {"sabotage": "yes"}}', "run.sabotage"),
    ('{"run": {"refinement": []}}', "run.refinement"),
    ('{"run": {"sweep_h": [0.1, -0.1]}}', "run.sweep_h[1]"),
])
def test_field_paths(doc, path):
    with pytest.raises(ConfigError) as err:
        parse_config(doc)
    assert err.value.path == path


def test_top_level_must_be_object():
    with pytest.raises(ConfigError):
        parse_config("[1, 2]")


configs = st.fixed_dictionaries({
    "market": st.one_of(
        st.fixed_dictionaries({"family": st.just("constant"), "r": st.floats(-0.05, 0.1),
                               "horizon": st.floats(0.1, 5.0)}),
        st.fixed_dictionaries({"family": st.just("path-dependent-demo"), "amplitude": st.floats(0.0, 0.9)}),
        st.fixed_dictionaries({"family": st.just("time-varying-deterministic"), "n": st.just(2),
                               "r1": st.floats(-0.01, 0.01)})),
    "utility": st.one_of(st.fixed_dictionaries({"family": st.just("log"), "x0": st.floats(0.1, 100.0)}),
                         st.fixed_dictionaries({"family": st.just("power"),
                                                "gamma": st.floats(-3.0, 0.9).filter(lambda g: abs(g) > 1e-3)})),
    "estimator": st.fixed_dictionaries({"seed": st.integers(0, 2**31), "n_steps": st.integers(1, 256)}),
})


@given(configs)
def test_echo_round_trip(doc):
    cfg = parse_config(json.dumps(doc))
    again = parse_config(cfg.dumps())
    assert again == cfg
    assert again.dumps() == cfg.dumps()


@given(configs)
def test_built_objects(doc):
    cfg = parse_config(json.dumps(doc))
    m = build_market(cfg.market)
    assert m.n == cfg.market.n and m.horizon == cfg.market.horizon
    assert build_utility(cfg.utility).family == cfg.utility.family


def test_estimator_replace_validates():
    with pytest.raises(ValueError):
        EstimatorConfig().replace(n_inner=3)
    assert EstimatorConfig().replace(seed=5).seed == 5
