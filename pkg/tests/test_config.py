import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from driftbench import config
from driftbench.config import RunConfig
from driftbench.errors import ConfigError


def test_empty_file_gives_defaults():
    cfg = config.parse_text("")
    assert cfg == RunConfig()
    assert (cfg.gamma, cfg.tau, cfg.n_passes, cfg.restore_prob) == (0.4, 1.2, 8, 0.01)
    assert (cfg.alpha_bound, cfg.batch_size, cfg.lr) == (0.99, 16, 1e-5)


def test_gamma_reaches_the_entropy_screen():
    cfg = config.parse_text("rfp.gamma = 0.4\n")
    ecfg = cfg.engine_config("ctta_t", 0)
    assert ecfg.rfp.entropy_threshold(4) == pytest.approx(0.4 * math.log(4))


def test_fixed_alpha_needs_alpha():
    with pytest.raises(ConfigError) as err:
        config.parse_text("engine.mode = fixed_alpha\n")
    assert err.value.key == "engine.alpha"
    assert "engine.alpha" in str(err.value)
    cfg = config.parse_text("engine.mode = fixed_alpha\nengine.alpha = 0.99\n")
    assert cfg.engine_config(cfg.mode, 0).alpha == 0.99


def test_unknown_key_names_key_and_line():
    with pytest.raises(ConfigError) as err:
        config.parse_text("# header\nstream.dim = 8\nstream.colour = red\n")
    assert (err.value.key, err.value.line) == ("stream.colour", 3)
    assert "line 3" in str(err.value) and "stream.colour" in str(err.value)


@pytest.mark.parametrize(
    "text, key",
    [
        ("rfp.gamma = -1", "rfp.gamma"),
        ("rfp.n_passes = 1", "rfp.n_passes"),
        ("engine.restore_prob = 2", "engine.restore_prob"),
        ("stream.dim = eight", "stream.dim"),
        ("cda.alpha_bound = 1.0", "cda.alpha_bound"),
        ("optim.kind = rmsprop", "optim.kind"),
        ("engine.student_dropout = maybe", "engine.student_dropout"),
        ("stream.label_noise = nan", "stream.label_noise"),
    ],
)
def test_bad_values_name_the_key(text, key):
    with pytest.raises(ConfigError) as err:
        config.parse_text(text)
    assert err.value.key == key and err.value.line == 1


def test_duplicate_key():
    with pytest.raises(ConfigError) as err:
        config.parse_text("stream.dim = 8\nstream.dim = 9\n")
    assert err.value.line == 2


def test_missing_equals():
    with pytest.raises(ConfigError) as err:
        config.parse_text("\n\nstream.dim 8\n")
    assert err.value.line == 3


def test_cross_key_validation():
    with pytest.raises(ConfigError) as err:
        config.parse_text("stream.dim = 4\nstream.n_classes = 5\n")
    assert err.value.key == "stream.n_classes" and err.value.line == 2
    with pytest.raises(ConfigError):
        config.parse_text("stream.dim = 4\nengine.k = 5\n")


def test_full_round_trip():
    text = """
    stream.preset = short
    stream.dim = 12          # inline comment
    run.seeds = 3, 4,5
    run.modes = ctta_t, fixed_alpha:0.9, no_adapt
    optim.lr = 1e-2
    engine.k = auto
    engine.student_dropout = yes
    cda.policy = exp_decay
    """
    cfg = config.parse_text(text)
    assert cfg.preset == "short" and cfg.dim == 12 and cfg.seeds == (3, 4, 5)
    assert cfg.mode_specs() == ("ctta_t", "fixed_alpha:0.9", "no_adapt")
    assert cfg.lr == 0.01 and cfg.k is None and cfg.student_dropout
    ecfg = cfg.engine_config("fixed_alpha:0.9", 4)
    assert ecfg.alpha == 0.9 and ecfg.master_seed == 4 and ecfg.alpha_policy.kind == "exp_decay"
    assert cfg.source["stream.dim"] == 3


@pytest.mark.parametrize("spec", ["bogus", "ctta_t:0.5", "fixed_alpha:x", "fixed_alpha:1.5"])
def test_bad_mode_specs(spec):
    with pytest.raises(ConfigError):
        config.parse_mode(spec)


def test_fixed_alpha_mode_without_value_uses_engine_alpha():
    assert config.parse_mode("fixed_alpha", 0.95) == ("fixed_alpha", 0.95)
    with pytest.raises(ConfigError) as err:
        config.parse_mode("fixed_alpha")
    assert err.value.key == "engine.alpha"


def test_load_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        config.load(tmp_path / "absent.conf")


def test_overrides_revalidate():
    cfg = config.with_overrides(RunConfig(), seeds=(1, 2), modes=None)
    assert cfg.seeds == (1, 2) and cfg.modes == ()
    with pytest.raises(ConfigError):
        config.with_overrides(RunConfig(), modes=("fixed_alpha",))


@given(st.sampled_from(sorted(config.SCHEMA)))
def test_every_key_maps_to_a_field(key):
    assert hasattr(RunConfig(), config._ATTR[key])
