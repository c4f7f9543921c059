import pytest

from busarrival.config import ConfigError, PipelineConfig, load_config, parse_config_text


def test_defaults():
    cfg = PipelineConfig()
    assert cfg.section_length == 500 and cfg.free_flow_speed == 60 and cfg.percentile_cap == 95
    assert cfg.significance == 0.05 and (cfg.train_days, cfg.test_days) == (27, 7)
    assert cfg.grid.section_count == 56
    assert cfg.bins.bin_of(14.5 * 3600) == 11


def test_parse_text_comments_and_blanks():
    raw = parse_config_text("# header\n\nalpha = 0.3  # smoothing\nmodel=nsar\n")
    assert raw == {"alpha": "0.3", "model": "nsar"}
    with pytest.raises(ConfigError, match=":2:"):
        parse_config_text("alpha = 1\nnot a pair\n")


def test_load_with_overrides(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("train_days = 20\nseed = 3\n")
    cfg = load_config(path, {"seed": "9"})
    assert (cfg.train_days, cfg.seed) == (20, 9)
    assert isinstance(cfg.train_days, int)


def test_unknown_key_lists_valid_keys():
    with pytest.raises(ConfigError) as info:
        load_config(overrides={"bin_width": "1"})
    msg = str(info.value)
    assert "bin_width" in msg
    for key in PipelineConfig.keys():
        assert key in msg


@pytest.mark.parametrize(
    "key,value",
    [
        ("significance", "1.5"),
        ("section_length", "0"),
        ("free_flow_speed", "-1"),
        ("pc_tstat", "other"),
        ("model", "lstm"),
        ("train_days", "x"),
        ("active_bins", "30"),
    ],
)
def test_invalid_values(key, value):
    with pytest.raises(ConfigError):
        load_config(overrides={key: value})


def test_text_round_trip(tmp_path):
    cfg = PipelineConfig(alpha=0.25, model="nsar")
    path = tmp_path / "c.cfg"
    path.write_text(cfg.to_text())
    assert load_config(path) == cfg
