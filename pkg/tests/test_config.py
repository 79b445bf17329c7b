import pytest

from segkit.config import ConfigError, load_config, parse_config


def test_defaults_from_empty_text():
    exp = parse_config("")
    assert exp.manifest is None
    assert exp.train.loss.kind == "switching"


def test_values_are_parsed():
    exp = parse_config(
        "[model]\nfamily = gcn_unet\ndepth = 3\ngcn_kernel = 7\n"
        "[loss]\nkind = focal\ngamma = 2.0\n"
        "[data]\nclahe_tiles = 4, 4\naugment = no\n"
        "[train]\nepochs = 3\n"
    )
    t = exp.train
    assert (t.model.family, t.model.depth, t.model.gcn_kernel) == ("gcn_unet", 3, 7)
    assert (t.loss.kind, t.loss.gamma) == ("focal", 2.0)
    assert t.data.clahe_tiles == (4, 4) and t.data.augment is False
    assert t.epochs == 3


def test_unknown_key_reports_line():
    with pytest.raises(ConfigError, match=r"x.ini:3: unknown key 'depht'"):
        parse_config("[model]\ndepth = 2\ndepht = 3\n", "x.ini")


def test_unknown_section_reports_line():
    with pytest.raises(ConfigError, match=r":2: unknown section \[optim\]"):
        parse_config("\n[optim]\nlr = 1\n")


def test_bad_value_reports_key():
    with pytest.raises(ConfigError, match=r":2: bad value for train.epochs"):
        parse_config("[train]\nepochs = many\n")


def test_semantic_error_is_config_error():
    with pytest.raises(ConfigError):
        parse_config("[loss]\nkind = hinge\n")


def test_round_trip():
    exp = parse_config("[experiment]\nmanifest = m.csv\n[model]\ndepth = 2\n[loss]\nkind = bce_dice\n")
    again = parse_config(exp.to_text())
    assert again.train == exp.train
    assert again.manifest == "m.csv"
    assert again.to_text() == exp.to_text()


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "nope.ini")


def test_manifest_relative_to_config(tmp_path):
    (tmp_path / "c.ini").write_text("[experiment]\nmanifest = data/m.csv\n")
    assert load_config(tmp_path / "c.ini").manifest_path() == tmp_path / "data" / "m.csv"
