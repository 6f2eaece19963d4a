import pytest

from metriclab.config import (
    ExperimentConfig,
    config_hash,
    parse_config,
    render_config,
)
from metriclab.errors import ConfigError


def test_minimal_config_resolves_defaults_and_round_trips():
    cfg = parse_config("kind = train\n")
    assert cfg.seed == 0
    assert cfg.dataset.fixture == "four-class"  # picked by kind
    assert cfg.loss.weights["ce"] == 1.0
    assert cfg.loss.weights["triplet"] == 0.0
    assert cfg.sgd.milestones == (10, 20)
    text = render_config(cfg)
    again = parse_config(text)
    assert again == cfg
    assert render_config(again) == text


def test_kind_specific_fixture_defaults():
    assert parse_config("kind = surface\n").dataset.fixture == "two-class"
    assert parse_config("kind = boundary\n").dataset.fixture == "three-class"
    assert parse_config("kind = ablation-target\n").dataset.fixture == "retrieval"
    assert parse_config("kind = ablation-bn\n").dataset.fixture == "retrieval"


def test_explicit_fixture_wins_over_kind_default():
    cfg = parse_config("kind = boundary\ndataset.fixture = two-class\n")
    assert cfg.dataset.fixture == "two-class"


def test_comments_and_blank_lines_ignored():
    cfg = parse_config("# header\n\nkind = train\n  # indented comment\nseed = 7\n")
    assert cfg.seed == 7


def test_unknown_key_rejected_with_key_name():
    with pytest.raises(ConfigError, match="loss.cpl.wieght"):
        parse_config("kind = train\nloss.cpl.wieght = 1.0\n")


def test_duplicate_key_rejected():
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config("kind = train\nseed = 1\nseed = 2\n")


def test_missing_kind_rejected():
    with pytest.raises(ConfigError, match="kind"):
        parse_config("seed = 3\n")


def test_bad_value_reports_key_and_line():
    with pytest.raises(ConfigError, match="sgd.epochs"):
        parse_config("kind = train\nsgd.epochs = soon\n")
    with pytest.raises(ConfigError, match="model.bn_target"):
        parse_config("kind = train\nmodel.bn_target = yes\n")


def test_k_of_one_names_the_center_prediction_precondition():
    with pytest.raises(ConfigError, match="center-prediction"):
        parse_config("kind = train\nsampler.k = 1\n")


def test_rll_alpha_must_exceed_margin():
    with pytest.raises(ConfigError, match="rll_alpha must exceed rll_margin"):
        parse_config("kind = train\nloss.rll.alpha = 0.3\nloss.rll.margin = 0.4\n")


def test_milestones_checked_against_epochs():
    with pytest.raises(ConfigError, match="milestones"):
        parse_config("kind = train\nsgd.epochs = 10\nsgd.milestones = 5,40\n")


def test_unknown_kind_rejected():
    with pytest.raises(ConfigError, match="kind"):
        parse_config("kind = plot\n")


def test_csv_source_requires_path():
    with pytest.raises(ConfigError, match="dataset.path"):
        parse_config("kind = train\ndataset.source = csv\n")


def test_unknown_fixture_rejected():
    with pytest.raises(ConfigError, match="five-class"):
        parse_config("kind = train\ndataset.fixture = five-class\n")


def test_tuple_values_parse_and_render():
    cfg = parse_config("kind = train\nsgd.milestones = 3,7\nmodel.extractor_hidden = 16,16,16\n")
    assert cfg.sgd.milestones == (3, 7)
    assert cfg.model.extractor_hidden == (16, 16, 16)
    rendered = render_config(cfg)
    assert "sgd.milestones = 3,7" in rendered
    cfg2 = parse_config("kind = train\nsgd.milestones =\n")
    assert cfg2.sgd.milestones == ()


def test_config_hash_stable_and_sensitive():
    a = parse_config("kind = train\n")
    b = parse_config("kind = train\nseed = 0\n")  # same resolved values
    c = parse_config("kind = train\nseed = 1\n")
    d = parse_config("kind = train\nout = runs/elsewhere\n")  # out excluded
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash(c)
    assert config_hash(a) == config_hash(d)
    assert len(config_hash(a)) == 12


def test_synthetic_dataset_load_is_seeded():
    cfg = parse_config("kind = train\nseed = 5\n")
    d1 = cfg.dataset.load(cfg.seed)
    d2 = cfg.dataset.load(cfg.seed)
    d3 = cfg.dataset.load(6)
    assert (d1.features == d2.features).all()
    assert not (d1.features == d3.features).all()
    assert d1.dim == 2 and sorted(set(d1.labels)) == [0, 1, 2, 3]


def test_loss_weights_flow_into_enabled_list():
    cfg = parse_config(
        "kind = train\nloss.cpl.weight = 0\nloss.triplet.weight = 2.0\n"
    )
    assert cfg.loss.enabled() == ["ce", "triplet"]
