import pytest

from dcmc.config import HALF_STAR, HUNDRED, PRESETS, TrainConfig, dump_config, parse_config_text, resolve


def test_defaults():
    cfg = TrainConfig()
    assert (cfg.beta, cfg.gamma, cfg.T, cfg.tau, cfg.sigma2) == (1.5, 0.05, 5, 12.0, 3.5)
    assert cfg.hidden_sizes == (512, 128) and cfg.dropout == 0.75
    assert (cfg.epochs, cfg.lr, cfg.lr_decay, cfg.lr_decay_every) == (300, 0.01, 0.5, 25)


@pytest.mark.parametrize(
    "name, tau, sigma2, labels",
    [
        ("movielens", 12.0, 3.5, (1.0, 2.0, 3.0, 4.0, 5.0)),
        ("douban", 12.0, 3.5, (1.0, 2.0, 3.0, 4.0, 5.0)),
        ("flixster", 12.0, 3.5, HALF_STAR),
        ("yahoomusic", 100.0, 3000.0, HUNDRED),
    ],
)
def test_presets(name, tau, sigma2, labels):
    assert set(PRESETS[name]) == {"tau", "sigma2", "labels"}
    cfg = resolve(name)
    assert (cfg.tau, cfg.sigma2, cfg.labels) == (tau, sigma2, labels)


def test_parse_and_precedence():
    text = "# comment\nbeta = 0.5\nhidden_sizes = 64, 32\nmf_in_training=off\nT=3  # layers\n"
    values = parse_config_text(text)
    assert values == {"beta": 0.5, "hidden_sizes": (64, 32), "mf_in_training": False, "T": 3}
    cfg = resolve("yahoomusic", values, {"beta": 2.0, "gamma": None, "tau": 50.0})
    assert cfg.beta == 2.0  # override beats file
    assert cfg.gamma == 0.05  # None means "not given"
    assert cfg.tau == 50.0 and cfg.sigma2 == 3000.0  # override beats preset


def test_dump_roundtrip():
    cfg = TrainConfig(beta=0.25, hidden_sizes=(16, 8), mf_in_testing=False, labels=HALF_STAR)
    assert TrainConfig(**parse_config_text(dump_config(cfg))) == cfg


@pytest.mark.parametrize("text", ["nonsense", "unknown_key=1", "beta=abc", "mf_in_training=maybe"])
def test_bad_config_text(text):
    with pytest.raises((KeyError, ValueError)):
        parse_config_text(text)


@pytest.mark.parametrize(
    "kw", [{"beta": -1}, {"T": -1}, {"tau": 0}, {"dropout": 1.0}, {"labels": (2, 1)}, {"batch_rows": 0}, {"batch_cols": -1}]
)
def test_validation(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


def test_unknown_preset():
    with pytest.raises(KeyError):
        resolve("netflix")


def test_batch_shape():
    cfg = TrainConfig()
    assert cfg.batch_shape(943, 1682) == (192, 342)  # aspect-matched on ML-100K
    assert cfg.batch_shape(100, 50) == (100, 50)  # clipped to the matrix
    assert TrainConfig(batch_rows=128, batch_cols=128).batch_shape(943, 1682) == (128, 128)
    assert TrainConfig(batch_rows=4).batch_shape(1000, 10) == (4, 1)
