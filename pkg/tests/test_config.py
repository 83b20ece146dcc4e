import pytest

from relaxadv.config import RunConfig, load_config, parse_config, with_overrides
from relaxadv.errors import ConfigError
from conftest import CONFIG_PATH


def test_defaults_without_file():
    assert load_config(None) == RunConfig()


def test_pinned_config_parses():
    cfg = load_config(CONFIG_PATH)
    assert cfg.corpus.task == "cipher" and cfg.corpus.vocab_size == 64
    assert cfg.target.d_model == 96
    assert cfg.attack.n_samples == 100 and cfg.attack.lr == 0.3
    assert cfg.sweep.alphas[0] == 0.0 and cfg.sweep.alphas[-1] == 1e6


def test_types_are_coerced():
    cfg = parse_config("[attack]\nalpha = 2\nforbid_specials = no\n[sweep]\nalphas = 0, 1.5 3\n")
    assert cfg.attack.alpha == 2.0 and isinstance(cfg.attack.alpha, float)
    assert cfg.attack.forbid_specials is False
    assert cfg.sweep.alphas == (0.0, 1.5, 3.0)


@pytest.mark.parametrize("text, pattern", [
    ("[attack]\nbeta = 1\n", "unknown key 'beta'"),
    ("[attacks]\nalpha = 1\n", "unknown section"),
    ("[attack]\nalpha = lots\n", "cannot parse"),
    ("[attack]\nalpha = -1\n", "alpha"),
    ("alpha = 1\n", "config"),
])
def test_bad_config_is_rejected(text, pattern):
    with pytest.raises(ConfigError, match=pattern):
        parse_config(text)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.ini")


def test_digest_tracks_content():
    a = RunConfig()
    assert a.digest() == RunConfig().digest()
    assert with_overrides(a, "attack", alpha=2.0).digest() != a.digest()
    assert with_overrides(a, "attack", alpha=None) is a
