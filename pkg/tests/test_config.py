import pytest

from castid.config import build_config, dump_config, load_config
from castid.errors import ConfigError
from castid.tracker import PAPER_WEIGHTS


def test_defaults_mirror_section_types():
    cfg = build_config(None)
    assert cfg.seed == 0
    assert cfg.tracker.factor_weights == PAPER_WEIGHTS
    assert (cfg.cluster.lambda1, cfg.cluster.lambda2, cfg.cluster.merge_similarity) == (0.275, 0.4, 0.7)
    assert (cfg.refine.learning_rate, cfg.refine.batch_size, cfg.refine.margin) == (2e-5, 20, 1.0)
    assert (cfg.ingest.min_confidence, cfg.ingest.min_area_fraction) == (0.2, 0.025)
    assert cfg.dedup.similarity_prune == 0.995


def test_overrides_and_seed(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("seed: 3\ncluster:\n  k_min: 4\n  k_max: 9\n")
    cfg = load_config(path, ["cluster.k_max=12", "tracker.factor_weights=[1,1,1,1,1,1]"], seed=None)
    assert cfg.seed == 3 and cfg.cluster.k_min == 4 and cfg.cluster.k_max == 12
    assert cfg.tracker.factor_weights == (1.0,) * 6
    assert load_config(path, seed=8).seed == 8


def test_round_trip_through_yaml(tmp_path):
    cfg = build_config({"classify": {"design": "per_cluster"}}, seed=2)
    path = tmp_path / "c.yaml"
    path.write_text(dump_config(cfg))
    again = load_config(path)
    assert again.as_dict() == cfg.as_dict() and again.digest() == cfg.digest()


def test_section_digest_tracks_only_its_sections():
    a = build_config({"cluster": {"k_min": 3}})
    b = build_config({"cluster": {"k_min": 4}})
    assert a.section_digest("tracker") == b.section_digest("tracker")
    assert a.section_digest("cluster") != b.section_digest("cluster")


@pytest.mark.parametrize(
    "data, overrides",
    [({"nope": {}}, []), ({"cluster": {"bogus": 1}}, []), ({"cluster": {"k_min": 9, "k_max": 2}}, []),
     (None, ["cluster"]), (None, ["x.y=1"]), ({"cluster": 5}, []), ({"seed": "a"}, [])],
)
def test_errors(data, overrides):
    with pytest.raises(ConfigError):
        build_config(data, overrides)


def test_missing_file():
    with pytest.raises(FileNotFoundError):
        load_config("/nonexistent/c.yaml")
