import pytest

from drmdp.config import ConfigError, RunConfig, load_config, loads_config


def test_defaults_validate():
    cfg = RunConfig()
    assert cfg.batch_size == 64 and cfg.buffer_capacity == 100_000 and cfg.eval_every == 1_000


def test_round_trip_through_ini():
    cfg = RunConfig(algorithm="ircr", seeds=(3, 4), lam=0.5, structure="pairwise", pairwise_k=2,
                    variance_probe=True, size=12.5)
    assert loads_config(cfg.to_ini()) == cfg


def test_partial_file_takes_defaults(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[run]\nseeds = 1, 2\n[env]\nname = point_reach\ninterval = 4\n")
    cfg = load_config(path)
    assert cfg.seeds == (1, 2) and cfg.interval == 4 and cfg.lam == RunConfig().lam


@pytest.mark.parametrize("text,msg", [
    ("[run]\nalgorithm = hc\n[extra]\nx = 1\n", "unknown section"),
    ("[train]\nbatchsize = 3\n", "unknown key"),
    ("[env]\nenv = point_reach\n", "unknown key"),
    ("[train]\nenv_steps = many\n", "bad value"),
    ("[eval]\nsnapshot = maybe\n", "bad value"),
    ("no header\n", "header"),
])
def test_malformed_files(text, msg):
    with pytest.raises(ConfigError, match=msg):
        loads_config(text)


@pytest.mark.parametrize("change", [
    dict(env_steps=0), dict(batch_size=0), dict(buffer_capacity=0), dict(eval_every=0),
    dict(lam=-0.1), dict(gamma=1.0), dict(tau_target=0.0), dict(lr=0.0), dict(start_steps=-1),
    dict(algorithm="sac"), dict(structure="triple"), dict(env="mujoco"), dict(seeds=()),
    dict(variance_probe=True, batch_size=1),
])
def test_validation(change):
    with pytest.raises(ConfigError):
        RunConfig(**change)


def test_with_revalidates():
    with pytest.raises(ConfigError):
        RunConfig().with_(lam=-1.0)
    assert RunConfig().with_(lam=0.0).lam == 0.0
