import json

import numpy as np
import pytest

from cordgt import numerics as nx
from cordgt.cli import main
from cordgt.config import ConfigError, RunConfig, load_config, read_config_file
from cordgt.events import load_dataset

QUICK = ["--synth", "true", "--synth-nodes", "30", "--synth-partners", "3", "--synth-high-pairs", "3",
         "--synth-events", "1500", "--hidden", "8", "--heads", "2", "--layers", "1", "--enc-d", "4",
         "--d-td", "8", "--d-sd", "8", "--fanouts", "5,1", "--epochs", "2", "--max-train-batches", "3",
         "--max-eval-batches", "2", "--precision", "64"]


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["train", *QUICK, "--out", str(out)]) == 0
    return out


def val_aps(path):
    return [r["ap"] for r in map(json.loads, (path / "metrics.jsonl").read_text().splitlines())
            if r["split"] == "val"]


def write_csv(path, rows, header="src,dst,ts,state_label"):
    path.write_text(header + "\n" + "\n".join(",".join(str(x) for x in r) for r in rows) + "\n")


# ---------------------------------------------------------------- train / evaluate


def test_train_writes_three_artifacts(trained):
    assert {p.name for p in trained.iterdir()} >= {"config.txt", "metrics.jsonl", "model.ckpt"}
    recs = [json.loads(line) for line in (trained / "metrics.jsonl").read_text().splitlines()]
    assert all(set(r) == {"epoch", "split", "ap", "auc", "loss", "wall_ms"} for r in recs)
    _, meta = nx.load_checkpoint(trained / "model.ckpt")
    assert meta["model_config"]["hidden"] == 8


def test_config_snapshot_reproduces_run(trained, tmp_path):
    cfg = read_config_file(trained / "config.txt")
    assert cfg["hidden"] == 8 and cfg["fanouts"] == (5, 1)
    again = tmp_path / "again"
    assert main(["train", "--config", str(trained / "config.txt"), "--out", str(again)]) == 0
    for a, b in zip(val_aps(trained), val_aps(again)):
        assert abs(a - b) <= 1e-9


def test_evaluate_reproduces_best_val_ap(trained, capsys):
    code, out, _ = run(["evaluate", *QUICK, "--out", str(trained), "--checkpoint",
                        str(trained / "model.ckpt"), "--split", "val"], capsys)
    assert code == 0
    got = json.loads(out)
    assert abs(got["ap"] - max(val_aps(trained))) <= 1e-9
    assert (trained / "eval_val_transductive.json").exists()


def test_inductive_evaluation_reports_fewer_edges(trained, capsys):
    base = ["evaluate", *QUICK, "--max-eval-batches", "0", "--out", str(trained),
            "--checkpoint", str(trained / "model.ckpt")]
    _, out_t, _ = run(base, capsys)
    code, out_i, _ = run(base + ["--split-mode", "inductive"], capsys)
    assert code == 0
    n_t, n_i = json.loads(out_t)["evaluated_edges"], json.loads(out_i)["evaluated_edges"]
    assert 0 < n_i < n_t
    assert json.loads(out_i)["mode"] == "inductive"


def test_corrupted_checkpoint_is_a_clean_data_error(trained, tmp_path, capsys):
    bad = tmp_path / "bad.ckpt"
    raw = bytearray((trained / "model.ckpt").read_bytes())
    raw[:4] = b"XXXX"
    bad.write_bytes(bytes(raw))
    code, _, err = run(["evaluate", *QUICK, "--out", str(tmp_path), "--checkpoint", str(bad)], capsys)
    assert code == 3
    assert "magic" in err


def test_checkpoint_width_mismatch_is_a_config_error(trained, tmp_path, capsys):
    data = tmp_path / "feat.csv"
    rows = [(i % 5, (i + 1) % 5, float(i), 0, 0.5) for i in range(60)]
    write_csv(data, rows, header="src,dst,ts,state_label,f1")
    code, _, err = run(["evaluate", "--dataset", str(data), "--out", str(tmp_path), "--checkpoint",
                        str(trained / "model.ckpt")], capsys)
    assert code == 2
    assert "feature widths" in err


def test_decompose_writes_heatmap(tmp_path, capsys):
    out = tmp_path / "lin"
    assert main(["train", *QUICK, "--head", "linear", "--out", str(out)]) == 0
    code, stdout, _ = run(["decompose", *QUICK, "--head", "linear", "--out", str(out), "--checkpoint",
                           str(out / "model.ckpt"), "--links", "50"], capsys)
    assert code == 0
    heat = np.loadtxt(out / "heatmap.csv", delimiter=",")
    assert heat.shape == (5, 5)
    header = (out / "decompose_rows.csv").read_text().splitlines()[0]
    assert header.split(",")[1:6] == ["td_u", "td_v", "sd_u", "sd_v", "contribution"]
    summary = json.loads(stdout.strip().splitlines()[-1], parse_constant=pytest.fail)
    assert summary["links"] == 50


def test_decompose_rejects_mlp_head(trained, capsys):
    code, _, _ = run(["decompose", *QUICK, "--out", str(trained), "--checkpoint",
                      str(trained / "model.ckpt")], capsys)
    assert code == 2


def test_ablate_writes_table(tmp_path):
    out = tmp_path / "abl"
    assert main(["ablate", *QUICK, "--epochs", "1", "--variants", "full,no_td", "--out", str(out)]) == 0
    lines = (out / "ablation.csv").read_text().splitlines()
    assert lines[0].startswith("variant,ap,auc")
    assert [l.split(",")[0] for l in lines[1:]] == ["full", "no_td"]


def test_numeric_abort_exit_code(monkeypatch, tmp_path):
    from cordgt import cli
    from cordgt.train import DivergenceError

    def boom(*a, **k):
        raise DivergenceError("loss became nan")

    monkeypatch.setattr(cli, "train", boom)
    assert main(["train", *QUICK, "--out", str(tmp_path)]) == 4


# ---------------------------------------------------------------- data handling


def test_synth_writes_loadable_csv(tmp_path, capsys):
    path = tmp_path / "planted.csv"
    code, out, _ = run(["synth", "--synth-nodes", "20", "--synth-partners", "2", "--synth-high-pairs", "2",
                        "--synth-events", "500", "--output", str(path)], capsys)
    assert code == 0
    store = load_dataset(path)
    assert store.num_events == json.loads(out)["events"]


def test_missing_column_names_the_column(tmp_path, capsys):
    data = tmp_path / "broken.csv"
    write_csv(data, [(0, 1, 1.0), (1, 2, 2.0)], header="src,dst,ts")
    code, _, err = run(["train", "--dataset", str(data), "--out", str(tmp_path)], capsys)
    assert code == 3
    assert "state_label" in err


def test_missing_dataset_is_a_config_error(tmp_path, capsys):
    code, _, err = run(["train", "--dataset", str(tmp_path / "nope.csv")], capsys)
    assert code == 2
    assert "not found" in err


def test_inspect_isolated_node(tmp_path, capsys):
    data = tmp_path / "iso.csv"
    write_csv(data, [(0, 1, 1.0, 0), (1, 3, 2.0, 0), (0, 3, 3.0, 0), (3, 4, 4.0, 0)])
    code, out, _ = run(["inspect", "--dataset", str(data), "--node", "2", "--target", "0"], capsys)
    assert code == 0
    assert "contextual set of node 2" in out
    section = out.split("contextual set of node 2")[1].split("contextual set of node")[0]
    assert "no neighbors before t" in section
    assert "average interaction intensity" in out


def test_inspect_json_and_intensity(tmp_path, capsys):
    data = tmp_path / "small.csv"
    write_csv(data, [(0, 1, 0.0, 0), (1, 2, 2.0, 0), (0, 2, 4.0, 0)])
    code, out, _ = run(["inspect", "--dataset", str(data), "--node", "0", "--target", "2", "--time", "5",
                        "--json"], capsys)
    assert code == 0
    payload = json.loads(out)
    assert payload["intensity"] == pytest.approx(2 * 3 / (3 * 4.0))
    assert payload["sets"][0]["root"] == 0
    assert len(payload["td"]) == 2 * len(payload["sets"][0]["tokens"])


def test_inspect_unknown_node(tmp_path, capsys):
    data = tmp_path / "small.csv"
    write_csv(data, [(0, 1, 0.0, 0), (1, 2, 2.0, 0)])
    code, _, err = run(["inspect", "--dataset", str(data), "--node", "9"], capsys)
    assert code == 3
    assert "unknown node" in err


# ---------------------------------------------------------------- configuration


def test_config_precedence_flag_over_env_over_file(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("# quick run\nsynth = true\nhidden = 16\nheads = 2\nlr = 0.01\nepochs = 3\n")
    env = {"CORDGT_HIDDEN": "24", "CORDGT_LR": "0.005", "HOME": "/x"}
    cfg = load_config(f, {"hidden": 32}, env)
    assert cfg.hidden == 32          # flag beats env and file
    assert cfg.lr == 0.005           # env beats file
    assert cfg.epochs == 3           # file beats default
    assert cfg.batch_size == 100     # default


def test_defaults_match_published_settings():
    cfg = RunConfig(synth=True)
    assert (cfg.layers, cfg.heads, cfg.hidden) == (2, 6, 64)
    assert (cfg.alpha, cfg.beta) == (1.0, 10.0)
    assert cfg.fanouts == (20, 1) and cfg.batch_size == 100 and cfg.epochs == 50


def test_snapshot_round_trip(tmp_path):
    cfg = load_config(None, {"synth": True, "fanouts": (7, 2), "no_mask": True})
    path = tmp_path / "snap.txt"
    path.write_text(cfg.dumps())
    assert load_config(path) == cfg


@pytest.mark.parametrize("argv", [
    ["train", "--synth", "true", "--hidden", "abc"],
    ["train", "--synth", "true", "--precision", "16"],
    ["train", "--synth", "true", "--no-td", "true", "--alpha-zero", "true"],
    ["train", "--synth", "true", "--split-mode", "sideways"],
])
def test_invalid_configuration_exits_2(argv, capsys, tmp_path):
    with pytest.raises(SystemExit) as exc:   # argparse rejects unparseable values itself
        if main(argv + ["--out", str(tmp_path)]) == 2:
            raise SystemExit(2)
    assert exc.value.code == 2


def test_unknown_config_key(tmp_path):
    f = tmp_path / "bad.cfg"
    f.write_text("synth = true\nwidth = 3\n")
    with pytest.raises(ConfigError, match="width"):
        load_config(f)


def test_unknown_config_key_via_cli(tmp_path, capsys):
    f = tmp_path / "bad.cfg"
    f.write_text("synth = true\nwidth = 3\n")
    code, _, err = run(["train", "--config", str(f)], capsys)
    assert code == 2
    assert "width" in err
