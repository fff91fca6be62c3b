import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from floodrisknet.cli import main
from floodrisknet.export import export_geojson
from floodrisknet.ingest import build_grid
from floodrisknet.pipeline import build_config, config_hash, parse_config_text

SMALL = """# quick desk-scale run
synth_m = 36
synth_weeks = 20
knn = 5
graph_epochs = 30
pretrain_epochs = 30
epochs = 30   # clustering epochs
kmeans_restarts = 3
perms = 99
"""

ALL_OUTPUTS = ["graph.ckpt", "graph_edges.csv", "graph_loss.csv", "cluster_state.ckpt",
               "clusters.csv", "risk_levels.csv", "cell_levels.csv", "risk_map.geojson",
               "analysis_report.csv", "manifest.json"]


def run(*args):
    return main([str(a) for a in args])


def outputs(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.is_file()}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "small.cfg"
    cfg.write_text(SMALL)
    assert run("synth", "--config", cfg, "--out", root / "data") == 0
    assert run("all", "--config", cfg, "--data", root / "data", "--out", root / "run1", "--k", 3) == 0
    return root, cfg


def test_synth_writes_inputs(workspace):
    root, _ = workspace
    names = {p.name for p in (root / "data").iterdir()}
    assert {"cells.csv", "occurrences.csv", "features.csv", "planted_labels.csv",
            "manifest.json"} <= names


def test_all_writes_every_artifact(workspace):
    root, _ = workspace
    for name in ALL_OUTPUTS:
        assert (root / "run1" / name).is_file(), name
    assert not [p for p in (root / "run1").iterdir() if p.name.endswith(".tmp")]


def test_all_is_byte_reproducible(workspace):
    root, cfg = workspace
    assert run("all", "--config", cfg, "--data", root / "data", "--out", root / "run2", "--k", 3) == 0
    assert outputs(root / "run1") == outputs(root / "run2")


def test_seed_changes_outputs(workspace):
    root, cfg = workspace
    assert run("all", "--config", cfg, "--data", root / "data", "--out", root / "seed7",
               "--k", 3, "--seed", 7) == 0
    a, b = outputs(root / "run1"), outputs(root / "seed7")
    assert any(a[n] != b[n] for n in ALL_OUTPUTS if n != "manifest.json")


def test_stages_run_separately_match_all(workspace):
    root, cfg = workspace
    out = root / "staged"
    for stage in ("learn-graph", "cluster", "rate", "analyze"):
        assert run(stage, "--config", cfg, "--data", root / "data", "--out", out, "--k", 3) == 0
    a, b = outputs(root / "run1"), outputs(out)
    for name in ALL_OUTPUTS:
        if name != "manifest.json":
            assert a[name] == b[name], name


def test_rate_reruns_identically_on_cluster_files(workspace):
    root, cfg = workspace
    out = root / "rerate"
    shutil.copytree(root / "run1", out)
    for name in ("risk_levels.csv", "cell_levels.csv", "risk_map.geojson"):
        (out / name).unlink()
    assert run("rate", "--config", cfg, "--data", root / "data", "--out", out, "--k", 3) == 0
    for name in ("risk_levels.csv", "cell_levels.csv", "risk_map.geojson"):
        assert (out / name).read_bytes() == (root / "run1" / name).read_bytes()


def test_csv_headers(workspace):
    root, _ = workspace
    d = root / "run1"
    first = lambda n: (d / n).read_text().split("\n", 1)[0]
    assert first("risk_levels.csv") == "cluster,FH,FE,FV,FR_value,level"
    assert first("cell_levels.csv") == "cell_id,cluster,level"
    assert first("graph_edges.csv") == "i,j,weight"
    assert first("clusters.csv").startswith("cell_id,cluster,z_0")
    blocks = (d / "analysis_report.csv").read_text().split("\n\n")
    assert [b.split("\n", 1)[0] for b in blocks] == [
        "level_a,level_b,mean_similarity", "morans_i,p_value",
        "city_id,population,mean_level,inequality", "pearson_r,pearson_p"]


def test_risk_levels_are_a_permutation(workspace):
    root, _ = workspace
    rows = (root / "run1" / "risk_levels.csv").read_text().strip().split("\n")[1:]
    levels = sorted(int(r.split(",")[-1]) for r in rows)
    assert levels == list(range(1, len(rows) + 1))


def test_empty_city_block_is_header_only(workspace):
    root, cfg = workspace
    out = root / "nocity"
    shutil.copytree(root / "run1", out)
    assert run("analyze", "--config", cfg, "--data", root / "data", "--out", out,
               "--min-city-pop", 1e12) == 0
    blocks = (out / "analysis_report.csv").read_text().split("\n\n")
    assert blocks[2] == "city_id,population,mean_level,inequality"


def test_geojson_from_run(workspace):
    root, _ = workspace
    gj = json.loads((root / "run1" / "risk_map.geojson").read_text())
    assert gj["type"] == "FeatureCollection" and len(gj["features"]) == 36
    k = len((root / "run1" / "risk_levels.csv").read_text().strip().split("\n")) - 1
    for f in gj["features"]:
        assert 1 <= f["properties"]["level"] <= k


def test_geojson_four_cells(tmp_path):
    grid = build_grid((0, 0, 4000, 4000), 2000)
    gj = export_geojson(tmp_path / "m.geojson", grid, [1, 2, 2, 1], [0, 1, 1, 0], np.zeros((4, 10)))
    assert json.loads((tmp_path / "m.geojson").read_text()) == gj
    assert len(gj["features"]) == 4
    for f in gj["features"]:
        assert f["type"] == "Feature" and f["geometry"]["type"] == "Polygon"
        ring = f["geometry"]["coordinates"][0]
        assert len(ring) == 5 and ring[0] == ring[-1]
        # shoelace: positive area means counterclockwise
        area = sum(x0 * y1 - x1 * y0 for (x0, y0), (x1, y1) in zip(ring[:-1], ring[1:])) / 2
        assert area == 2000 * 2000
        assert f["properties"]["level"] in (1, 2)
        assert {"cell_id", "cluster", "level", "city_id", "flood_frequency"} <= set(f["properties"])
    with pytest.raises(ValueError):
        export_geojson(tmp_path / "x.geojson", grid, [1, 2, 2], [0, 1, 1, 0], np.zeros((4, 10)))


def test_manifest(workspace):
    root, _ = workspace
    man = json.loads((root / "run1" / "manifest.json").read_text())
    assert man["subcommand"] == "all"
    assert "out" not in man["config"]
    assert len(man["config_hash"]) == 64
    assert {"numpy", "scipy", "scikit-learn", "python", "floodrisknet"} <= set(man["versions"])


# ---------------------------------------------------------------- errors

def test_missing_features_exit_2(workspace, tmp_path, capsys):
    root, cfg = workspace
    data = tmp_path / "data"
    shutil.copytree(root / "data", data)
    (data / "features.csv").unlink()
    shutil.copy(root / "run1" / "graph.ckpt", tmp_path / "graph.ckpt")
    assert run("cluster", "--config", cfg, "--data", data, "--out", tmp_path) == 2
    assert str(data / "features.csv") in capsys.readouterr().err


def test_schema_violation_exit_3(workspace, tmp_path, capsys):
    root, cfg = workspace
    data = tmp_path / "data"
    shutil.copytree(root / "data", data)
    text = (data / "features.csv").read_text().replace("poverty_rate", "poverty")
    (data / "features.csv").write_text(text)
    shutil.copy(root / "run1" / "graph.ckpt", tmp_path / "graph.ckpt")
    assert run("cluster", "--config", cfg, "--data", data, "--out", tmp_path) == 3
    assert "schema" in capsys.readouterr().err


def test_nan_input_is_a_schema_violation(workspace, tmp_path):
    root, cfg = workspace
    data = tmp_path / "data"
    shutil.copytree(root / "data", data)
    lines = (data / "features.csv").read_text().split("\n")
    fields = lines[1].split(",")
    fields[2] = "nan"
    lines[1] = ",".join(fields)
    (data / "features.csv").write_text("\n".join(lines))
    shutil.copy(root / "run1" / "graph.ckpt", tmp_path / "graph.ckpt")
    assert run("cluster", "--config", cfg, "--data", data, "--out", tmp_path) == 3


def test_numerical_blowup_exit_4(workspace, tmp_path, capsys):
    root, cfg = workspace
    shutil.copy(root / "run1" / "graph.ckpt", tmp_path / "graph.ckpt")
    bad = tmp_path / "bad.cfg"
    bad.write_text(SMALL + "lr = 1e300\npretrain_lr = 1e300\n")
    with np.errstate(all="ignore"):
        code = run("cluster", "--config", bad, "--data", root / "data", "--out", tmp_path)
    assert code == 4
    assert "non-finite" in capsys.readouterr().err


def test_unwritable_output_exit_2(workspace, tmp_path):
    root, cfg = workspace
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert run("synth", "--config", cfg, "--out", blocker / "sub") == 2


def test_bad_config_exit_2(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("no_such_key = 1\n")
    assert run("synth", "--config", cfg, "--out", tmp_path / "o") == 2
    assert run("synth", "--config", tmp_path / "missing.cfg", "--out", tmp_path / "o") == 2


# ---------------------------------------------------------------- configuration

def test_config_parsing_and_override():
    values = parse_config_text("# comment\nk = 4  # trailing\n\ntau=0.5\nmin-city-pop = 100\n")
    assert values == {"k": "4", "tau": "0.5", "min_city_pop": "100"}
    cfg = build_config(values, {"k": 2, "seed": None})
    assert cfg.k == 2 and cfg.tau == 0.5 and cfg.min_city_pop == 100.0 and cfg.seed == 0
    with pytest.raises(ValueError):
        parse_config_text("just words\n")
    with pytest.raises(ValueError):
        build_config({"k": "four"})


def test_config_hash_ignores_output_directory():
    a = build_config(overrides={"out": "x"})
    b = build_config(overrides={"out": "y"})
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash(build_config(overrides={"seed": 1}))


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "floodrisknet", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "synth" in proc.stdout
