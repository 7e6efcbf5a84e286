import numpy as np
import pandas as pd
import pytest

from main import main
from src.dataset.io import read_dataset, read_estimates
from src.utils import config_to_text
from tests.helpers import small_pipeline_config


@pytest.fixture(scope="module")
def simulated(tmp_path_factory):
    root = tmp_path_factory.mktemp("sim")
    config = root / "run.txt"
    config.write_text(config_to_text(small_pipeline_config()), encoding="utf-8")
    assert main(["simulate", "--out", str(root / "data"), "--config", str(config)]) == 0
    return root / "data"


def test_simulate_writes_dataset_and_config(simulated):
    dataset = read_dataset(simulated)
    assert set(dataset.sequences) == {"seq0", "seq1"}
    assert (simulated / "config.txt").read_text(encoding="utf-8") == config_to_text(small_pipeline_config())


def test_usage_errors_exit_with_one(tmp_path):
    with pytest.raises(SystemExit) as info:
        main([])
    assert info.value.code == 1
    with pytest.raises(SystemExit) as info:
        main(["teleport", "--out", str(tmp_path)])
    assert info.value.code == 1


def test_unknown_config_key_exits_with_one(tmp_path, capsys):
    config = tmp_path / "bad.txt"
    config.write_text("seed = 1\nwarp_factor = 9\n", encoding="utf-8")
    assert main(["simulate", "--out", str(tmp_path / "out"), "--config", str(config)]) == 1
    assert "warp_factor" in capsys.readouterr().err
    assert not (tmp_path / "out").exists()


def test_missing_dataset_exits_with_two(tmp_path):
    assert main(["slam", "--in", str(tmp_path / "nothing"), "--out", str(tmp_path / "out")]) == 2


def test_evaluate_empty_estimates(simulated, tmp_path, capsys):
    estimates = tmp_path / "est.csv"
    estimates.write_text("", encoding="utf-8")
    out = tmp_path / "per_query.csv"
    assert main(["evaluate", "--est", str(estimates), "--gt", str(simulated), "--out", str(out)]) == 0
    frame = pd.read_csv(out)
    assert len(frame) == small_pipeline_config().query_images
    assert frame[["localized_0.1", "localized_0.25", "localized_1.0"]].to_numpy().sum() == 0
    assert "0.0%" in capsys.readouterr().out


def test_evaluate_unknown_query_exits_with_two(simulated, tmp_path):
    estimates = tmp_path / "est.csv"
    estimates.write_text("query_id,localized,inliers,qw,qx,qy,qz,tx,ty,tz\nnot_a_query,1,20,1,0,0,0,0,0,0\n",
                         encoding="utf-8")
    assert main(["evaluate", "--est", str(estimates), "--gt", str(simulated / "queries")]) == 2


def test_lowfreq_scores_query_pictures(simulated, tmp_path):
    out = tmp_path / "lowfreq.csv"
    assert main(["lowfreq", "--images", str(simulated / "queries"), "--out", str(out)]) == 0
    table = pd.read_csv(out)
    assert list(table.columns) == ["image_id", "score", "low_frequency"]
    assert len(table) == small_pipeline_config().query_images
    assert table["image_id"].is_monotonic_increasing


@pytest.mark.slow
def test_end_to_end_chain(simulated, tmp_path):
    slam, merged, ba = tmp_path / "slam", tmp_path / "merged", tmp_path / "ba"
    estimates, per_query = tmp_path / "est.csv", tmp_path / "eval.csv"
    assert main(["slam", "--in", str(simulated), "--out", str(slam), "--plot", str(tmp_path / "slam.png")]) == 0
    assert read_dataset(slam).graph is not None
    assert main(["merge", "--in", str(slam), "--out", str(merged)]) == 0
    assert main(["ba", "--in", str(merged), "--out", str(ba), "--plot", str(tmp_path / "reproj.png")]) == 0
    assert "stage" in read_dataset(ba).report
    assert main(["localize", "--map", str(ba), "--queries", str(simulated), "--out", str(estimates)]) == 0
    assert len(read_estimates(estimates)) == small_pipeline_config().query_images
    assert main(["evaluate", "--est", str(estimates), "--gt", str(simulated), "--out", str(per_query),
                 "--plot", str(tmp_path / "curve.png")]) == 0
    frame = pd.read_csv(per_query)
    for column in ("localized_0.1", "localized_0.25", "localized_1.0"):
        assert frame[column].mean() == 1.0
    truth = read_dataset(simulated).ground_truth.images
    adjusted = read_dataset(ba).images
    assert set(adjusted) == set(truth)
    for image_id, image in adjusted.items():
        error = truth[image_id].pose.inverse().compose(image.pose)
        assert np.linalg.norm(error.translation) <= 1e-6
        assert error.angle() <= 1e-5
    assert (tmp_path / "curve.png").is_file()
