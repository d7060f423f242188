"""
Integration tests across task generation, training, checkpointing and analysis
"""

import json

import numpy as np
import pytest

from speclora.cli import main
from speclora.configs import Mode
from speclora.serialization import load_adapter, load_container, load_task, save_container


@pytest.mark.slow
def test_full_pipeline(tmp_path, no_wall_time):
    """gen-task, train, then analyze the merged weight against the frozen base"""
    spec = tmp_path / "task.json"
    spec.write_text(json.dumps({"n": 8, "m": 8, "k_true": 2, "d_true": [2.0, 1.5], "rank_true": 1, "seed": 2}))
    train = tmp_path / "train.json"
    train.write_text(json.dumps({"learning_rate": 0.01, "epochs": 40, "batch_size": 32}))
    adapter_cfg = tmp_path / "adapter.json"
    adapter_cfg.write_text(json.dumps({"rank": 3, "k": 2, "variant": "svd_exact"}))

    assert main(["gen-task", "--spec", str(spec), "--out", str(tmp_path / "task")]) == 0
    args = ["train", "--task", str(tmp_path / "task"), "--adapter", str(adapter_cfg), "--train", str(train)]
    assert main(args + ["--out", str(tmp_path / "run")]) == 0

    result = json.loads((tmp_path / "run" / "run_result.json").read_text())
    assert len(result["loss_curve"]) == 40
    assert result["loss_curve"][-1] < result["loss_curve"][0]

    task = load_task(tmp_path / "task")
    adapter = load_adapter(tmp_path / "run" / "checkpoint", task.w_base)
    x = task.eval_dataset.x
    assert np.allclose(adapter.forward(x, Mode.EVAL), x @ adapter.merge().T, rtol=0, atol=1e-10)

    merged = load_container(tmp_path / "run" / "checkpoint")["adapter.merged"]
    save_container(tmp_path / "pre", {"layer.0.q": task.w_base})
    save_container(tmp_path / "ft", {"layer.0.q": merged})
    out = tmp_path / "report.json"
    assert main(["analyze", "--pre", str(tmp_path / "pre"), "--ft", str(tmp_path / "ft"), "--out", str(out)]) == 0
    report = json.loads(out.read_text())[0]
    assert report["sigma_ratio"][0] > 1.0


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
