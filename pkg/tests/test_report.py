import numpy as np

from meshdenoise import primitives
from meshdenoise.metrics import evaluate
from meshdenoise.report import (
    plot_training_curves,
    write_eval_report,
    write_per_face_errors,
    write_training_log,
)
from meshdenoise.training import LogRecord


def test_eval_report_files(tmp_path, box444=None):
    mesh = primitives.box(4, 4, 4)
    rng = np.random.Generator(np.random.PCG64(0))
    noisy = mesh.with_vertices(mesh.vertices + rng.normal(0, 0.02, mesh.vertices.shape))
    report = evaluate(noisy, mesh, samples_per_face=5, seed=1)
    written = write_eval_report(report, tmp_path / "rep")
    assert (tmp_path / "rep" / "report.tsv").exists()
    assert (tmp_path / "rep" / "angular_error_hist.png").exists()
    body = (tmp_path / "rep" / "report.tsv").read_text()
    assert body.startswith("metric\tvalue\n")
    assert "E_a_degrees" in body and "E_v_normalized" in body
    assert len(written) == 2


def test_per_face_errors_format(tmp_path):
    path = tmp_path / "pf.txt"
    write_per_face_errors(np.array([0.5, np.nan, 2.25]), path)
    lines = path.read_text().splitlines()
    assert lines[0] == "0 0.500000"
    assert lines[1].startswith("1 nan")
    assert len(lines) == 3


def test_training_log_and_curves(tmp_path):
    records = [
        LogRecord(0, 0, 0.5, 20.0),
        LogRecord(0, 1, 0.25, 12.0),
        LogRecord(1, 0, 0.2, 9.0),
    ]
    log = tmp_path / "log.tsv"
    write_training_log(records, log)
    lines = log.read_text().splitlines()
    assert lines[0] == "stage\tepoch\tmean_loss\tval_ea"
    assert len(lines) == 4
    fig = tmp_path / "curves.png"
    plot_training_curves(records, fig)
    assert fig.stat().st_size > 0
