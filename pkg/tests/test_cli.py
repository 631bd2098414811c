import json

import numpy as np
import pytest
from click.testing import CliRunner

from loopseg import cli, losses
from loopseg.cli import main
from loopseg.fixtures import load_annotations
from loopseg.masks import downsample_majority, encode_rle, rle_to_json, union_masks


@pytest.fixture()
def runner():
    return CliRunner()


def _gen(runner, path, n=30, seed=7, extra=()):
    result = runner.invoke(main, ["gen", "--out", str(path), "--n", str(n), "--seed", str(seed), *extra])
    assert result.exit_code == 0, result.output
    return json.loads(result.output.strip().splitlines()[-1])


def _gt_predictions(samples, path, stride=4):
    """Prediction file that reproduces the GT exactly at the eval grid."""
    with open(path, "w") as fh:
        for i, s in enumerate(samples):
            if s.gt_masks:
                full = union_masks(s.gt_masks)
                h, w = full.shape
                small = downsample_majority(full, h // stride, w // stride)
                mask = rle_to_json(encode_rle(small)) if small.any() else None
            else:
                mask = None
            fh.write(json.dumps({"image_id": s.image_id, "sentence_id": i, "mask": mask}) + "\n")


# --- gen ---------------------------------------------------------------------------

def test_gen_is_byte_deterministic(tmp_path, runner):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    _gen(runner, a)
    _gen(runner, b)
    assert a.read_bytes() == b.read_bytes()


def test_gen_line_count_and_stats(tmp_path, runner):
    path = tmp_path / "ann.jsonl"
    stats = _gen(runner, path, n=100)
    assert stats["samples"] == 100
    assert len(path.read_text().splitlines()) == 100


def test_gen_zero_nonreferent_rate(tmp_path, runner):
    stats = _gen(runner, tmp_path / "ann.jsonl", n=50, extra=["--p-nonreferent", "0"])
    assert stats["nonreferent_fraction"] == 0.0


def test_gen_env_seed_fallback(tmp_path, runner):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    r1 = runner.invoke(main, ["gen", "--out", str(a), "--n", "10"], env={"DERIS_SEED": "123"})
    r2 = runner.invoke(main, ["gen", "--out", str(b), "--n", "10", "--seed", "123"])
    assert r1.exit_code == 0 and r2.exit_code == 0
    assert a.read_bytes() == b.read_bytes()


def test_gen_missing_required_option_is_usage_error(runner):
    result = runner.invoke(main, ["gen"])
    assert result.exit_code == 2


def test_gen_invalid_config_fails(tmp_path, runner):
    result = runner.invoke(main, ["gen", "--out", str(tmp_path / "x.jsonl"), "--height", "4"])
    assert result.exit_code == 1


# --- augment ------------------------------------------------------------------------

def test_augment_rate_zero_identity(tmp_path, runner):
    ann = tmp_path / "ann.jsonl"
    out = tmp_path / "aug.jsonl"
    _gen(runner, ann, n=40)
    result = runner.invoke(main, ["augment", "--input", str(ann), "--output", str(out), "--rc", "0"])
    assert result.exit_code == 0, result.output
    summary = json.loads(result.output.strip().splitlines()[-1])
    assert summary["converted"] == 0 and summary["violations"] == 0
    assert ann.read_bytes() == out.read_bytes()


def test_augment_converts_and_audits(tmp_path, runner):
    ann = tmp_path / "ann.jsonl"
    out = tmp_path / "aug.jsonl"
    _gen(runner, ann, n=2000, extra=["--p-nonreferent", "0"])
    result = runner.invoke(main, [
        "augment", "--input", str(ann), "--output", str(out),
        "--rc", "0.15", "--seed", "5",
    ])
    assert result.exit_code == 0, result.output
    summary = json.loads(result.output.strip().splitlines()[-1])
    assert summary["violations"] == 0
    assert 0.10 <= summary["conversion_rate"] <= 0.20
    converted = [s for s in load_annotations(out) if s.is_nonreferent]
    assert len(converted) == summary["converted"]


def test_augment_deterministic(tmp_path, runner):
    ann = tmp_path / "ann.jsonl"
    _gen(runner, ann, n=60)
    outs = []
    for name in ("x.jsonl", "y.jsonl"):
        out = tmp_path / name
        r = runner.invoke(main, ["augment", "--input", str(ann), "--output", str(out), "--seed", "9"])
        assert r.exit_code == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


# --- forward --------------------------------------------------------------------------

def _forward(runner, ann, pred, dump=None, extra=()):
    args = ["forward", "--annotations", str(ann), "--predictions", str(pred), "--seed", "3"]
    if dump is not None:
        args += ["--dump", str(dump)]
    result = runner.invoke(main, [*args, *extra])
    assert result.exit_code == 0, result.output
    return result


def test_forward_dump_round_count(tmp_path, runner):
    ann = tmp_path / "ann.jsonl"
    _gen(runner, ann, n=8)
    dump_path = tmp_path / "dump.json"
    _forward(runner, ann, tmp_path / "pred.jsonl", dump_path, extra=["--rounds", "2"])
    dump = json.loads(dump_path.read_text())
    assert dump["rounds"] == 2
    assert all(len(rec["rounds"]) == 2 for rec in dump["samples"])


def test_forward_is_byte_deterministic(tmp_path, runner):
    ann = tmp_path / "ann.jsonl"
    _gen(runner, ann, n=12)
    p1, p2 = tmp_path / "p1.jsonl", tmp_path / "p2.jsonl"
    d1, d2 = tmp_path / "d1.json", tmp_path / "d2.json"
    _forward(runner, ann, p1, d1)
    _forward(runner, ann, p2, d2)
    assert p1.read_bytes() == p2.read_bytes()
    assert d1.read_bytes() == d2.read_bytes()


def test_forward_existence_gate_toggle_matches_dump(tmp_path, runner):
    ann = tmp_path / "ann.jsonl"
    _gen(runner, ann, n=25)
    gated_dump = tmp_path / "gated.json"
    plain_dump = tmp_path / "plain.json"
    _forward(runner, ann, tmp_path / "pg.jsonl", gated_dump,
             extra=["--t-ref", "0.5", "--use-pnr"])
    _forward(runner, ann, tmp_path / "pp.jsonl", plain_dump,
             extra=["--t-ref", "0.5", "--no-use-pnr"])
    gated = json.loads(gated_dump.read_text())["samples"]
    plain = json.loads(plain_dump.read_text())["samples"]
    for g, p in zip(gated, plain):
        probs = np.asarray(p["rounds"][-1]["referent_probs"])
        exist = g["existence_prob"]
        assert p["selected"] == [int(i) for i in np.flatnonzero(probs > 0.5)]
        assert g["selected"] == [int(i) for i in np.flatnonzero(probs * exist > 0.5)]


def test_forward_loss_dump_structure(tmp_path, runner):
    ann = tmp_path / "ann.jsonl"
    _gen(runner, ann, n=6)
    loss_path = tmp_path / "loss.jsonl"
    _forward(runner, ann, tmp_path / "pred.jsonl", extra=["--loss-dump", str(loss_path)])
    records = [json.loads(line) for line in loss_path.read_text().splitlines()]
    assert len(records) == 6
    for rec in records:
        rounds = len(rec["per_round"])
        assert rounds == 3
        assert len(rec["l_mask"]) == len(rec["l_r"]) == len(rec["l_nr"]) == rounds
        # existence supervision only exists on the final round
        assert all(v == 0.0 for v in rec["l_nr"][:-1])
        expected = losses.total_loss(rec["per_round"], aux_weight=rec["weights"]["aux"])
        assert rec["total"] == pytest.approx(expected, rel=1e-12)


def test_forward_rejects_mismatched_resolution(tmp_path, runner):
    ann = tmp_path / "ann.jsonl"
    _gen(runner, ann, n=4)
    result = runner.invoke(main, [
        "forward", "--annotations", str(ann), "--predictions", str(tmp_path / "p.jsonl"),
        "--height", "32", "--img-width", "32",
    ])
    assert result.exit_code == 1


# --- eval ------------------------------------------------------------------------------

def test_eval_gt_as_prediction_is_perfect(tmp_path, runner):
    ann = tmp_path / "ann.jsonl"
    _gen(runner, ann, n=30)
    samples = load_annotations(ann)
    pred = tmp_path / "pred.jsonl"
    _gt_predictions(samples, pred)
    result = runner.invoke(main, ["eval", "--predictions", str(pred), "--annotations", str(ann)])
    assert result.exit_code == 0, result.output
    report = json.loads(result.output.strip().splitlines()[-1])
    assert report["giou"] == 1.0 and report["ciou"] == 1.0
    assert report["n_acc"] == 1.0
    assert report["pr_at"]["0.9"] == 1.0


def test_eval_shuffled_predictions_identical_report(tmp_path, runner):
    ann = tmp_path / "ann.jsonl"
    _gen(runner, ann, n=20)
    samples = load_annotations(ann)
    pred = tmp_path / "pred.jsonl"
    _gt_predictions(samples, pred)
    shuffled = tmp_path / "shuffled.jsonl"
    lines = pred.read_text().splitlines()
    shuffled.write_text("\n".join(reversed(lines)) + "\n")
    r1 = runner.invoke(main, ["eval", "--predictions", str(pred), "--annotations", str(ann)])
    r2 = runner.invoke(main, ["eval", "--predictions", str(shuffled), "--annotations", str(ann)])
    assert r1.output.strip().splitlines()[-1] == r2.output.strip().splitlines()[-1]


def test_eval_hand_fixture_via_files(tmp_path, runner):
    # five 8x8 samples raked to a 4x4 eval grid; tallies worked out by hand:
    #   0: gt 16px -> 4px row, pred covers half        -> (2, 4), IoU 0.5
    #   1: gt 4px block -> 1px, pred exact             -> (1, 1), IoU 1
    #   2: non-referent, pred empty                    -> (0, 0), IoU 1
    #   3: non-referent, pred 2px                      -> (0, 2), IoU 0
    #   4: gt 8px -> 2px, pred exact                   -> (2, 2), IoU 1
    ann = tmp_path / "ann.jsonl"
    pred = tmp_path / "pred.jsonl"
    gt_a = np.zeros((8, 8), np.uint8)
    gt_a[0:2, 0:8] = 1
    gt_b = np.zeros((8, 8), np.uint8)
    gt_b[0:2, 0:2] = 1
    gt_c = np.zeros((8, 8), np.uint8)
    gt_c[0:2, 0:4] = 1
    gts = [gt_a, gt_b, None, None, gt_c]
    with open(ann, "w") as fh:
        for i, gt in enumerate(gts):
            fh.write(json.dumps({
                "image_id": i, "sentence": "fixture", "nonreferent": gt is None,
                "masks": [] if gt is None else [rle_to_json(encode_rle(gt))],
            }) + "\n")
    pa = np.zeros((4, 4), np.uint8)
    pa[0, 0:2] = 1
    pb = np.zeros((4, 4), np.uint8)
    pb[0, 0] = 1
    pd = np.zeros((4, 4), np.uint8)
    pd[2, 2:4] = 1
    pe = np.zeros((4, 4), np.uint8)
    pe[0, 0:2] = 1
    preds = [pa, pb, None, pd, pe]
    with open(pred, "w") as fh:
        for i, m in enumerate(preds):
            mask = None if m is None else rle_to_json(encode_rle(m))
            fh.write(json.dumps({"image_id": i, "sentence_id": i, "mask": mask}) + "\n")
    result = runner.invoke(main, ["eval", "--predictions", str(pred),
                                  "--annotations", str(ann), "--stride", "2",
                                  "--pr-thresholds", "0.9"])
    assert result.exit_code == 0, result.output
    report = json.loads(result.output.strip().splitlines()[-1])
    assert report["giou"] == pytest.approx(3.5 / 5, abs=1e-12)
    assert report["ciou"] == pytest.approx(5 / 9, abs=1e-12)
    assert (report["ciou_intersection"], report["ciou_union"]) == (5, 9)
    assert report["pr_at"]["0.9"] == pytest.approx(2 / 3, abs=1e-12)
    assert report["n_acc"] == 0.5
    assert report["miou"] == pytest.approx(2.5 / 3, abs=1e-12)


def test_eval_missing_prediction_fails(tmp_path, runner):
    ann = tmp_path / "ann.jsonl"
    _gen(runner, ann, n=3)
    pred = tmp_path / "pred.jsonl"
    pred.write_text(json.dumps({"image_id": 0, "sentence_id": 0, "mask": None}) + "\n")
    result = runner.invoke(main, ["eval", "--predictions", str(pred), "--annotations", str(ann)])
    assert result.exit_code == 1


# --- verify -----------------------------------------------------------------------------

def test_verify_passes_and_reports(tmp_path, runner):
    out = tmp_path / "report.json"
    result = runner.invoke(main, ["verify", "--cases", "150", "--out", str(out)])
    assert result.exit_code == 0, result.output
    report = json.loads(out.read_text())
    assert report["all_passed"]
    grad = next(c for c in report["checks"] if c["name"] == "gradient_fidelity")
    assert grad["detail"]["max_rel_err_bce"] < 1e-5
    assert grad["detail"]["max_rel_err_dice"] < 1e-5


def test_verify_detects_injected_bad_gradient(runner, monkeypatch):
    true_dice = losses.dice_loss

    def corrupt(logits, targets):
        loss, grad = true_dice(logits, targets)
        return loss, grad * 1.5

    monkeypatch.setattr(losses, "dice_loss", corrupt)
    result = runner.invoke(main, ["verify", "--cases", "10"])
    assert result.exit_code == 1
    assert "FAIL" in result.output
