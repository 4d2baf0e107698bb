"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s`. Baseline values live in
tests/golden/default_benchmark.json (regenerate with tests/golden/generate.py).
"""

import json
import math
import os
import time
from contextlib import contextmanager
from dataclasses import replace

import numpy as np
import pytest

from dualdistill import fileio, losses, pipeline, synth
from dualdistill.cli import EXIT_OK, main as cli_main
from dualdistill.duals import softmax_rows
from dualdistill.fusion import fuse
from dualdistill.network import (
    LayerLayout,
    SubnetworkMask,
    backward_pass,
    forward_full,
    forward_pass,
    forward_sub,
    hvp,
    init_weights,
)
from dualdistill.simplex import PredictionMatrix
from dualdistill.teachers import PromptedTeacher, SyntheticBayesTeacher, load_file_teacher

GOLDEN = json.load(open(os.path.join(os.path.dirname(__file__), "golden", "default_benchmark.json")))


@contextmanager
def criterion(number, description):
    start = time.perf_counter()
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE {number} FAIL: {description}")
        raise
    elapsed = time.perf_counter() - start
    print(f"ACCEPTANCE {number} PASS: {description} ({elapsed:.1f}s)")


# -- shared expensive artifacts ----------------------------------------------


@pytest.fixture(scope="module")
def benchmark():
    return synth.default_benchmark(seed=0)


@pytest.fixture(scope="module")
def default_run(benchmark):
    _, dataset, teacher_b, teacher_c = benchmark
    return pipeline.run(pipeline.PipelineConfig(), dataset, teacher_b, teacher_c)


@pytest.fixture(scope="module")
def ablation_runs(benchmark):
    _, dataset, teacher_b, teacher_c = benchmark
    cfg = pipeline.PipelineConfig()
    out = {}
    for name in ("mix", "im", "sr", "self"):
        result = pipeline.run(replace(cfg, **{f"use_{name}": False}), dataset, teacher_b, teacher_c)
        out[name] = result.records[-1]
    return out


def central_fd(loss_of, theta, h=1e-4):
    fd = np.zeros_like(theta)
    for i in range(theta.size):
        tp, tm = theta.copy(), theta.copy()
        tp[i] += h
        tm[i] -= h
        fd[i] = (loss_of(tp) - loss_of(tm)) / (2 * h)
    return fd


def max_rel_err(grad, fd):
    scale = max(np.abs(fd).max(), 1e-10)
    return float((np.abs(grad - fd) / np.maximum(np.abs(fd), 1e-3 * scale)).max())


def test_criterion_1_gradient_oracle_suite():
    with criterion(1, "analytic gradients and hvp match their oracles"):
        start = time.perf_counter()
        # seed 32 keeps every relu pre-activation > 4e-3 from its kink on
        # this batch, so h = 1e-4 probes never cross one
        rng = np.random.default_rng(32)
        batch = 8

        # relu net for the first-order losses
        relu_layout = LayerLayout((2, 16, 8, 4), "relu")
        theta_r = init_weights(relu_layout, 32)
        x = rng.standard_normal((batch, 2))
        pairing, lam = losses.draw_mixup_randomness(rng, batch)
        pseudo = rng.dirichlet(np.ones(4), size=batch)
        labels = rng.integers(0, 4, size=batch)

        _, g = losses.kd_loss(relu_layout, theta_r, x, pseudo)
        fd = central_fd(lambda th: float(losses.kd_loss(relu_layout, th, x, pseudo)[0]), theta_r)
        assert max_rel_err(g, fd) < 1e-4

        logits0, _, _ = forward_pass(relu_layout, theta_r, x)
        base = softmax_rows(logits0)
        _, g = losses.mixup_loss(relu_layout, theta_r, x, pairing, lam, base_predictions=base)
        fd = central_fd(
            lambda th: float(losses.mixup_loss(relu_layout, th, x, pairing, lam, base_predictions=base)[0]),
            theta_r,
        )
        assert max_rel_err(g, fd) < 1e-4

        _, g = losses.im_loss(relu_layout, theta_r, x)
        fd = central_fd(lambda th: float(losses.im_loss(relu_layout, th, x)[0]), theta_r)
        assert max_rel_err(g, fd) < 1e-4

        _, g = losses.ce_loss(relu_layout, theta_r, x, labels)
        fd = central_fd(lambda th: float(losses.ce_loss(relu_layout, th, x, labels)[0]), theta_r)
        assert max_rel_err(g, fd) < 1e-4

        # od on the same relu net
        mask = SubnetworkMask(relu_layout, 0.84)
        _, g = losses.od_loss(relu_layout, theta_r, mask, x)
        fd = central_fd(lambda th: float(losses.od_loss(relu_layout, th, mask, x)[0]), theta_r)
        assert max_rel_err(g, fd) < 1e-4

        # prompt-consistency gradient on the learnable bias
        teacher = PromptedTeacher(
            SyntheticBayesTeacher(rng.standard_normal((4, 2)), 1.0, 2.0, np.zeros(4)),
            prompt_bias=0.3 * rng.standard_normal(4),
        )
        target_rows = rng.dirichlet(np.ones(4), size=batch)
        _, g_cm = teacher.consistency_loss_and_grad(x, target_rows)
        h = 1e-5
        fd_cm = np.zeros(4)
        for k in range(4):
            wp, wm = teacher.prompt_bias.copy(), teacher.prompt_bias.copy()
            wp[k] += h
            wm[k] -= h
            lp, _ = PromptedTeacher(teacher.base, 0.01, wp).consistency_loss_and_grad(x, target_rows)
            lm, _ = PromptedTeacher(teacher.base, 0.01, wm).consistency_loss_and_grad(x, target_rows)
            fd_cm[k] = (lp - lm) / (2 * h)
        assert max_rel_err(g_cm, fd_cm) < 1e-4

        # wg away from relu kinks (tanh activations), frozen entropy weight
        tanh_layout = LayerLayout((2, 16, 8, 4), "tanh")
        theta_t = init_weights(tanh_layout, 1234) + 0.05 * rng.standard_normal(tanh_layout.param_count)
        mask_t = SubnetworkMask(tanh_layout, 0.84)
        _, g_wg, weight, _ = losses.wg_loss(tanh_layout, theta_t, mask_t, x)
        fd_wg = weight * central_fd(lambda th: losses.wg_loss(tanh_layout, th, mask_t, x)[3], theta_t)
        assert max_rel_err(g_wg, fd_wg) < 1e-3

        # hvp: exact on a quadratic, < 1e-3 against gradient differences
        n = tanh_layout.param_count
        a_mat = rng.standard_normal((40, n))
        b_vec = rng.standard_normal(40)
        v = rng.standard_normal(n)
        hv = hvp(tanh_layout, theta_t, v, lambda th: a_mat.T @ (a_mat @ th - b_vec))
        assert np.allclose(hv, a_mat.T @ (a_mat @ v), atol=1e-9)
        assert np.all(hvp(tanh_layout, theta_t, np.zeros(n), lambda th: a_mat.T @ (a_mat @ th - b_vec)) == 0.0)

        def ce_grad(th):
            logits, _, cache = forward_pass(tanh_layout, th, x)
            _, dlogits = losses.ce_value_and_logit_grad(labels, logits)
            return backward_pass(tanh_layout, th, cache, dlogits)

        hv = hvp(tanh_layout, theta_t, v, ce_grad)
        fd_h = (ce_grad(theta_t + 1e-4 * v) - ce_grad(theta_t - 1e-4 * v)) / 2e-4
        assert max_rel_err(hv, fd_h) < 1e-3

        assert time.perf_counter() - start < 60.0


def _entropy2(p0):
    p1 = 1.0 - p0
    h = 0.0
    for p in (p0, p1):
        if p > 0:
            h -= p * math.log(p)
    return h


def _solve_entropy2(target, lo=0.5, hi=1.0 - 1e-12):
    # H is decreasing in p0 on [0.5, 1); bisect to 1e-15
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _entropy2(mid) > target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def test_criterion_2_fusion_brute_force():
    with criterion(2, "fusion matches naive-loop oracle on 1e4 instances; branch anecdote holds"):
        start = time.perf_counter()
        rng = np.random.default_rng(99)
        for _ in range(10_000):
            n = int(rng.integers(2, 6))
            c = int(rng.integers(2, 5))
            rows_b = rng.dirichlet(np.ones(c), size=n)
            rows_c = rng.dirichlet(np.ones(c), size=n)
            threshold = float(rng.normal(0, 0.1))
            fused, rep = fuse(PredictionMatrix(rows_b), PredictionMatrix(rows_c), threshold)

            # independent brute force with plain python loops
            def iu(rows):
                tot = 0.0
                for row in rows:
                    for p in row:
                        if p > 0:
                            tot -= p * math.log(p)
                return tot / len(rows)

            def gu(rows):
                h = 0.0
                for j in range(len(rows[0])):
                    pj = sum(r[j] for r in rows) / len(rows)
                    if pj > 0:
                        h -= pj * math.log(pj)
                return h

            iu_b, iu_c = iu(rows_b), iu(rows_c)
            gu_b, gu_c = gu(rows_b), gu(rows_c)
            assert abs(rep.iu_b - iu_b) < 1e-12
            assert abs(rep.iu_c - iu_c) < 1e-12
            assert abs(rep.gu_b - gu_b) < 1e-12
            assert abs(rep.gu_c - gu_c) < 1e-12
            alpha = 0.5 if iu_b + iu_c < 1e-12 else iu_c / (iu_b + iu_c)
            if gu_b - gu_c < threshold:
                w_c, w_b = 1 - alpha / 2, alpha / 2
            else:
                w_c, w_b = alpha, 1 - alpha
            for i in range(n):
                for j in range(c):
                    expected = w_c * rows_c[i][j] + w_b * rows_b[i][j]
                    assert abs(fused.probs[i, j] - expected) < 1e-12

        # the GU-gap anecdote: a gap of exactly 0.07 flips branches between
        # thresholds 0.05 and 0.08
        gu_c_target = 0.55
        gu_b_target = gu_c_target + 0.07
        pc = _solve_entropy2(gu_c_target)
        pb = _solve_entropy2(gu_b_target)
        yb = PredictionMatrix(np.tile([pb, 1 - pb], (4, 1)))
        yc = PredictionMatrix(np.tile([pc, 1 - pc], (4, 1)))
        _, rep_tight = fuse(yb, yc, 0.05)
        _, rep_loose = fuse(yb, yc, 0.08)
        assert abs(rep_tight.delta_gu - 0.07) < 1e-9
        assert rep_tight.branch == "alpha-weighted"  # 0.07 >= 0.05
        assert rep_loose.branch == "clip-dominant"  # 0.07 < 0.08
        assert time.perf_counter() - start < 30.0


def test_criterion_3_degenerate_subnetwork_identity():
    with criterion(3, "gamma = 1 makes the subnetwork the full network exactly"):
        from dualdistill.synth import default_domain_pair, default_blackbox_teacher, default_semantic_teacher, generate

        pair = default_domain_pair(seed=0, n_target=200)
        dataset = generate(pair)
        cfg = pipeline.PipelineConfig(
            total_epochs=4, stage_one_epochs=3, gamma=1.0, batch_size=32,
            prompt_period=2, prompt_steps=3, hidden_sizes=(16, 8),
        )
        theta, _, _, records, layout, _ = pipeline.run_stage_one(
            cfg, dataset, default_blackbox_teacher(pair), default_semantic_teacher(pair)
        )
        for record in records:
            assert record.losses.od == 0.0
            assert record.losses.wg == 0.0
        mask = SubnetworkMask(layout, 1.0)
        lf, ff = forward_full(layout, theta, dataset.features)
        ls, fs = forward_sub(layout, theta, mask, dataset.features)
        assert np.array_equal(lf, ls)
        assert np.array_equal(ff, fs)


def test_criterion_4_end_to_end_adaptation(benchmark, default_run):
    with criterion(4, "adapted model beats both teachers by 2 points; full >= stage one - 0.5"):
        start = time.perf_counter()
        _, dataset, teacher_b, teacher_c = benchmark
        acc_b = synth.teacher_accuracy(teacher_b, dataset)
        acc_c = synth.teacher_accuracy(teacher_c, dataset)
        assert acc_b == pytest.approx(GOLDEN["teacher_b_accuracy"], abs=1e-12)
        assert acc_c == pytest.approx(GOLDEN["teacher_c_accuracy"], abs=1e-12)

        cfg = pipeline.PipelineConfig()
        records = default_run.records
        stage_one_acc = records[cfg.stage_one_epochs - 1].target_accuracy
        full_acc = records[-1].target_accuracy
        assert full_acc == pytest.approx(GOLDEN["full_accuracy"], abs=1e-12)
        assert stage_one_acc == pytest.approx(GOLDEN["stage_one_accuracy"], abs=1e-12)

        assert stage_one_acc > max(acc_b, acc_c)  # distillation already beats both teachers
        assert full_acc >= max(acc_b, acc_c) + 0.02
        assert full_acc >= stage_one_acc - 0.005
        assert time.perf_counter() - start < 120.0


def test_criterion_5_ablation_mechanisms(default_run, ablation_runs):
    with criterion(5, "removing the diversity term lowers prediction diversity; no ablation helps"):
        full_final = default_run.records[-1]
        assert full_final.gu_of_target == pytest.approx(GOLDEN["full_gu_of_target"], abs=1e-12)

        no_im = ablation_runs["im"]
        assert no_im.gu_of_target < full_final.gu_of_target  # strictly lower diversity
        assert no_im.gu_of_target == pytest.approx(
            GOLDEN["ablations"]["no-im"]["gu_of_target"], abs=1e-12
        )

        for name, record in ablation_runs.items():
            assert record.target_accuracy <= full_final.target_accuracy + 0.005
            assert record.target_accuracy == pytest.approx(
                GOLDEN["ablations"][f"no-{name}"]["target_accuracy"], abs=1e-12
            )


def test_criterion_6_hyperparameter_defaults_audit(tmp_path):
    with criterion(6, "default config carries the reference hyperparameters"):
        cfg = pipeline.PipelineConfig()
        assert cfg.epsilon == 0.6
        assert cfg.zeta == 0.3
        assert cfg.beta == 0.9
        assert cfg.gamma == 0.84
        assert cfg.gu_threshold == 0.05
        assert cfg.batch_size == 64
        assert cfg.momentum == 0.9
        assert cfg.weight_decay == 1e-3
        assert cfg.prompt_period == 5

        # the CLI resolves an empty flag set to exactly these defaults and
        # snapshots them into the manifest before training
        out = tmp_path / "audit"
        code = cli_main([
            "run", "--out", str(out), "--total-epochs", "3", "--stage-one-epochs", "2",
            "--batch-size", "64", "--hidden-sizes", "8,4", "--prompt-steps", "2",
        ])
        assert code == EXIT_OK
        manifest = json.loads((out / "manifest.json").read_text())
        for key, expected in [
            ("epsilon", 0.6), ("zeta", 0.3), ("beta", 0.9), ("gamma", 0.84),
            ("gu_threshold", 0.05), ("batch_size", 64), ("momentum", 0.9),
            ("weight_decay", 1e-3), ("prompt_period", 5),
        ]:
            assert manifest["config"][key] == expected


def test_criterion_7_byte_identical_reruns(tmp_path):
    with criterion(7, "identical config and seed give byte-identical metrics and checkpoints"):
        flags = [
            "--total-epochs", "4", "--stage-one-epochs", "3", "--batch-size", "32",
            "--prompt-period", "2", "--prompt-steps", "3", "--hidden-sizes", "16,8",
            "--seed", "0",
        ]
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert cli_main(["run", "--out", str(out_a), *flags]) == EXIT_OK
        assert cli_main(["run", "--out", str(out_b), *flags]) == EXIT_OK
        for name in ("metrics.ndjson", "checkpoint_stage1.bin", "checkpoint_final.bin"):
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes(), name


def test_criterion_8_interchange_round_trip(tmp_path):
    with criterion(8, "file-backed run reproduces the in-memory epoch-1 fused labels"):
        bench_dir = tmp_path / "bench"
        n = 300
        assert cli_main(["synth", "--out", str(bench_dir), "--n", str(n),
                         "--with-teachers", "--seed", "0"]) == EXIT_OK

        # in-memory reference on the same generated benchmark
        pair = synth.default_domain_pair(seed=0, n_target=n)
        dataset = synth.generate(pair)
        teacher_b = synth.default_blackbox_teacher(pair)
        teacher_c = synth.default_semantic_teacher(pair)
        cfg = pipeline.PipelineConfig(
            total_epochs=2, stage_one_epochs=1, batch_size=32,
            prompt_period=5, prompt_steps=2, hidden_sizes=(16, 8),
        )
        reference = pipeline.run(cfg, dataset, teacher_b, teacher_c, stage_one_only=True)

        # standalone fusion of the exported files
        fused_path = tmp_path / "fused.csv"
        assert cli_main(["fuse", "--teacher-b", str(bench_dir / "teacher_b.csv"),
                         "--teacher-c", str(bench_dir / "teacher_c.csv"),
                         "--out", str(fused_path)]) == EXIT_OK
        fused_file = fileio.read_prediction_matrix(fused_path)
        assert fused_file.sample_ids == reference.initial_fused.sample_ids
        assert np.abs(fused_file.probs - reference.initial_fused.probs).max() < 1e-12

        # file-backed pipeline run reproduces the same epoch-1 fused labels
        file_tb = load_file_teacher(bench_dir / "teacher_b.csv")
        file_tc = load_file_teacher(bench_dir / "teacher_c.csv")
        file_dataset, _ = fileio.read_dataset(bench_dir / "dataset.csv")
        file_run = pipeline.run(cfg, file_dataset, file_tb, file_tc, stage_one_only=True)
        assert np.abs(file_run.initial_fused.probs - reference.initial_fused.probs).max() < 1e-12

        # and the CLI path dumps the identical matrix
        out = tmp_path / "run"
        assert cli_main([
            "run", "--out", str(out),
            "--data", str(bench_dir / "dataset.csv"),
            "--teacher-b", str(bench_dir / "teacher_b.csv"),
            "--teacher-c", str(bench_dir / "teacher_c.csv"),
            "--dump-fused", str(tmp_path / "pipeline_fused.csv"),
            "--total-epochs", "2", "--stage-one-epochs", "1", "--batch-size", "32",
            "--prompt-steps", "2", "--hidden-sizes", "16,8",
        ]) == EXIT_OK
        dumped = fileio.read_prediction_matrix(tmp_path / "pipeline_fused.csv")
        assert np.abs(dumped.probs - reference.initial_fused.probs).max() < 1e-12
