"""Acceptance gate: each test drives one numbered criterion at its stated
tolerance and prints a [PASS]/[FAIL] line (run with -s to watch them live).
"""

import csv
import math
import time
from contextlib import contextmanager

import numpy as np
import pytest
import torch

from waterformer import data as data_mod
from waterformer import physics
from waterformer.blocks import (ChannelAttention, ChannelFusionBlock,
                                RescaleLayerNorm, WindowAttention)
from waterformer.cli import main
from waterformer.color_space import rgb_to_yiq, yiq_to_rgb
from waterformer.losses import ChromaConfig, chroma_loss, l1_loss, sobel_color_loss
from waterformer.metrics import nrmse, psnr, ssim
from waterformer.model import (ModelConfig, WaterFormer, count_macs,
                               count_params, reference_config)
from waterformer.training import (TrainConfig, fit_pairs, load_checkpoint,
                                  lr_at, make_train_state, restore_state,
                                  save_checkpoint, train_step)

from test_metrics import naive_nrmse, naive_psnr, naive_ssim


@contextmanager
def criterion(number, description):
    try:
        yield
    except Exception:
        print(f"[FAIL] criterion {number}: {description}", flush=True)
        raise
    print(f"[PASS] criterion {number}: {description}", flush=True)


def test_c01_physics_round_trip():
    with criterion(1, "degrade/recover round trip <= 1e-6 on 100 images, < 5 s"):
        rng = np.random.default_rng(0)
        t0 = time.monotonic()
        worst = 0.0
        for _ in range(100):
            clean = rng.uniform(0, 1, (64, 64, 3))
            params = physics.DegradationParams(
                background=rng.uniform(0, 1, 3),
                transmission=rng.uniform(0.1, 1.0, (64, 64, 3)))
            recovered = physics.recover_analytic(physics.degrade(clean, params), params)
            worst = max(worst, float(np.abs(recovered - clean).max()))
        elapsed = time.monotonic() - t0
        assert worst <= 1e-6, f"max abs error {worst}"
        assert elapsed < 5.0, f"took {elapsed:.2f}s"


def test_c02_soft_reconstruction_identity():
    with criterion(2, "zero head => forward(x) = x exactly at 64x64 and 250x250"):
        torch.manual_seed(0)
        model = WaterFormer(reference_config())
        model.eval()
        for size in ((64, 64), (250, 250)):
            x = torch.rand(1, 3, *size)
            with torch.no_grad():
                out = model(x)
            assert torch.equal(out, x), f"not identity at {size}"


def test_c03_yiq_round_trip():
    with criterion(3, "YIQ round trip <= 1e-6 over 1000 images; matrix spot values exact"):
        spot = rgb_to_yiq(np.array([1.0, 0.0, 0.0]))
        assert spot[0] == 0.299 and spot[1] == 0.596 and spot[2] == 0.211
        rng = np.random.default_rng(1)
        worst = 0.0
        for _ in range(1000):
            img = rng.uniform(0, 1, (16, 16, 3))
            worst = max(worst, float(np.abs(yiq_to_rgb(rgb_to_yiq(img)) - img).max()))
        assert worst <= 1e-6, f"round trip error {worst}"


def _fd_gradient(loss_fn, gt, pred_np):
    numeric = np.zeros_like(pred_np)
    flat = pred_np.reshape(-1)
    nflat = numeric.reshape(-1)
    h = 1e-6
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(loss_fn(gt, torch.tensor(pred_np)))
        flat[i] = orig - h
        fm = float(loss_fn(gt, torch.tensor(pred_np)))
        flat[i] = orig
        nflat[i] = (fp - fm) / (2 * h)
    return numeric


def test_c04_loss_gradient_oracle():
    with criterion(4, "loss gradients vs central differences, rel err <= 1e-6, < 60 s"):
        rng = np.random.default_rng(2)
        t0 = time.monotonic()
        chroma_cfg = ChromaConfig(window=15, stride=1, c1=0.001, c2=0.001)
        losses = {
            "l1": l1_loss,
            "chroma": lambda g, p: chroma_loss(g, p, chroma_cfg),
            "sobel": sobel_color_loss,
        }
        for name, fn in losses.items():
            gt = torch.tensor(rng.uniform(0, 1, (3, 18, 18)))
            pred_np = rng.uniform(0, 1, (3, 18, 18))
            pred = torch.tensor(pred_np, requires_grad=True)
            fn(gt, pred).backward()
            analytic = pred.grad.numpy()
            numeric = _fd_gradient(fn, gt, pred_np)
            rel = np.abs(analytic - numeric).max() / np.abs(numeric).max()
            assert rel <= 1e-6, f"{name} rel err {rel}"
        elapsed = time.monotonic() - t0
        assert elapsed < 60.0, f"took {elapsed:.1f}s"


def test_c05_attention_and_fusion_normalization():
    with criterion(5, "attention rows sum to 1 +- 1e-6; CFB weights on the simplex"):
        torch.manual_seed(0)
        spatial = WindowAttention(16, window_size=8, num_heads=2)
        spatial.record_attention = True
        spatial(torch.randn(2, 16, 24, 24))
        rows = spatial.last_attention.sum(dim=-1)
        assert (rows - 1).abs().max() <= 1e-6

        channel = ChannelAttention(16, num_heads=4)
        channel.record_attention = True
        channel(torch.randn(2, 16, 12, 12))
        rows = channel.last_attention.sum(dim=-1)
        assert (rows - 1).abs().max() <= 1e-6
        assert channel.last_attention.min() >= 0

        cfb = ChannelFusionBlock(16)
        x1, x2 = torch.randn(3, 16, 10, 10), torch.randn(3, 16, 10, 10)
        alpha = cfb.fusion_weights(x1, x2)
        assert (alpha.sum(dim=1) - 1).abs().max() <= 1e-6
        equal = cfb.fusion_weights(x1, x1)
        assert (equal - 0.5).abs().max() <= 1e-6


def test_c06_rln_statistics():
    with criterion(6, "normalized features: channel mean 0 +- 1e-5, variance 1 +- 1e-4"):
        torch.manual_seed(0)
        norm = RescaleLayerNorm(24)
        x = torch.randn(4, 24, 16, 16)
        normalized, _, _ = norm(x)
        assert normalized.mean(dim=1).abs().max() <= 1e-5
        assert (normalized.var(dim=1, unbiased=False) - 1).abs().max() <= 1e-4


def test_c07_metric_oracles():
    with criterion(7, "SSIM/PSNR/NRMSE match naive oracles <= 1e-6 on 50 pairs"):
        rng = np.random.default_rng(3)
        for _ in range(50):
            gt = rng.uniform(0, 1, (32, 32, 3))
            pred = rng.uniform(0, 1, (32, 32, 3))
            assert abs(ssim(gt, pred) - naive_ssim(gt, pred)) <= 1e-6
            assert abs(psnr(gt, pred) - naive_psnr(gt, pred)) <= 1e-6
            assert abs(nrmse(gt, pred) - naive_nrmse(gt, pred)) <= 1e-6
        gt = np.full((16, 16, 3), 0.45)
        assert abs(psnr(gt, gt + 0.1) - 20.0) <= 1e-6


def test_c08_overfit_gate(tmp_path):
    with criterion(8, "reference config reaches train PSNR >= 30 dB within 2000 steps"):
        t0 = time.monotonic()
        data_mod.generate_clean_images(tmp_path / "clean", 4, size=64, seed=0)
        manifest = data_mod.build_synthetic_corpus(
            tmp_path / "clean", tmp_path / "corpus", ["I", "II"],
            (0.5, 2.5), 4, seed=0, size=64)
        samples = [data_mod.load_pair(e, manifest.root, 64) for e in manifest.entries]
        assert len(samples) == 8

        cfg = TrainConfig(epochs=1, batch_size=4, lr0=1e-3, seed=0,
                          augment=False, decay_every=150)
        state, history = fit_pairs(samples, reference_config(), cfg,
                                   max_steps=2000, target_psnr=30.0,
                                   check_every=50)
        steps, best = history[-1]
        elapsed = time.monotonic() - t0
        assert best >= 30.0, f"train PSNR {best:.2f} dB after {steps} steps"
        assert elapsed <= 900.0, f"took {elapsed:.0f}s"
        print(f"  (reached {best:.2f} dB at step {steps} in {elapsed:.0f}s)",
              flush=True)


def test_c09_footprint_brackets():
    with criterion(9, "params in [0.2M, 0.5M]; MACs@256 in [4G, 12G]; toy closed forms"):
        conv = torch.nn.Conv2d(3, 16, 3, padding=1)
        assert count_params(conv) == 448
        toy = torch.nn.Sequential(torch.nn.Conv2d(3, 16, 3, padding=1),
                                  torch.nn.Conv2d(16, 3, 3, padding=1))
        assert count_params(toy) == 448 + 435
        assert count_macs(conv, 256, 256) == 432 * 65536  # 28,311,552

        torch.manual_seed(0)
        model = WaterFormer(reference_config())
        params = count_params(model)
        macs = count_macs(model, 256, 256)
        assert 200_000 <= params <= 500_000, f"params {params}"
        assert 4e9 <= macs <= 12e9, f"macs {macs}"
        print(f"  (reference: {params / 1e6:.3f}M params, {macs / 1e9:.3f}G MACs)",
              flush=True)


def test_c10_ablation_harness(tmp_path, capsys):
    with criterion(10, "6-variant ablation: deterministic report, decreasing "
                       "losses, V5 >= Base PSNR"):
        assert main(["synthesize", "--clean-dir", str(tmp_path / "clean"),
                     "--out-dir", str(tmp_path / "corpus"), "--types", "I,3",
                     "--depth-min", "0.5", "--depth-max", "3.0",
                     "--count", "20", "--size", "64", "--seed", "0",
                     "--generate-clean"]) == 0
        manifest_lines = (tmp_path / "corpus" / "manifest.txt").read_text()
        assert len([l for l in manifest_lines.splitlines()
                    if l and not l.startswith("#")]) == 40

        out_dir = tmp_path / "ablation"
        code = main(["ablate", "--variants", "base,v1,v2,v3,v4,v5",
                     "--data", str(tmp_path / "corpus" / "manifest.txt"),
                     "--out", str(out_dir), "--epochs", "6",
                     "--seed", "0", "--size", "64"])
        capsys.readouterr()
        assert code == 0

        table = (out_dir / "ablation.csv").read_text().strip().splitlines()
        assert table[0] == "variant,crb,cfb,chroma,sobel,ssim,psnr"
        rows = {line.split(",")[0]: line.split(",") for line in table[1:]}
        assert list(rows) == ["base", "v1", "v2", "v3", "v4", "v5"]
        assert rows["base"][1:5] == ["w/o", "w/o", "w/o", "w/o"]
        assert rows["v1"][1:5] == ["✓", "w/o", "w/o", "w/o"]
        assert rows["v5"][1:5] == ["✓", "✓", "✓", "✓"]

        for name in rows:
            with open(out_dir / name / "loss_curves.csv") as fh:
                curve = [float(r["total"]) for r in csv.DictReader(fh)]
            assert all(math.isfinite(v) for v in curve)
            first10 = sum(curve[:10]) / 10
            last10 = sum(curve[-10:]) / 10
            assert last10 < first10, f"{name} loss trend not decreasing"

        base_psnr = float(rows["base"][6])
        v5_psnr = float(rows["v5"][6])
        assert v5_psnr >= base_psnr, f"V5 {v5_psnr} < Base {base_psnr}"
        print(f"  (Base {base_psnr:.2f} dB, V5 {v5_psnr:.2f} dB)", flush=True)


def test_c11_lr_schedule():
    with criterion(11, "lr_at reproduces 0.001 / 0.0005 / 0.00025 at epochs 0/50/100"):
        cfg = TrainConfig(lr0=0.001, decay_every=50, decay_factor=0.5)
        assert lr_at(0, cfg) == 0.001
        assert lr_at(50, cfg) == 0.0005
        assert lr_at(100, cfg) == 0.00025


def test_c12_checkpoint_determinism(tmp_path):
    with criterion(12, "save -> load -> step equals uninterrupted step bit-exactly"):
        torch.set_num_threads(1)
        try:
            model_cfg = ModelConfig(stage_widths=(8, 16, 32), stage_depths=(1, 1, 1),
                                    decoder_depths=(1, 1), heads=(2, 4, 4),
                                    window_size=4)
            cfg = TrainConfig(seed=0)
            rng = np.random.default_rng(4)
            batch1 = (torch.tensor(rng.uniform(0, 1, (2, 3, 32, 32)), dtype=torch.float32),
                      torch.tensor(rng.uniform(0, 1, (2, 3, 32, 32)), dtype=torch.float32))
            batch2 = (torch.tensor(rng.uniform(0, 1, (2, 3, 32, 32)), dtype=torch.float32),
                      torch.tensor(rng.uniform(0, 1, (2, 3, 32, 32)), dtype=torch.float32))

            state_a = make_train_state(model_cfg, cfg)
            train_step(state_a, batch1, cfg)
            save_checkpoint(state_a, tmp_path / "mid.ckpt", model_cfg, cfg)
            train_step(state_a, batch2, cfg)

            state_b, _, cfg_b = restore_state(load_checkpoint(tmp_path / "mid.ckpt"))
            train_step(state_b, batch2, cfg_b)

            for pa, pb in zip(state_a.model.parameters(), state_b.model.parameters()):
                assert torch.equal(pa, pb)
            moments_a = state_a.optimizer.state_dict()["state"]
            moments_b = state_b.optimizer.state_dict()["state"]
            for key in moments_a:
                assert torch.equal(moments_a[key]["exp_avg"], moments_b[key]["exp_avg"])
                assert torch.equal(moments_a[key]["exp_avg_sq"],
                                   moments_b[key]["exp_avg_sq"])
        finally:
            torch.set_num_threads(2)
