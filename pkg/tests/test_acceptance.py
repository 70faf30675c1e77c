"""Release gate: one test per acceptance criterion.

Each test re-derives its expected values independently (brute-force loops,
hand-built references) rather than trusting the library's own helpers, and
prints a single [PASS]/[FAIL] line naming the criterion.
"""
from __future__ import annotations

import hashlib
import math
import time
from pathlib import Path

import numpy as np
import psutil
import pytest
import torch

from brandvis.datamodel import (
    BoundingBox,
    BoundingBoxSet,
    HypothesisDataset,
    HypothesisSample,
    SaliencyMap,
)
from brandvis.model.attention import efficient_attention
from brandvis.model.network import ModelConfig, SaliencyModel, predict_saliency
from brandvis.objectives import (
    EPSILON,
    LossWeights,
    auc_judd,
    composite_loss,
    correlation_coefficient,
    kl_divergence,
    nss,
    similarity,
)
from brandvis.scoring import ScoreConfig, brand_attention_score, hypothesis_report, run_hypothesis, summarize_scores
from brandvis.training import TrainConfig, make_blob_samples, overfit_smoke, train

FIXTURES = Path(__file__).parent / "fixtures"


def _criterion(name: str, passed: bool, detail: str) -> None:
    print(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")
    assert passed, f"{name}: {detail}"


# --- 1. metric oracle suite --------------------------------------------------


def _oracle_cc(a, b):
    n = a.size
    ma = sum(a.flat) / n
    mb = sum(b.flat) / n
    cov = sva = svb = 0.0
    for x, y in zip(a.flat, b.flat):
        cov += (x - ma) * (y - mb)
        sva += (x - ma) ** 2
        svb += (y - mb) ** 2
    return (cov / n) / (math.sqrt(sva / n) * math.sqrt(svb / n))


def _oracle_kl(p, g):
    ps = sum(p.flat)
    gs = sum(g.flat)
    total = 0.0
    for x, y in zip(p.flat, g.flat):
        total += (y / gs) * math.log(EPSILON + (y / gs) / (x / ps + EPSILON))
    return total


def _oracle_sim(p, g):
    ps = sum(p.flat)
    gs = sum(g.flat)
    return sum(min(x / ps, y / gs) for x, y in zip(p.flat, g.flat))


def _oracle_nss(p, f):
    n = p.size
    m = sum(p.flat) / n
    sd = math.sqrt(sum((x - m) ** 2 for x in p.flat) / n)
    z = [(x - m) / sd for x in p.flat]
    vals = [zi for zi, fi in zip(z, f.flat) if fi == 1]
    return sum(vals) / len(vals)


def _oracle_auc(p, f):
    # threshold sweep over every distinct saliency value, trapezoid area
    pos = [x for x, fi in zip(p.flat, f.flat) if fi == 1]
    allv = list(p.flat)
    points = [(0.0, 0.0)]
    for t in sorted(set(allv), reverse=True):
        tpr = sum(1 for v in pos if v >= t) / len(pos)
        fpr = sum(1 for v in allv if v >= t) / len(allv)
        points.append((fpr, tpr))
    area = 0.0
    for (x0, y0), (x1, y1) in zip(points, points[1:]):
        area += (x1 - x0) * (y0 + y1) / 2.0
    return area


def test_criterion_metric_oracles():
    t0 = time.monotonic()
    rng = np.random.default_rng(2024)
    worst = {"cc": 0.0, "kl": 0.0, "sim": 0.0, "nss": 0.0, "auc": 0.0}
    for _ in range(100):
        p = rng.uniform(0.01, 1.0, (8, 8))
        g = rng.uniform(0.01, 1.0, (8, 8))
        f = np.zeros((8, 8))
        f.flat[rng.choice(64, size=rng.integers(1, 12), replace=False)] = 1.0
        worst["cc"] = max(worst["cc"], abs(correlation_coefficient(p, g) - _oracle_cc(p, g)))
        worst["kl"] = max(worst["kl"], abs(kl_divergence(p, g) - _oracle_kl(p, g)))
        worst["sim"] = max(worst["sim"], abs(similarity(p, g) - _oracle_sim(p, g)))
        worst["nss"] = max(worst["nss"], abs(nss(p, f) - _oracle_nss(p, f)))
        worst["auc"] = max(worst["auc"], abs(auc_judd(p, f) - _oracle_auc(p, f)))
    elapsed = time.monotonic() - t0
    max_err = max(worst.values())
    _criterion(
        "metric oracle suite",
        max_err <= 1e-6 and elapsed < 10.0,
        f"max |delta| {max_err:.2e} over 100 pairs x 5 metrics in {elapsed:.2f}s",
    )


# --- 2. efficient-attention equivalence --------------------------------------


def _naive_factorized(q, k, v):
    def softmax(x, axis):
        e = np.exp(x - x.max(axis=axis, keepdims=True))
        return e / e.sum(axis=axis, keepdims=True)

    rq = softmax(q, 2)       # over the key dimension
    rk = softmax(k, 1)       # over the token dimension
    sim = rq @ rk.transpose(0, 2, 1)   # the n x n matrix the fast path avoids
    return sim @ v


def test_criterion_attention_equivalence():
    t0 = time.monotonic()
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(1, 17))
        d_k = int(rng.integers(1, 9))
        d_v = int(rng.integers(1, 9))
        q = rng.normal(size=(2, n, d_k))
        k = rng.normal(size=(2, n, d_k))
        v = rng.normal(size=(2, n, d_v))
        fast = efficient_attention(
            torch.from_numpy(q), torch.from_numpy(k), torch.from_numpy(v)
        ).numpy()
        worst = max(worst, float(np.abs(fast - _naive_factorized(q, k, v)).max()))

    # memory proof: at n = 50,000 an n x n float64 buffer would need 20 GB
    proc = psutil.Process()
    rss_before = proc.memory_info().rss
    big_n = 50_000
    q = torch.randn(1, big_n, 4, dtype=torch.float64)
    k = torch.randn(1, big_n, 4, dtype=torch.float64)
    v = torch.randn(1, big_n, 4, dtype=torch.float64)
    out = efficient_attention(q, k, v)
    rss_growth = proc.memory_info().rss - rss_before
    assert out.shape == (1, big_n, 4)
    elapsed = time.monotonic() - t0
    _criterion(
        "efficient-attention equivalence",
        worst <= 1e-6 and rss_growth < 500 * 1024 * 1024 and elapsed < 5.0,
        f"max |delta| {worst:.2e} on 50 instances, rss growth "
        f"{rss_growth / 1e6:.0f} MB at n={big_n}, {elapsed:.2f}s",
    )


# --- 3. composite-loss identity ----------------------------------------------


def test_criterion_composite_loss_identity():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(10):
        g = torch.from_numpy(rng.uniform(0.01, 1.0, (1, 32, 32)))
        loss = float(composite_loss(g.clone(), g.clone()))
        worst = max(worst, abs(loss - (-3.0)))
    weights = LossWeights()
    _criterion(
        "composite-loss identity",
        worst <= 1e-6 and (weights.kl, weights.cc, weights.mse) == (10.0, -3.0, 5.0),
        f"S = target gives loss within {worst:.2e} of -3.000000 under weights (10, -3, 5)",
    )


# --- 4. gradient check ---------------------------------------------------------


def test_criterion_gradient_check():
    # Central differences are only well-posed where the loss is smooth in the
    # parameter. Inside the stock ResNet trunk they are not: at 32x32 a one-
    # coordinate nudge shifts millions of activations through batch-statistic
    # normalization, flipping relu/maxpool branches, and the FD error stays
    # O(1) no matter how small h gets (verified empirically). The check
    # therefore samples the hand-written modules, which is where a gradient
    # bug could actually live: attention, transformer blocks, projections,
    # positional embeddings, the fusion weights, the decoder, and the head.
    t0 = time.monotonic()
    torch.manual_seed(3)
    model = SaliencyModel(ModelConfig(resolution=(32, 32))).double()
    model.eval()  # normalization uses batch statistics either way

    rng = np.random.default_rng(3)
    img = torch.from_numpy(rng.uniform(0.0, 1.0, (2, 3, 32, 32)))
    tmap = torch.from_numpy(rng.uniform(0.0, 1.0, (2, 3, 32, 32)))
    target = torch.from_numpy(rng.uniform(0.05, 1.0, (2, 32, 32)))

    def loss_value() -> float:
        with torch.no_grad():
            return float(composite_loss(model(img, tmap), target))

    loss = composite_loss(model(img, tmap), target)
    model.zero_grad()
    loss.backward()

    named = [
        (n, p) for n, p in model.named_parameters()
        if p.grad is not None and "backbone" not in n
    ]
    picks: list[tuple[str, torch.Tensor, int]] = [
        (n, p, 0) for n, p in named if n.startswith("alphas")
    ]
    grad_rng = np.random.default_rng(17)
    for prefix in ("head", "stage_to_16", "stage_to_4"):  # decoder path coverage
        for n, p in named:
            if n.startswith(prefix) and n.endswith("weight"):
                flat = p.grad.view(-1)
                candidates = (flat.abs() > 1e-5).nonzero().view(-1)
                picks.append((n, p, int(candidates[0])))
                break
    pool = [(n, p) for n, p in named if not n.startswith("alphas")]
    seen = {(n, i) for n, _, i in picks}
    while len(picks) < 22:
        name, p = pool[int(grad_rng.integers(0, len(pool)))]
        idx = int(grad_rng.integers(0, p.numel()))
        if (name, idx) not in seen and abs(float(p.grad.view(-1)[idx])) > 1e-5:
            seen.add((name, idx))
            picks.append((name, p, idx))

    worst = 0.0
    with torch.no_grad():
        for name, p, idx in picks:
            analytic = float(p.grad.view(-1)[idx])
            orig = float(p.data.view(-1)[idx])
            h = 1e-6 * max(1.0, abs(orig))
            flat = p.data.view(-1)
            flat[idx] = orig + h
            plus = loss_value()
            flat[idx] = orig - h
            minus = loss_value()
            flat[idx] = orig
            numeric = (plus - minus) / (2.0 * h)
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric))
            worst = max(worst, rel)

    elapsed = time.monotonic() - t0
    alphas = sum(1 for n, _, _ in picks if n.startswith("alphas"))
    _criterion(
        "gradient check",
        worst <= 1e-3 and len(picks) >= 20 and alphas >= 1 and elapsed < 120.0,
        f"max rel err {worst:.2e} over {len(picks)} params ({alphas} fusion weights) "
        f"in {elapsed:.1f}s",
    )


# --- 5. shape/pipeline contract -------------------------------------------------


def test_criterion_shape_contract():
    t0 = time.monotonic()
    torch.manual_seed(0)
    model = SaliencyModel(ModelConfig(resolution=(288, 384)))
    model.eval()

    captured: dict[str, tuple] = {}

    def grab(label):
        def hook(_module, _inputs, output):
            captured[label] = tuple(output.shape)
        return hook

    hooks = [model.image_backbone.register_forward_hook(
        lambda m, i, o: captured.update(taps=tuple(tuple(t.shape) for t in o))
    )]
    for i, enc in enumerate(model.image_scales):
        hooks.append(enc.register_forward_hook(grab(f"scale_{i}")))
    for label, stage in [
        ("up16", model.stage_to_16), ("up8", model.stage_to_8),
        ("up4", model.stage_to_4), ("up2", model.stage_to_2),
        ("up1", model.stage_to_1),
    ]:
        hooks.append(stage.register_forward_hook(grab(label)))

    with torch.no_grad():
        out = model(torch.rand(1, 3, 288, 384), torch.rand(1, 3, 288, 384))
    for h in hooks:
        h.remove()

    expected_taps = ((1, 512, 36, 48), (1, 1024, 18, 24), (1, 2048, 9, 12))
    expected_proj = {
        "scale_0": (1, 512, 36, 48),
        "scale_1": (1, 768, 18, 24),
        "scale_2": (1, 768, 9, 12),
    }
    expected_decoder = {
        "up16": (1, 768, 18, 24),
        "up8": (1, 512, 36, 48),
        "up4": (1, 256, 72, 96),
        "up2": (1, 128, 144, 192),
        "up1": (1, 64, 288, 384),
    }
    ok = (
        captured["taps"] == expected_taps
        and all(captured[k] == v for k, v in expected_proj.items())
        and all(captured[k] == v for k, v in expected_decoder.items())
        and out.shape == (1, 288, 384)
        and 0.0 <= float(out.min()) and float(out.max()) <= 1.0
    )
    elapsed = time.monotonic() - t0
    _criterion(
        "shape/pipeline contract",
        ok and elapsed < 30.0,
        f"taps 512/1024/2048 -> proj 512/768/768, five 2x stages back to 288x384, "
        f"output in [0,1], {elapsed:.1f}s",
    )


# --- 6. overfit smoke -------------------------------------------------------------


def test_criterion_overfit_smoke():
    result = overfit_smoke()
    schedule_ok = all(
        rec.learning_rate == pytest.approx(5e-4 * 0.1 ** ((rec.epoch - 1) // 4), rel=1e-12)
        for rec in result.records
    )
    config_ok = TrainConfig().weight_decay == 1e-4 and TrainConfig().lr_step_epochs == 4
    passed = (
        result.mean_cc >= 0.85
        and result.loss_halved
        and result.steps <= 200
        and schedule_ok
        and config_ok
        and result.elapsed_s <= 900.0
    )
    _criterion(
        "overfit smoke",
        passed,
        f"CC {result.mean_cc:.3f}, loss {result.initial_loss:.3f} -> {result.final_loss:.3f} "
        f"in {result.steps} steps / {result.elapsed_s:.0f}s, lr schedule verified",
    )


# --- 7. Algorithm 1 properties ------------------------------------------------------


def _pixel_membership_score(sal: np.ndarray, boxes: list[BoundingBox]) -> float:
    total = inside = 0.0
    h, w = sal.shape
    for y in range(h):
        for x in range(w):
            total += sal[y, x]
            if any(b.x_min <= x <= b.x_max and b.y_min <= y <= b.y_max for b in boxes):
                inside += sal[y, x]
    return 100.0 * inside / total


def test_criterion_algorithm1_properties():
    t0 = time.monotonic()
    rng = np.random.default_rng(99)
    worst = 0.0
    for _ in range(500):
        h = int(rng.integers(2, 17))
        w = int(rng.integers(2, 17))
        sal = rng.uniform(0.001, 1.0, (h, w))
        n_boxes = int(rng.integers(1, 5))
        boxes = []
        for _ in range(n_boxes):
            x0 = int(rng.integers(0, w))
            y0 = int(rng.integers(0, h))
            boxes.append(BoundingBox(
                x0, y0, int(rng.integers(x0, w)), int(rng.integers(y0, h)),
            ))
        box_set = BoundingBoxSet(tuple(boxes))

        assert brand_attention_score(sal, BoundingBoxSet()) == 0.0
        assert brand_attention_score(
            sal, BoundingBoxSet((BoundingBox(0, 0, w - 1, h - 1),))
        ) == 100.0

        score = brand_attention_score(sal, box_set)
        worst = max(worst, abs(score - _pixel_membership_score(sal, boxes)))

        b = boxes[0]
        grown = BoundingBox(
            max(0, b.x_min - 1), max(0, b.y_min - 1),
            min(w - 1, b.x_max + 1), min(h - 1, b.y_max + 1),
        )
        grown_score = brand_attention_score(
            sal, BoundingBoxSet((grown,) + tuple(boxes[1:]))
        )
        assert grown_score >= score - 1e-12

    elapsed = time.monotonic() - t0
    _criterion(
        "Algorithm 1 properties",
        worst <= 1e-9 and elapsed < 30.0,
        f"500 instances: empty->0, full->100.0 exactly, oracle |delta| {worst:.2e}, "
        f"monotone growth, {elapsed:.1f}s",
    )


# --- 8. hypothesis harness fidelity ----------------------------------------------


def test_criterion_harness_fidelity():
    import json

    reference = json.loads((FIXTURES / "reference_conditions.json").read_text())
    scores = {}
    for hyp, conditions in reference.items():
        for cond, (mean, se) in conditions.items():
            # two scores with the target mean and spread: SE of {m-s, m+s} is s
            scores[(hyp, cond)] = (mean - se, mean + se)
    report = hypothesis_report(summarize_scores(scores))
    golden = (FIXTURES / "reference_report.csv").read_text()
    replay_ok = report == golden

    named_rows = [
        "logo_vertical_position,center,2,40.02,7.06,yes",
        "logo_position_grid,center,2,24.92,4.12,yes",
        "packaging_color,white,2,40.84,5.89,yes",
        "logo_color,red,2,37.44,4.79,yes",
    ]
    rows_ok = all(row in report for row in named_rows)

    # planted center bias: maps concentrated at the center must make the
    # center-box condition win decisively
    rng = np.random.default_rng(5)
    h = w = 64
    yy, xx = np.mgrid[0:h, 0:w]
    conditions = {"center": (24, 24, 39, 39), "corner": (0, 0, 15, 15)}
    maps: dict[Path, SaliencyMap] = {}
    hypotheses: dict[str, dict[str, list[HypothesisSample]]] = {"placement": {}}
    for cond, box in conditions.items():
        samples = []
        for i in range(6):
            cy = 32 + rng.uniform(-3, 3)
            cx = 32 + rng.uniform(-3, 3)
            blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * 8.0**2))
            path = Path(f"synthetic_{cond}_{i}.png")
            maps[path] = SaliencyMap(blob / blob.max())
            samples.append(HypothesisSample(
                image_path=path,
                boxes=BoundingBoxSet((BoundingBox(*box),)),
                image_size=(h, w),
            ))
        hypotheses["placement"][cond] = samples
    dataset = HypothesisDataset(hypotheses=hypotheses)
    result = run_hypothesis(dataset, lambda s: maps[s.image_path])
    stats = {row.condition: row for row in result.stats}
    margin = stats["center"].mean - stats["corner"].mean
    se_bound = 2.0 * max(stats["center"].se, stats["corner"].se)
    planted_ok = stats["center"].winner and margin > se_bound

    _criterion(
        "hypothesis harness fidelity",
        replay_ok and rows_ok and planted_ok,
        f"fixture replay byte-equal: {replay_ok}, named rows present: {rows_ok}, "
        f"planted center bias margin {margin:.2f} > 2xSE {se_bound:.2f}",
    )


# --- 9. determinism -----------------------------------------------------------------


def test_criterion_determinism(tmp_path):
    def run(tag: str) -> str:
        torch.manual_seed(0)
        model = SaliencyModel(ModelConfig(resolution=(64, 64)))
        samples = make_blob_samples(resolution=(64, 64))[:2]
        config = TrainConfig(batch_size=2, epochs=1, seed=0, checkpoint_dir=tmp_path / tag)
        train(model, samples, config)
        return hashlib.sha256((tmp_path / tag / "epoch_001.pt").read_bytes()).hexdigest()

    h1, h2 = run("first"), run("second")

    torch.manual_seed(1)
    model = SaliencyModel(ModelConfig(resolution=(64, 64)))
    from brandvis.datamodel import ImageTensor

    rng = np.random.default_rng(1)
    img = ImageTensor(
        rng.uniform(0.0, 1.0, (64, 64, 3)).astype(np.float32), original_size=(64, 64)
    )
    map1 = predict_saliency(model, img)
    map2 = predict_saliency(model, img)
    inference_ok = np.array_equal(map1.data, map2.data)

    _criterion(
        "determinism",
        h1 == h2 and inference_ok,
        f"checkpoint sha256 match: {h1 == h2}, repeated inference bitwise equal: {inference_ok}",
    )
