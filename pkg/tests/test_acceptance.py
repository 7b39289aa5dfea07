"""Acceptance criteria 1-11 at their stated tolerances.

Each test records one PASS/FAIL line through the ``acceptance`` fixture; the
lines are repeated in the pytest terminal summary.
"""
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from wam.baselines import compare, fit_tree, summarize_batch
from wam.core import (
    Param,
    RunningStats,
    Tensor,
    add,
    avg_pool,
    batch_norm,
    conv2d_same,
    dense,
    dropout,
    flatten,
    gelu,
    max_pool2,
    mean_squared_error,
    no_grad,
    precision,
    relu,
    reshape,
    sparse_categorical_xent,
)
from wam.core.gradcheck import check_gradients
from wam.geodata import LABELS, build_sample_set, decimal_to_utm, harmonize, utm_to_decimal
from wam.geodata.fusion import fuse_sample
from wam.mapgen import enumerate_windows, predict_raster, predict_single
from wam.mim import BinningScheme, draw_mask, patch_bin_targets
from wam.models import EncoderConfig, ModelConfig, ModelState, PatchDecoder, WAMNetwork
from wam.synth import SynthConfig, fit_input_stats, generate
from wam.training import FinetuneConfig, PretrainConfig, evaluate_mae, finetune, pretrain, train_test_split

from conftest import run_pipeline

ROOT = Path(__file__).resolve().parents[1]
DESK = SynthConfig(n_unlabelled=600, n_labelled=300)
DESK_PRETRAIN = PretrainConfig(lr=2e-3, epochs=10, batch_size=32, mask_prob=0.5, val_fraction=0.1, seed=0)


def _desk_model(kind: str, bins: int = 64) -> ModelConfig:
    return ModelConfig(EncoderConfig(kind, (32, 64, 128)), input_size=32, patch=8, scheme=BinningScheme(bins))


@pytest.fixture(scope="module")
def desk():
    sc = generate(DESK, seed=0)
    lat, lon = DESK.target_axes()
    store = harmonize(sc.raw, lat, lon, {"synthetic": True})
    stats = fit_input_stats(store, sc.unlabelled + sc.labelled, DESK.window)
    x = build_sample_set(sc.unlabelled, store, stats, DESK.window).tensors
    xl = build_sample_set(sc.labelled, store, stats, DESK.window).tensors
    train, test = train_test_split(len(xl), 0.3, seed=0)
    return {"store": store, "stats": stats, "x": x, "xl": xl, "y": sc.labels, "train": train, "test": test}


@pytest.fixture(scope="module")
def pretrained(desk):
    out = {}
    for kind in ("sequential", "residual"):
        t0 = time.process_time()
        state, _ = pretrain(desk["x"], _desk_model(kind), DESK_PRETRAIN, desk["stats"])
        out[kind] = (state, time.process_time() - t0)
    return out


@pytest.fixture(scope="module")
def transfer(desk, pretrained):
    pre = pretrained["sequential"][0]
    xl, y, tr = desk["xl"], desk["y"], desk["train"]
    before = {k: v.copy() for k, v in pre.network.state_dict(optimizer=False).items() if k.startswith("encoder.")}
    fine, _ = finetune(pre, xl[tr], y[tr], FinetuneConfig(), mode="finetune")
    frozen, _ = finetune(pre, xl[tr], y[tr], FinetuneConfig(), mode="frozen")
    return {"finetune": fine, "frozen": frozen, "before": before}


# --- 1 -----------------------------------------------------------------------

def _grad_cases(rng):
    """(name, fn, inputs) for every differentiable op, one random instance."""
    leaf = lambda *s: Tensor(rng.standard_normal(s), requires_grad=True)  # noqa: E731
    x4 = leaf(2, 4, 4, 3)
    k, b = Param(rng.standard_normal((3, 3, 3, 2))), Param(rng.standard_normal(2))
    gamma, beta = Param(rng.standard_normal(3)), Param(rng.standard_normal(3))
    frozen = RunningStats(3, mean=rng.standard_normal(3), var=rng.random(3) + 0.5, initialized=True)
    away = rng.standard_normal((3, 5))
    away[np.abs(away) < 1e-3] = 0.5  # relu kink
    xr = Tensor(away, requires_grad=True)
    # distinct values keep every pooling window away from a tie
    xp = Tensor(rng.permutation(2 * 4 * 4 * 3).reshape(2, 4, 4, 3) * 0.01, requires_grad=True)
    x2, w, bd = leaf(4, 5), Param(rng.standard_normal((5, 3))), Param(rng.standard_normal(3))
    a2, b2 = leaf(2, 3, 3, 2), leaf(2, 3, 3, 2)
    logits = leaf(2, 2, 3, 5)
    targets = rng.integers(0, 5, (2, 2, 3))
    mask = rng.random((2, 2, 3)) < 0.6
    mask[0, 0, 0] = True
    pred, target = leaf(4, 6), rng.standard_normal((4, 6))
    drop_seed = int(rng.integers(1 << 30))
    return [
        ("conv2d_same", lambda: conv2d_same(x4, k, b), [x4, k, b]),
        ("batch_norm[train]", lambda: batch_norm(x4, gamma, beta, "train", RunningStats(3)), [x4, gamma, beta]),
        ("batch_norm[infer]", lambda: batch_norm(x4, gamma, beta, "infer", frozen), [x4, gamma, beta]),
        ("relu", lambda: relu(xr), [xr]),
        ("gelu", lambda: gelu(x2), [x2]),
        ("max_pool2", lambda: max_pool2(xp), [xp]),
        ("avg_pool", lambda: avg_pool(x4, 2), [x4]),
        ("dense", lambda: dense(x2, w, bd), [x2, w, bd]),
        ("dropout[train]", lambda: dropout(x2, 0.4, "train", np.random.default_rng(drop_seed)), [x2]),
        ("add", lambda: add(a2, b2), [a2, b2]),
        ("reshape", lambda: reshape(a2, (6, 6)), [a2]),
        ("flatten", lambda: flatten(a2), [a2]),
        ("sparse_categorical_xent", lambda: sparse_categorical_xent(logits, targets, mask), [logits]),
        ("mean_squared_error", lambda: mean_squared_error(pred, target), [pred]),
    ]


def test_criterion_01_gradient_suite(acceptance):
    t0 = time.perf_counter()
    worst: dict[str, float] = {}
    counts: dict[str, int] = {}
    with precision(np.float64):
        for instance in range(20):
            rng = np.random.default_rng([1, instance])
            for name, fn, inputs in _grad_cases(rng):
                errs = check_gradients(fn, inputs, h=1e-5, projection_seed=instance)
                worst[name] = max(worst.get(name, 0.0), *errs)
                counts[name] = counts.get(name, 0) + 1
    elapsed = time.perf_counter() - t0
    bad = {k: v for k, v in worst.items() if v >= 1e-4}
    ok = not bad and min(counts.values()) >= 20 and elapsed < 120
    acceptance(1, ok, f"{len(worst)} ops x {min(counts.values())} instances, worst relative error "
                      f"{max(worst.values()):.2e} (< 1e-4), {elapsed:.1f}s (< 120s)" + (f", failing {bad}" if bad else ""))


# --- 2 -----------------------------------------------------------------------

def test_criterion_02_masking_statistics(acceptance):
    rng = np.random.default_rng(2)
    masks = np.stack([draw_mask(8, 0.5, rng) for _ in range(200)])  # 200 x 64 = 12,800 patches
    frac = float(masks.mean())
    acceptance(2, masks.size >= 10_000 and abs(frac - 0.5) <= 0.01,
               f"masked fraction {frac:.4f} over {masks.size} patches (0.50 +/- 0.01)")


# --- 3 -----------------------------------------------------------------------

def _oracle_bin(patch: np.ndarray, scheme: BinningScheme) -> int:
    total = 0.0
    for v in patch.ravel():
        total += float(v)
    mean = total / patch.size
    k = int(np.floor((mean - scheme.lo) / (scheme.hi - scheme.lo) * scheme.bins))
    return min(max(k, 0), scheme.bins - 1)


def test_criterion_03_binning_oracle(acceptance):
    rng = np.random.default_rng(3)
    mismatches = checked = 0
    for _ in range(63):  # 63 samples x 16 patches = 1,008 patches
        scheme = BinningScheme(int(rng.choice([4, 8, 16, 32, 64])))
        x = rng.normal(0, rng.uniform(0.5, 3.0), (32, 32, 1)).astype(np.float32)
        got = patch_bin_targets(x, scheme, 8)
        for i in range(4):
            for j in range(4):
                checked += 1
                mismatches += int(got[i, j, 0] != _oracle_bin(x[8 * i:8 * i + 8, 8 * j:8 * j + 8, 0], scheme))
    acceptance(3, mismatches == 0 and checked >= 1000, f"{checked} random patches, {mismatches} mismatches vs brute force")


# --- 4 -----------------------------------------------------------------------

def test_criterion_04_shape_contracts(acceptance):
    x = np.random.default_rng(4).standard_normal((1, 128, 128, 9)).astype(np.float32)
    ok, lines = True, []
    for kind in ("sequential", "residual"):
        base = ModelConfig(EncoderConfig(kind, (128, 256, 512)), input_size=128, patch=16)
        net = WAMNetwork(base, seed=0, decoder=False, head=True)
        with no_grad():
            latent = net.encode(x, "train")
            out = net.head(latent, "infer")
            shapes = {k: PatchDecoder(replace(base, scheme=BinningScheme(k)), np.random.default_rng(k))(latent).shape
                      for k in (4, 8, 16, 32, 64)}
        ok &= (latent.shape == (1, 16, 16, 512) and out.shape == (1, 6)
               and all(s == (1, 8, 8, 9, k) for k, s in shapes.items()))
        lines.append(f"{kind} latent {latent.shape[1:]}, logits 8x8x9xK for K={sorted(shapes)} "
                     f"{'ok' if all(s == (1, 8, 8, 9, k) for k, s in shapes.items()) else shapes}, "
                     f"regression {out.shape[1:]}")
    acceptance(4, bool(ok), "128x128x9 input; " + "; ".join(lines))


# --- 5 -----------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_05_desk_pretraining(pretrained, acceptance):
    seq, t_seq = pretrained["sequential"]
    res, t_res = pretrained["residual"]
    a_seq, a_res = seq.meta["metric"], res.meta["metric"]
    floor = 5 / 64
    total = t_seq + t_res
    ok = (a_seq >= floor and a_res >= floor and a_res >= a_seq - 0.02 and total < 600
          and DESK_PRETRAIN.epochs <= 50)
    acceptance(5, ok, f"masked accuracy residual {a_res:.4f}, sequential {a_seq:.4f} (>= {floor:.4f}; "
                      f"residual >= sequential - 0.02) in {DESK_PRETRAIN.epochs} epochs, {total:.0f}s CPU (< 600s)")


# --- 6 -----------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_06_bin_granularity(desk, pretrained, acceptance):
    coarse, _ = pretrain(desk["x"], _desk_model("sequential", bins=4), DESK_PRETRAIN, desk["stats"])
    fine = pretrained["sequential"][0]
    a4, a64 = coarse.meta["metric"], fine.meta["metric"]
    acceptance(6, a4 - a64 >= 0.1, f"accuracy at 4 bins {a4:.4f} vs 64 bins {a64:.4f}, gap {a4 - a64:.4f} (>= 0.1)")


# --- 7 -----------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_07_transfer(desk, transfer, acceptance):
    xl, y, te = desk["xl"], desk["y"], desk["test"]
    m_fine = evaluate_mae(transfer["finetune"], xl[te], y[te])
    m_frozen = evaluate_mae(transfer["frozen"], xl[te], y[te])
    wins = int(np.sum(m_fine <= m_frozen))
    after = transfer["frozen"].network.state_dict(optimizer=False)
    identical = all(np.array_equal(after[k], v) for k, v in transfer["before"].items())
    detail = ", ".join(f"{lab} {a:.4g}/{b:.4g}" for lab, a, b in zip(LABELS, m_fine, m_frozen))
    acceptance(7, wins >= 4 and identical,
               f"fine-tuned <= frozen test MAE on {wins}/6 labels (>= 4) [{detail}]; "
               f"frozen encoder bit-identical: {identical}")


# --- 8 -----------------------------------------------------------------------

def test_criterion_08_baselines(desk, acceptance):
    xl, y, tr, te = desk["xl"], desk["y"], desk["train"], desk["test"]
    res = compare(xl[tr], y[tr], xl[te], y[te], seed=0)
    beats = {m: int(np.sum(res[m] < res["average"])) for m in ("tree", "forest", "gboost")}
    f_train = summarize_batch(xl[tr])
    deep = fit_tree(f_train, y[tr], max_depth=None, min_samples_leaf=1)
    train_err = float(np.abs(deep.predict(f_train) - y[tr]).max())
    ok = all(v >= 5 for v in beats.values()) and train_err == 0.0
    acceptance(8, ok, f"labels beating the average baseline: {beats} (each >= 5 of 6); "
                      f"unlimited-depth tree max training error {train_err}")


# --- 9 -----------------------------------------------------------------------

def _raster_mismatches(state, store, day, window, stride):
    rasters = predict_raster(state, store, day, window=window, stride=stride)
    bad = n = 0
    for r, c in enumerate_windows(store.shape, window, stride):
        t = fuse_sample((float(store.lat_axis[r]), float(store.lon_axis[c])), day, store, state.stats, window).tensor
        single = predict_single(state, t)
        bad += sum(int(rasters[j].values[r, c] != single[j]) for j in range(len(LABELS)))
        n += 1
    defined = int(rasters[0].defined.sum())
    return bad, n, defined


@pytest.mark.slow
def test_criterion_09_raster_consistency(desk, pretrained, transfer, acceptance):
    lines, ok = [], True
    store, day = desk["store"], desk["store"].sample_dates()[0]

    # desk model, every window of the synthetic region
    bad, n, defined = _raster_mismatches(transfer["finetune"], store, day, 32, 1)
    h, w = store.shape
    ok &= bad == 0 and n == defined == (h - 31) * (w - 31)
    lines.append(f"desk sequential {h}x{w}: {n} windows, {bad} mismatches")

    # residual encoder with a quickly trained head, every fourth window
    res_pre = pretrained["residual"][0]
    quick = FinetuneConfig(epochs=2)
    res_state, _ = finetune(res_pre, desk["xl"][desk["train"]], desk["y"][desk["train"]], quick, mode="frozen")
    bad, n, _ = _raster_mismatches(res_state, store, day, 32, 4)
    ok &= bad == 0
    lines.append(f"desk residual stride 4: {n} windows, {bad} mismatches")

    # 128-cell windows: the count formula (H-127)(W-127)
    big = SynthConfig(rows=130, cols=131, window=128, n_unlabelled=2, n_labelled=2, n_event_dates=1)
    sc = generate(big, seed=9)
    bstore = harmonize(sc.raw, *big.target_axes())
    bstats = fit_input_stats(bstore, sc.unlabelled + sc.labelled, 128)
    cfg = ModelConfig(EncoderConfig("sequential", (4, 8, 16)), input_size=128, patch=16, hidden=8)
    net = WAMNetwork(cfg, seed=0, decoder=False)
    net.encode(np.random.default_rng(0).standard_normal((2, 128, 128, 9)), "train")
    bstate = ModelState(net, bstats.with_labels(np.zeros(6), np.ones(6)))
    bad, n, defined = _raster_mismatches(bstate, bstore, bstore.sample_dates()[0], 128, 1)
    expect = (130 - 127) * (131 - 127)
    ok &= bad == 0 and n == defined == expect
    lines.append(f"130x131 region, 128 window: {defined} defined cells (expected {expect}), {bad} mismatches")
    acceptance(9, bool(ok), "; ".join(lines))


# --- 10 ----------------------------------------------------------------------

UTM_REFERENCE = [
    (500000.0, 4649776.22, 30, "N"),
    (255000.0, 4540000.0, 30, "N"),
    (720000.0, 4180000.0, 30, "N"),
    (320000.0, 4750000.0, 29, "N"),
    (612345.6, 4429876.5, 31, "N"),
    (166021.44, 1000.0, 33, "N"),
    (833978.56, 9000000.0, 12, "N"),
    (400000.0, 6200000.0, 55, "S"),
    (500000.0, 8000000.0, 19, "S"),
    (700000.0, 3500000.0, 60, "N"),
]


def test_criterion_10_geodesy(acceptance):
    pyproj = pytest.importorskip("pyproj")
    worst_deg = worst_m = 0.0
    for east, north, zone, hemi in UTM_REFERENCE:
        crs = f"+proj=utm +zone={zone} +datum=WGS84" + (" +south" if hemi == "S" else "")
        lon_o, lat_o = pyproj.Transformer.from_crs(crs, "EPSG:4326", always_xy=True).transform(east, north)
        lat, lon = utm_to_decimal(east, north, zone, hemi)
        worst_deg = max(worst_deg, abs(lat - lat_o), abs(lon - lon_o))
        e2, n2 = decimal_to_utm(lat, lon, zone, hemi)
        worst_m = max(worst_m, abs(e2 - east), abs(n2 - north))
    acceptance(10, worst_deg < 1e-6 and worst_m < 1e-3,
               f"{len(UTM_REFERENCE)} points: max deviation from pyproj {worst_deg:.2e} deg (< 1e-6), "
               f"round trip {worst_m:.2e} m (< 1e-3)")


# --- 11 ----------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_11_determinism(tmp_path, acceptance):
    desk_cfg = (ROOT / "configs" / "desk.cfg").read_text()
    flags = ("--epochs", "2")
    a = run_pipeline(tmp_path / "a", desk_cfg, threads=1, train_flags=flags)
    b = run_pipeline(tmp_path / "b", desk_cfg, threads=2, train_flags=flags)
    groups = {"metric logs": [], "checkpoints": [], "rasters": [], "other": []}
    differ = []
    for k in ("raw", "data", "runs", "maps"):
        for p in sorted(a[k].rglob("*")):
            if not p.is_file():
                continue
            rel = p.relative_to(a[k])
            same = p.read_bytes() == (b[k] / rel).read_bytes()
            group = ("metric logs" if rel.name.endswith("_metrics.csv") else "checkpoints" if rel.suffix == ".ckpt"
                     else "rasters" if k == "maps" and rel.suffix in (".ppm", ".csv") else "other")
            groups[group].append(same)
            if not same:
                differ.append(f"{k}/{rel}")
    counts = ", ".join(f"{sum(v)}/{len(v)} {g}" for g, v in groups.items())
    ok = not differ and all(groups[g] for g in ("metric logs", "checkpoints", "rasters"))
    acceptance(11, ok, f"two desk pipeline runs (seed 0, {flags[1]} epochs per stage, 1 vs 2 mapgen threads): "
                       f"byte-identical {counts}" + (f"; differing: {differ[:5]}" if differ else ""))
