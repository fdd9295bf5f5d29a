"""Acceptance gate: end-to-end experiment targets at pinned tolerances.

Training runs and benchmark sweeps are expensive, so their artifacts are
cached under runs/acceptance/ (checkpoints and raw timing CSVs).  A missing
artifact is recomputed here with the exact shipped preset; delete the cache
directory to force full retraining (about two to three hours on one CPU).
"""

import csv
from pathlib import Path

import numpy as np
import pytest

from stfm import bench, checkpoint, checks, tasks, training
from stfm.rng import Rng
from stfm.runconfig import load_run_config

pytestmark = pytest.mark.acceptance

ROOT = Path(__file__).resolve().parents[1]
CACHE = ROOT / "runs" / "acceptance"


def report(label: str, value: str, ok: bool) -> bool:
    print(f"[acceptance] {label}: {value} {'PASS' if ok else 'FAIL'}")
    return ok


def trained(name: str):
    """Load the cached checkpoint for a shipped preset, training if absent."""
    cfg = load_run_config(ROOT / "configs" / f"{name}.cfg")
    ckpt = CACHE / name / "model.stfm"
    if ckpt.exists():
        return checkpoint.load_checkpoint(ckpt)
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    model, _ = training.train(cfg)
    checkpoint.save_checkpoint(model, ckpt)
    return model


def bench_cached(path: Path, block: str, sizes, m: int):
    """Raw per-size timings from the cache CSV, measuring if absent."""
    if not path.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
        bench.write_bench_csv(bench.bench_block(block, sizes, reps=7, m=m), path)
    raw: dict[int, list[float]] = {}
    with path.open() as f:
        for row in csv.DictReader(f):
            expect_m = m if block == "isab" else 0
            assert row["block"] == block and int(row["m"]) == expect_m
            raw.setdefault(int(row["n"]), []).append(float(row["seconds"]))
    assert set(raw) == set(sizes)
    return {n: float(np.median(t)) for n, t in raw.items()}


# -- criterion 1: max-value regression ---------------------------------------

def test_criterion_1_max_regression():
    rng_seed = 12345
    results = {}
    for name in ("max_sab_pma", "max_rff_max", "max_rff_mean"):
        model = trained(name)
        out = training.evaluate_max_regression(model, Rng(rng_seed), 1000)
        results[name] = out["mae"]

    ok = report("1a SAB+PMA mae", f"{results['max_sab_pma']:.4f} (need <= 0.5)",
                results["max_sab_pma"] <= 0.5)
    ok &= report("1b rFF+max mae", f"{results['max_rff_max']:.4f} (need <= 0.3)",
                 results["max_rff_max"] <= 0.3)
    ok &= report("1c rFF+mean mae", f"{results['max_rff_mean']:.4f} (need >= 1.2)",
                 results["max_rff_mean"] >= 1.2)
    assert ok, f"max regression targets missed: {results}"


# -- criterion 2: amortized clustering ordering ------------------------------

def test_criterion_2_clustering_ordering():
    st = trained("cluster_st_reduced")
    rff = trained("cluster_rff_reduced")
    rng = Rng(777)
    k = 4
    rows = []
    for _ in range(500):
        ds = tasks.gen_synthetic_mog(rng)
        per = {}
        for label, source in (("st", st), ("rff", rff), ("oracle", None)):
            theta0 = (ds.params if source is None
                      else training.predict_mog(source, ds.points, k))
            _, ll0 = tasks.mog_loglik_np(ds.points, theta0)
            theta1, _ = tasks.em_step(ds.points, theta0)
            _, ll1 = tasks.mog_loglik_np(ds.points, theta1)
            per[label] = (ll0, ll1)
        rows.append(per)

    # Trained weights must still be permutation invariant.
    from stfm import tensor as T
    probe = tasks.gen_synthetic_mog(Rng(9), n=200).points
    with T.no_grad():
        for model in (st, rff):
            base = model(probe).data
            perm_out = model(probe[Rng(10).permutation(200)]).data
            worst = np.max(np.abs(perm_out - base)) / max(np.max(np.abs(base)), 1.0)
            assert worst <= 1e-9

    mean = lambda label, i: float(np.mean([r[label][i] for r in rows]))
    st0, rff0, oracle0 = mean("st", 0), mean("rff", 0), mean("oracle", 0)
    refine_violations = sum(
        1 for r in rows for label in ("st", "rff")
        if r[label][1] < r[label][0] - 1e-9)

    ok = report("2a ST vs oracle LL0/data",
                f"{st0:.4f} vs {oracle0:.4f} (need gap <= 0.35)",
                st0 >= oracle0 - 0.35)
    ok &= report("2b ST beats rFF LL0/data",
                 f"{st0:.4f} vs {rff0:.4f} (need margin >= 0.15)",
                 st0 - rff0 >= 0.15)
    ok &= report("2c EM refinement LL1 >= LL0",
                 f"{refine_violations} violations in 1000 refinements (need 0)",
                 refine_violations == 0)
    assert ok, f"clustering ordering missed: st={st0} rff={rff0} oracle={oracle0}"


# -- criterion 3: oracle likelihood reproduction -----------------------------

def test_criterion_3_oracle_loglik():
    rng = Rng(123)
    lls = [tasks.mog_loglik_np(ds.points, ds.params)[1]
           for ds in (tasks.gen_synthetic_mog(rng) for _ in range(500))]
    mean_ll = float(np.mean(lls))
    assert report("3 oracle LL/data", f"{mean_ll:.4f} (need in [-1.53, -1.42])",
                  -1.53 <= mean_ll <= -1.42)


# -- criterion 4: runtime complexity -----------------------------------------

def test_criterion_4_complexity():
    sab_sizes = [256, 512, 1024, 2048, 4096]
    isab_sizes = [256, 512, 1024, 2048, 4096, 8192]
    sab = bench_cached(CACHE / "bench_sab.csv", "sab", sab_sizes, 16)
    isab16 = bench_cached(CACHE / "bench_isab16.csv", "isab", isab_sizes, 16)
    isab32 = bench_cached(CACHE / "bench_isab32.csv", "isab", [4096, 8192], 32)

    sab_slope = bench.fit_loglog_slope(sab_sizes, [sab[n] for n in sab_sizes])
    isab_slope = bench.fit_loglog_slope(isab_sizes,
                                        [isab16[n] for n in isab_sizes])
    ratio = isab32[8192] / isab16[8192]

    ok = report("4a SAB log-log slope", f"{sab_slope:.3f} (need >= 1.6)",
                sab_slope >= 1.6)
    ok &= report("4b ISAB(16) log-log slope", f"{isab_slope:.3f} (need <= 1.3)",
                 isab_slope <= 1.3)
    # Known red: at width 64 the m-independent n x d^2 work (projections of
    # the full set, feedforward, layernorm) dominates both ISAB variants, so
    # doubling m from 16 to 32 only adds the small n*m*d attention term.  A
    # FLOP count bounds the ratio near 1.15; measurements land around 1.2.
    ok &= report("4c ISAB m=32/m=16 time at n=8192",
                 f"{ratio:.3f} (need in [1.5, 2.5])", 1.5 <= ratio <= 2.5)
    assert ok, (f"complexity targets missed: sab_slope={sab_slope:.3f} "
                f"isab_slope={isab_slope:.3f} ratio={ratio:.3f}")


# -- criterion 5: property suite ---------------------------------------------

def test_criterion_5_property_suite():
    grad = checks.grad_suite(seed=0)
    perm = checks.perm_suite(seed=0, n_perms=100)
    lemma = checks.lemma_suite(seed=0)

    ok = report("5a gradient checks", f"worst {grad.worst:.2e} (tol 1e-6)",
                grad.ok and grad.tol == 1e-6)
    ok &= report("5b permutation suite", f"worst {perm.worst:.2e} (tol 1e-9)",
                 perm.ok and perm.tol == 1e-9)
    ok &= report("5c pooling lemmas", f"worst {lemma.worst:.2e} (tol 1e-12)",
                 lemma.ok and lemma.tol == 1e-12)
    assert ok


# -- criterion 6: persistence ------------------------------------------------

def test_criterion_6_persistence(tmp_path):
    cfg = training.TrainConfig(
        task=training.TASK_MAX_REGRESSION, encoder=("sab",), dim=8, heads=2,
        steps=25, batch_size=4, eval_every=100, seed=31)
    blobs = []
    for name in ("first", "second"):
        model, _ = training.train_max_regression(cfg)
        path = tmp_path / f"{name}.stfm"
        checkpoint.save_checkpoint(model, path)
        loaded = checkpoint.load_checkpoint(path)
        resaved = tmp_path / f"{name}_resaved.stfm"
        checkpoint.save_checkpoint(loaded, resaved)
        assert path.read_bytes() == resaved.read_bytes()
        blobs.append(path.read_bytes())
    assert report("6 persistence",
                  "round trip bit-exact, retraining byte-identical",
                  blobs[0] == blobs[1])
    assert blobs[0] == blobs[1]
