"""Acceptance gate: one test per primary criterion.

Each test records a ``CRITERION n PASS|FAIL`` line with the measured value,
the tolerance and the runtime; the lines are printed in the terminal summary.
"""

import hashlib
import itertools
import json
import math
import time
from contextlib import contextmanager

import numpy as np
import pytest

from naimfuse import tensor as T
from naimfuse.cli import main
from naimfuse.data import (Feature, FeatureSchema, SignalSpec, TabularDataset, knn_impute, most_frequent_impute,
                           stratified_kfold_split, synth_generate)
from naimfuse.fusion import (DEFAULT_GRID, ConfusionCounts, alpha_sweep, evaluate, evaluate_folds, metrics)
from naimfuse.models import MlpConfig, MlpModel, NaimBatch, NaimModel
from naimfuse.pipeline import run_fold
from naimfuse.tensor import Tensor
from naimfuse.training import PlateauScheduler, TrainConfig, train_model

from oracles import (brute_knn_impute, brute_mode, central_difference, contingency_mcc, max_relative_error,
                     random_rows, random_schema, reference_transformer_proba)
from test_naim import (_masking_case, attention_respects_mask, gradients_isolated, naim_gradient_error,
                       poison_invariant, random_model)
from test_tensor import OP_CASES, _fd_check


class Gate:
    def __init__(self, number, name, limit_s=None):
        self.number, self.name, self.limit_s = number, name, limit_s
        self.checks: list[tuple[str, bool]] = []

    def check(self, detail: str, ok: bool):
        self.checks.append((detail, bool(ok)))


@contextmanager
def criterion(log, number, name, limit_s=None):
    gate = Gate(number, name, limit_s)
    start = time.perf_counter()
    error = None
    try:
        yield gate
    except Exception as exc:  # noqa: BLE001
        error = exc
    elapsed = time.perf_counter() - start
    if limit_s is not None:
        gate.check(f"runtime {elapsed:.1f}s < {limit_s}s", elapsed < limit_s)
    if error is not None:
        gate.check(f"raised {type(error).__name__}: {error}", False)
    ok = bool(gate.checks) and all(c for _, c in gate.checks)
    details = "; ".join(d for d, _ in gate.checks)
    line = f"CRITERION {number}: {'PASS' if ok else 'FAIL'} {name} [{details}] ({elapsed:.1f}s)"
    log.append(line)
    print(line)
    if error is not None:
        raise error
    assert ok, line


def test_criterion_01_gradient_suite(criteria_log):
    with criterion(criteria_log, 1, "analytic gradients match central differences", limit_s=60) as g:
        op_worst = max(_fd_check(b, s, seed, pos) for b, s, pos in OP_CASES.values() for seed in range(20))
        g.check(f"{len(OP_CASES)} ops x 20 seeds max rel err {op_worst:.1e} < 1e-4", op_worst < 1e-4)
        naim_worst = max(naim_gradient_error(seed, n_rows=8) for seed in range(5))
        g.check(f"NAIM 8-row batches max rel err {naim_worst:.1e} < 1e-4", naim_worst < 1e-4)
        mlp_worst = 0.0
        for seed in range(5):
            rng = np.random.default_rng(seed)
            model = MlpModel(MlpConfig(6, (8, 4)), rng)
            x, y = rng.standard_normal((8, 6)), rng.integers(0, 2, 8)
            model.zero_grad()
            T.backward(T.cross_entropy_with_logits(model.logits(x), y))
            numeric = central_difference(lambda: T.cross_entropy_with_logits(model.logits(x), y).item(),
                                         [p.data for p in model.parameters()])
            mlp_worst = max(mlp_worst, *(max_relative_error(p.grad, n) for p, n in zip(model.parameters(), numeric)))
        g.check(f"MLP 8-row batches max rel err {mlp_worst:.1e} < 1e-4", mlp_worst < 1e-4)


def test_criterion_02_masking_suite(criteria_log):
    with criterion(criteria_log, 2, "missing features are fully masked", limit_s=60) as g:
        attn = poison = grads = 0
        for seed in range(200):
            rng, schema, model, values, observed = _masking_case(10_000 + seed)
            attn += attention_respects_mask(model, values, observed)
            poison += poison_invariant(rng, model, values, observed)
            grads += gradients_isolated(model, schema, values, observed, rng.integers(0, 2, len(values)))
        g.check(f"(a) zero attention {attn}/200", attn == 200)
        g.check(f"(b) poison bit-identical {poison}/200", poison == 200)
        g.check(f"(c) isolated gradients {grads}/200", grads == 200)


def test_criterion_03_reduction(criteria_log):
    with criterion(criteria_log, 3, "complete rows reduce to an unmasked transformer") as g:
        worst = 0.0
        for seed in range(50):
            rng = np.random.default_rng(20_000 + seed)
            schema = random_schema(rng)
            model = random_model(rng, schema)
            values, observed = random_rows(rng, schema, int(rng.integers(1, 6)), 0.0)
            got = model.predict_proba(NaimBatch(values, observed))
            worst = max(worst, float(np.max(np.abs(got - reference_transformer_proba(model, values)))))
        g.check(f"50 instances max abs diff {worst:.1e} <= 1e-12", worst <= 1e-12)


def test_criterion_04_metrics(criteria_log):
    with criterion(criteria_log, 4, "metric identities") as g:
        ba_exact, mcc_worst = True, 0.0
        for tp, fp, tn, fn in itertools.product(range(11), repeat=4):
            ev = metrics(ConfusionCounts(tp, fp, tn, fn))
            ba_exact &= ev.ba == (ev.tpr + ev.tnr) / 2
            mcc_worst = max(mcc_worst, abs(ev.mcc - contingency_mcc(tp, fp, tn, fn)))
        g.check("BA == (TPR+TNR)/2 exactly on 14641 tuples", ba_exact)
        table = (76.67 + 61.79) / 2
        g.check(f"table row (76.67+61.79)/2 = {table:.3f} vs 69.23 within 0.01", abs(table - 69.23) <= 0.01)
        g.check(f"MCC vs contingency oracle max diff {mcc_worst:.1e}", mcc_worst <= 1e-12)


def test_criterion_05_fusion_endpoints(criteria_log):
    with criterion(criteria_log, 5, "sweep endpoints and grid") as g:
        exact = True
        for seed in range(20):
            rng = np.random.default_rng(seed)
            pc, pi, y = {}, {}, {}
            for f in range(5):
                a, b = rng.random(20), rng.random(20)
                pc[f], pi[f] = np.stack([1 - a, a], 1), np.stack([1 - b, b], 1)
                y[f] = rng.integers(0, 2, 20)
            sweep = alpha_sweep(pc, pi, y)
            img, clin = evaluate_folds("imaging", pi, y), evaluate_folds("clinical", pc, y)
            exact &= sweep.mean[0] == img.mean[0] and sweep.mean[-1] == clin.mean[0]
            exact &= all(sweep.per_fold[f][0] == img.per_fold[f][0] and sweep.per_fold[f][-1] == clin.per_fold[f][0]
                         for f in range(5))
        g.check("alpha=0/1 equal unimodal reports bit-exactly (20 sweeps)", exact)
        g.check(f"default grid has {len(DEFAULT_GRID)} points", len(DEFAULT_GRID) == 11)


def test_criterion_06_split_integrity(criteria_log):
    with criterion(criteria_log, 6, "stratified splits partition and balance") as g:
        partition, worst = True, 0.0
        for seed in range(100):
            y = np.zeros(100, dtype=int)
            y[np.random.default_rng(seed).permutation(100)[:36]] = 1
            plan = stratified_kfold_split(y, 5, seed=seed)
            partition &= sorted(np.concatenate([f.test for f in plan]).tolist()) == list(range(100))
            for fold in plan:
                parts = (fold.train, fold.val, fold.test)
                partition &= sorted(np.concatenate(parts).tolist()) == list(range(100))
                worst = max(worst, *(abs(y[p].sum() - 0.36 * len(p)) for p in parts))
        g.check("test folds partition the cohort for 100 seeds", partition)
        g.check(f"max positive-count deviation {worst:.2f} <= 1", worst <= 1)


def test_criterion_07_imputer_oracles(criteria_log):
    with criterion(criteria_log, 7, "imputers match exhaustive oracles") as g:
        knn_ok = mode_ok = 0
        n_cases = 400
        for seed in range(n_cases):
            rng = np.random.default_rng(30_000 + seed)
            n_rows, n_cols = int(rng.integers(1, 31)), int(rng.integers(1, 7))
            schema = random_schema(rng, n_cols)
            values, observed = random_rows(rng, schema, n_rows, float(rng.choice([0.1, 0.3, 0.6])))
            values = np.round(values * 2) / 2      # coarse grid forces distance ties
            train = rng.permutation(n_rows)[: int(rng.integers(1, n_rows + 1))]
            data = TabularDataset(schema, [str(i) for i in range(n_rows)], values, observed, None)
            k = int(rng.integers(1, 6))
            got, _ = knn_impute(data, k, train)
            num = [j for j, f in enumerate(schema) if f.kind == "numerical"]
            ref = brute_knn_impute(values, observed, num, sorted(train), k)
            knn_ok += all(np.allclose(got.values[:, j], ref[:, j], rtol=0, atol=1e-12) for j in num)
            filled, _ = most_frequent_impute(data, train)
            mode_ok += all(np.all(filled.values[~observed[:, j], j]
                                  == brute_mode([values[r, j] for r in train if observed[r, j]], len(f.categories)))
                           for j, f in enumerate(schema) if f.kind != "numerical")
        tie = TabularDataset(FeatureSchema((Feature("s", "categorical", ("yes", "no")),)), ["a", "b", "c"],
                             np.array([[1.0], [0.0], [np.nan]]), np.array([[True], [True], [False]]), None)
        g.check(f"knn {knn_ok}/{n_cases}", knn_ok == n_cases)
        g.check(f"mode {mode_ok}/{n_cases}", mode_ok == n_cases)
        g.check("mode tie resolves to first schema category",
                most_frequent_impute(tie, [0, 1])[0].decode(2, 0) == "yes")


@pytest.mark.slow
def test_criterion_08_missing_aware_beats_imputation(criteria_log):
    with criterion(criteria_log, 8, "NAIM vs imputed MLP on label-correlated missingness", limit_s=600) as g:
        ba = {"clinical-naim": [], "clinical-baseline": []}
        for seed in range(5):
            cohort = synth_generate(600, missing_rate=0.3, missing_mode="label", seed=seed,
                                    signal=SignalSpec(embedding_dim=2))
            plan = stratified_kfold_split(cohort.raw.labels, 5, seed)
            for k, fold in enumerate(plan):
                for exp in ba:
                    out = run_fold(exp, cohort.raw, None, fold, k, seed)
                    ba[exp].append(evaluate(out.proba["test"], out.labels["test"]).ba)
        naim, base = float(np.mean(ba["clinical-naim"])), float(np.mean(ba["clinical-baseline"]))
        g.check(f"mean BA naim {naim:.4f} >= baseline {base:.4f} over 25 folds", naim >= base)
        g.check(f"both >= 0.6 (naim {naim:.4f}, baseline {base:.4f})", min(naim, base) >= 0.6)


@pytest.mark.slow
def test_criterion_09_fusion_benefit(criteria_log):
    with criterion(criteria_log, 9, "interior alpha beats both modalities", limit_s=600) as g:
        signal = SignalSpec(embedding_dim=32, clinical_strength=3.0, imaging_strength=1.5)
        for seed in range(3):
            cohort = synth_generate(500, missing_rate=0.3, seed=seed, signal=signal)
            plan = stratified_kfold_split(cohort.raw.labels, 5, seed)
            probs = {"imaging": {}, "clinical-naim": {}}
            labels = {}
            for k, fold in enumerate(plan):
                for exp in probs:
                    out = run_fold(exp, cohort.raw, cohort.embeddings, fold, k, seed)
                    probs[exp][k] = out.proba["test"]
                    labels[k] = out.labels["test"]
            sweep = alpha_sweep(probs["clinical-naim"], probs["imaging"], labels)
            bas = [m["ba"] for m in sweep.mean]
            best = max(bas)
            g.check(f"seed {seed}: best alpha {sweep.best_ba_alpha} in (0,1)", 0.0 < sweep.best_ba_alpha < 1.0)
            g.check(f"seed {seed}: BA {best:.4f} >= max(img {bas[0]:.4f}, clin {bas[-1]:.4f})",
                    best >= max(bas[0], bas[-1]))


def _run_cli(cohort, out, jobs):
    config = out.parent / f"{out.name}.json"
    config.write_text(json.dumps({"naim": {"d_model": 8, "n_heads": 2, "n_layers": 1, "d_ff": 16},
                                  "train": {"clinical-naim": {"max_epochs": 40}, "imaging": {"max_epochs": 40},
                                            "clinical-baseline": {"max_epochs": 40}}}))
    assert main(["train", "--config", str(config), "--input-dir", str(cohort), "--out", str(out),
                 "--seed", "11", "--jobs", str(jobs)]) == 0
    assert main(["fuse", "--out", str(out)]) == 0
    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "config.json")
    return {str(p.relative_to(out)): hashlib.sha256(p.read_bytes()).hexdigest() for p in files}


def test_criterion_10_determinism(criteria_log, tmp_path):
    with criterion(criteria_log, 10, "byte-identical outputs across reruns and --jobs") as g:
        cohort = tmp_path / "cohort"
        assert main(["generate", "--out", str(cohort), "--n", "120", "--seed", "5", "--embedding-dim", "16"]) == 0
        a = _run_cli(cohort, tmp_path / "a", 1)
        b = _run_cli(cohort, tmp_path / "b", 1)
        c = _run_cli(cohort, tmp_path / "c", 4)
        g.check(f"{len(a)} files incl. report.json", "report.json" in a and "sweep.csv" in a)
        g.check("rerun --jobs 1 identical", a == b)
        g.check("--jobs 1 vs --jobs 4 identical", a == c)


def test_criterion_11_schedule_contract(criteria_log):
    with criterion(criteria_log, 11, "plateau decay and best-epoch restore") as g:
        s = PlateauScheduler(1e-3, factor=10, patience=25)
        s.step(1.0)
        lrs = [s.step(1.0) for _ in range(25)]
        g.check("lr unchanged for 24 stale epochs, /10 at the 25th",
                lrs[:24] == [1e-3] * 24 and lrs[24] == 1e-3 / 10)
        s = PlateauScheduler(1e-3, factor=10, patience=25)
        s.step(1.0)
        seq = [s.step(1.0) for _ in range(23)] + [s.step(0.9)] + [s.step(0.9) for _ in range(24)]
        g.check("improvement at stale epoch 24 resets the counter", set(seq) == {1e-3} and s.step(0.9) == 1e-4)

        rng = np.random.default_rng(0)
        x, y = rng.standard_normal((30, 3)), rng.integers(0, 2, 30)
        model = MlpModel(MlpConfig(3, (4,)), np.random.default_rng(1))
        sequence = [1.0, 0.8, 0.9, 0.7] + [0.75] * 200
        snapshots = []

        def injected(m, epoch):
            snapshots.append(m.state_dict())
            return sequence[epoch]

        res = train_model(model, x, y, x, y, TrainConfig.naim(max_epochs=300, patience=100), val_loss_fn=injected)
        lr_trace = [r.learning_rate for r in res.log]
        decays = [i for i in range(1, len(lr_trace)) if lr_trace[i] != lr_trace[i - 1]]
        g.check(f"lr decays at epochs {decays[:3]} (25 stale epochs after best at 3)", decays[:3] == [29, 54, 79])
        g.check(f"stopped after {len(res.log)} epochs, best epoch {res.best_epoch}",
                res.stopped_early and res.best_epoch == 3 and len(res.log) == 104)
        restored = all(model.state_dict()[k].tobytes() == v.tobytes() for k, v in snapshots[3].items())
        g.check("restored weights equal the best-epoch checkpoint bit-exactly", restored)
