"""The canned experiments. Each returns a :class:`ResultTable`."""
from __future__ import annotations

import math

import numpy as np

from .. import __version__
from ..conformal import ScoreFn, SplitConformalClassifier, replicate_coverage
from ..decision import (
    DecisionProblem,
    Pipeline,
    bayes_actions,
    evaluate_strategy,
    exact_value_of_information,
    rational_baseline,
    rational_benchmark,
    value_of_information,
)
from ..dgp import GaussianMixtureDGP, PrivateSignalDGP, TabularDGP, make_private_worstcase
from ..exceptions import ConfigInvalidError, CPDecideError
from ..predictor import (
    LogisticPredictor,
    OraclePredictor,
    TemperedPredictor,
    TemperatureScaler,
    multical_residual,
    reliability_from_probs,
)
from ..probcore import RngStream
from ..strategies import (
    Associative,
    Budgeted,
    MaxMin,
    Misspecified,
    OracleFeatures,
    OracleSets,
    PriorOnly,
    UniformOverSet,
    exact_set_joint,
    exact_strategy_loss,
    learn_set_joint,
)
from .config import (
    ExperimentConfig,
    GaussianSpec,
    OracleSpec,
    PrivateSpec,
    TabularSpec,
    TemperedSpec,
)
from .results import ResultTable, fmt

# stream ids under RngStream(seed, SETUP_STREAM)
SETUP_STREAM = 100
TRAIN, CAL, CAL_U, TEMP_FIT, EVAL, PRIVATE_EVAL = range(6)


# --------------------------------------------------------------------------
# builders


def build_dgp(spec):
    try:
        if isinstance(spec, TabularSpec):
            return TabularDGP(spec.joint)
        if isinstance(spec, GaussianSpec):
            return GaussianMixtureDGP(spec.prior, spec.means, spec.sigma)
        if isinstance(spec, PrivateSpec):
            return PrivateSignalDGP(spec.joint3)
        return make_private_worstcase(spec.labels)
    except CPDecideError as err:
        raise ConfigInvalidError(f"dgp: {err}") from None


def build_predictor(spec, dgp, rng: RngStream):
    """Predictor for ``dgp``; logistic models are trained on a fresh draw from ``rng``."""
    if isinstance(spec, OracleSpec):
        return OraclePredictor(dgp)
    if isinstance(spec, TemperedSpec):
        return TemperedPredictor(OraclePredictor(dgp), spec.tau)
    if not isinstance(dgp, GaussianMixtureDGP):
        raise ConfigInvalidError("logistic predictor needs real-vector features (gaussian dgp)")
    train = dgp.draw(spec.n_train, rng)
    return LogisticPredictor(spec.steps, spec.step_size, dgp.label_count).fit(train.x, train.y)


def predictor_name(spec) -> str:
    if isinstance(spec, TemperedSpec):
        return f"tempered(tau={fmt(spec.tau)})"
    return spec.kind


def build_problem(cfg: ExperimentConfig, k: int) -> DecisionProblem:
    return DecisionProblem(cfg.loss) if cfg.loss is not None else DecisionProblem.zero_one(k)


def _public(dgp):
    return dgp.marginal() if isinstance(dgp, PrivateSignalDGP) else dgp


def _provenance(cfg: ExperimentConfig) -> dict:
    return {
        "experiment": cfg.experiment,
        "config_sha256": cfg.config_hash(),
        "seed": str(cfg.seed),
        "version": __version__,
    }


def build_pipeline(cfg: ExperimentConfig) -> Pipeline:
    """DGP, predictor and a conformal classifier fitted on one calibration draw."""
    dgp = build_dgp(cfg.dgp)
    setup = RngStream(cfg.seed, SETUP_STREAM)
    predictor = build_predictor(cfg.predictor_specs[0], _public(dgp), setup.spawn(TRAIN))
    fn = ScoreFn.coerce(cfg.score_fn)
    cal = dgp.draw(cfg.n_cal_values[0], setup.spawn(CAL))
    est = SplitConformalClassifier(fn.kind, cfg.alpha, fn.randomized, cfg.force_nonempty)
    est.fit(predictor.predict_proba(cal.x), cal.y, setup.spawn(CAL_U))
    return Pipeline(dgp, predictor, est)


# --------------------------------------------------------------------------
# coverage


def run_coverage(cfg: ExperimentConfig, threads: int = 1) -> ResultTable:
    """Per-replication coverage, with summaries and the n^-1/2 scaling ratio."""
    dgp = build_dgp(cfg.dgp)
    setup = RngStream(cfg.seed, SETUP_STREAM)
    predictor = build_predictor(cfg.predictor_specs[0], _public(dgp), setup.spawn(TRAIN))
    table = ResultTable(
        ["row", "n_cal", "rep", "coverage", "mean_set_size", "empty_fraction", "std", "se",
         "lower_target", "upper_info", "std_ratio", "expected_ratio"],
        provenance=_provenance(cfg),
    )
    stds = []
    for n_cal in cfg.n_cal_values:
        res = replicate_coverage(dgp, predictor, cfg.score_fn, cfg.alpha, n_cal, cfg.n_test,
                                 cfg.reps, cfg.seed, threads=threads,
                                 force_nonempty=cfg.force_nonempty)
        for r in range(len(res)):
            table.add(row="rep", n_cal=n_cal, rep=r, coverage=res.coverage[r],
                      mean_set_size=res.mean_set_size[r], empty_fraction=res.empty_fraction[r])
        mean, se = res.mean(), res.std_error()
        lower = 1 - cfg.alpha
        upper = 1 - cfg.alpha + 1 / (n_cal + 1)
        table.add(row="summary", n_cal=n_cal, coverage=mean,
                  mean_set_size=float(res.mean_set_size.mean()),
                  empty_fraction=float(res.empty_fraction.mean()), std=res.std(), se=se,
                  lower_target=lower, upper_info=upper)
        table.check(f"coverage_lower_bound[n_cal={n_cal}]", mean >= lower - 3 * se,
                    f"mean {fmt(mean)} vs {fmt(lower)} - 3*{fmt(se)}")
        stds.append((n_cal, res.std()))
    if len(stds) >= 2:
        (n1, s1), (n2, s2) = stds[0], stds[-1]
        ratio = s1 / s2 if s2 > 0 else math.inf
        expected = math.sqrt(n2 / n1)
        table.add(row="ratio", n_cal=f"{n1}/{n2}", std_ratio=ratio, expected_ratio=expected)
        table.check("std_ratio", 0.8 * expected <= ratio <= 1.2 * expected,
                    f"ratio {fmt(ratio)} vs sqrt({n2}/{n1}) = {fmt(expected)} +/- 20%")
    return table


# --------------------------------------------------------------------------
# strategies


def _set_joint_for(cfg, pipeline: Pipeline, threads: int):
    spec = cfg.set_joint
    enumerable = isinstance(pipeline.dgp, (TabularDGP, PrivateSignalDGP)) and not pipeline.calibrator.randomized
    mode = spec.mode
    if mode == "exact" and not enumerable:
        mode = "learned"
    if mode == "exact":
        return exact_set_joint(pipeline.dgp, pipeline.predictor, pipeline.calibrator), "exact"
    sj = learn_set_joint(pipeline.dgp, pipeline.predictor, cfg.score_fn, cfg.alpha,
                         cfg.n_cal_values[0], spec.reps, spec.samples_per_rep, spec.smoothing,
                         cfg.seed, threads=threads)
    return sj, "learned"


def build_strategy(spec, cfg, pipeline: Pipeline, problem, set_joint):
    dgp = _public(pipeline.dgp)
    prior = dgp.prior
    alpha = spec.alpha if spec.alpha is not None else cfg.alpha
    if spec.kind == "oracle_features":
        return OracleFeatures(dgp)
    if spec.kind == "oracle_sets":
        return OracleSets(set_joint)
    if spec.kind == "misspecified":
        return Misspecified(prior, alpha)
    if spec.kind == "associative":
        return Associative(prior, alpha, spec.distance, spec.radius)
    if spec.kind == "uniform":
        return UniformOverSet()
    if spec.kind == "budgeted":
        return Budgeted(dgp, prior, spec.budget)
    if spec.kind == "maxmin":
        return MaxMin(problem)
    return PriorOnly(prior)


def _strategy_label(spec) -> str:
    if spec.kind == "budgeted":
        return f"budgeted(k={spec.budget})"
    if spec.kind == "associative":
        return f"associative(b={fmt(spec.radius)})"
    return spec.kind


def run_strategies(cfg: ExperimentConfig, threads: int = 1) -> ResultTable:
    """Loss of every configured strategy on one fitted pipeline, with exact anchors."""
    pipeline = build_pipeline(cfg)
    dgp = _public(pipeline.dgp)
    k = dgp.label_count
    problem = build_problem(cfg, k)
    set_joint, sj_mode = _set_joint_for(cfg, pipeline, threads)
    tabular = isinstance(dgp, TabularDGP)
    enumerable = tabular and not pipeline.calibrator.randomized
    table = ResultTable(
        ["strategy", "signal", "mean_loss", "se", "n_test", "exact_loss", "loss_quantile",
         "mean_belief_entropy", "dominance_ref", "dominance_violation"],
        provenance={**_provenance(cfg), "set_joint": sj_mode,
                    "threshold": fmt(pipeline.calibrator.threshold_)},
    )
    eval_pipeline = Pipeline(dgp, pipeline.predictor, pipeline.calibrator)
    eval_stream = RngStream(cfg.seed, SETUP_STREAM).spawn(EVAL)
    probe = dgp.draw(min(cfg.n_test, 2000), eval_stream)
    probe_sets = pipeline.calibrator.predict(pipeline.predictor.predict_proba(probe.x), eval_stream.spawn(1))

    results = {}
    for spec in cfg.strategies:
        strat = build_strategy(spec, cfg, eval_pipeline, problem, set_joint)
        est, losses = evaluate_strategy(strat, eval_pipeline, problem, cfg.n_test, cfg.seed,
                                        return_losses=True)
        exact = exact_strategy_loss(strat, eval_pipeline, problem) if enumerable else float("nan")
        label = _strategy_label(spec)
        results[label] = (spec.kind, est, losses, exact)
        q = float(np.quantile(losses, 1 - cfg.alpha))
        ent = strat.mean_entropy(probe.x, probe_sets, k)
        table.add(strategy=label, signal=strat.signal, mean_loss=est.mean, se=est.std_error,
                  n_test=est.n, exact_loss=exact, loss_quantile=q, mean_belief_entropy=ent)

    # dominance: oracle_features <= oracle_sets <= every other strategy
    kinds = {kind: label for label, (kind, *_rest) in results.items()}
    violations = 0
    for i, label in enumerate(list(results)):
        kind, est, losses, exact = results[label]
        if kind == "oracle_features":
            ref = None
        elif kind == "oracle_sets":
            ref = kinds.get("oracle_features")
        else:
            ref = kinds.get("oracle_sets", kinds.get("oracle_features"))
        violated = False
        if ref is not None:
            _, ref_est, ref_losses, ref_exact = results[ref]
            if enumerable:
                violated = exact < ref_exact - 1e-12
            else:
                diff = losses - ref_losses
                se = diff.std(ddof=1) / math.sqrt(diff.size) if diff.size > 1 else 0.0
                violated = diff.mean() < -3 * se
        violations += violated
        table.rows[i][table.columns.index("dominance_ref")] = ref or ""
        table.rows[i][table.columns.index("dominance_violation")] = int(violated)
    table.check("dominance", violations == 0, f"{violations} violation(s)")

    if tabular:
        feat = rational_benchmark(dgp.joint, problem)
        base = rational_baseline(problem, dgp.prior)[1]
        table.add(strategy="anchor:rational_benchmark", signal="features", exact_loss=feat)
        table.add(strategy="anchor:rational_baseline", signal="none", exact_loss=base)
        if enumerable:
            table.add(strategy="anchor:rational_benchmark_sets", signal="set",
                      exact_loss=rational_benchmark(set_joint.joint_table(), problem))
        for label, (kind, est, _, _) in results.items():
            anchor = {"oracle_features": feat, "prior_only": base}.get(kind)
            if anchor is not None:
                tol = 3 * est.std_error + 1e-12
                table.check(f"{label}_matches_anchor", abs(est.mean - anchor) <= tol,
                            f"{fmt(est.mean)} vs {fmt(anchor)} within {fmt(tol)}")
    return table


# --------------------------------------------------------------------------
# value of information


def run_voi(cfg: ExperimentConfig, threads: int = 1) -> ResultTable:
    """Exact value of information of features and of prediction sets."""
    pipeline = build_pipeline(cfg)
    dgp = pipeline.dgp
    if pipeline.calibrator.randomized:
        raise ConfigInvalidError("voi needs a deterministic score function")
    problem = build_problem(cfg, dgp.label_count)
    sj = exact_set_joint(dgp, pipeline.predictor, pipeline.calibrator)
    set_table = sj.joint_table()
    r_empty = rational_baseline(problem, dgp.prior)[1]
    r_feat = rational_benchmark(dgp.joint, problem)
    r_sets = rational_benchmark(set_table, problem)
    d_feat = value_of_information(dgp.joint, problem)
    d_sets = value_of_information(set_table, problem)
    exact_feat = exact_value_of_information(dgp.joint, problem)
    exact_sets = exact_value_of_information(set_table, problem)
    table = ResultTable(["quantity", "value"],
                        provenance={**_provenance(cfg), "threshold": fmt(pipeline.calibrator.threshold_)})
    for name, v in [("R_empty", r_empty), ("R_features", r_feat), ("R_sets", r_sets),
                    ("delta_features", d_feat), ("delta_sets", d_sets),
                    ("distinct_sets", len(sj.masks()))]:
        table.add(quantity=name, value=v)
    table.check("delta_features_nonnegative", exact_feat >= 0, f"exact {float(exact_feat):.6g}")
    table.check("delta_sets_nonnegative", exact_sets >= 0, f"exact {float(exact_sets):.6g}")
    table.check("features_dominate_sets", exact_feat >= exact_sets,
                f"{float(exact_feat):.6g} >= {float(exact_sets):.6g}")
    return table


# --------------------------------------------------------------------------
# private signal


def decision_threshold(problem: DecisionProblem) -> float:
    """Probability of label 1 at which actions 0 and 1 have equal expected loss (binary only)."""
    L = problem.loss
    gain0 = L[1, 0] - L[0, 0]  # extra loss of acting 1 when the state is 0
    gain1 = L[0, 1] - L[1, 1]  # extra loss of acting 0 when the state is 1
    if gain0 + gain1 <= 0:
        return float("nan")
    return float(gain0 / (gain0 + gain1))


def run_private_signal(cfg: ExperimentConfig, threads: int = 1) -> ResultTable:
    """Acting on an X-calibrated predictor versus on the full posterior given (X, W)."""
    dgp = build_dgp(cfg.dgp)
    k = dgp.label_count
    problem = build_problem(cfg, k)
    ai = OraclePredictor(dgp.marginal())
    test = dgp.draw(cfg.n_test, RngStream(cfg.seed, SETUP_STREAM).spawn(PRIVATE_EVAL))
    P_ai = ai.predict_proba(test.x)
    P_full = dgp.full_posterior_matrix()[test.x, test.w]

    j_star = float("nan")
    if k == 2 and problem.action_count == 2:
        j_star = decision_threshold(problem)
        # act 1 only when strictly past the indifference point; ties go to action 0
        a_ai = (P_ai[:, 1] > j_star + 1e-12).astype(np.int64)
    else:
        a_ai = bayes_actions(problem, P_ai)
    a_full = bayes_actions(problem, P_full)
    loss_ai = problem.loss[a_ai, test.y]
    loss_full = problem.loss[a_full, test.y]
    n = cfg.n_test
    se = lambda v: float(v.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    gap = loss_ai - loss_full

    baseline = rational_baseline(problem, dgp.prior)[1]
    bench_x = rational_benchmark(dgp.marginal().joint, problem)
    bench_xw = rational_benchmark(dgp.joint3.reshape(-1, k), problem)
    ece_ai = reliability_from_probs(P_ai, test.y, cfg.bins).ece()

    table = ResultTable(["row", "mean_loss", "se", "exact_loss", "value"], provenance=_provenance(cfg))
    table.add(row="ai_threshold", mean_loss=float(loss_ai.mean()), se=se(loss_ai), exact_loss=bench_x)
    table.add(row="full_information", mean_loss=float(loss_full.mean()), se=se(loss_full),
              exact_loss=bench_xw)
    table.add(row="loss_gap", mean_loss=float(gap.mean()), se=se(gap), exact_loss=bench_x - bench_xw)
    table.add(row="anchor:rational_baseline", exact_loss=baseline)
    table.add(row="decision_threshold", value=j_star)
    table.add(row="ai_ece", value=ece_ai)
    if k == 2:
        human = P_full[:, 1]
        ai1 = P_ai[:, 1]
        y1 = (test.y == 1).astype(float)
        for name, cand in (("ai", ai1), ("full", human)):
            rec = np.column_stack([human, ai1, cand, y1])
            table.add(row=f"multical_residual:{name}", value=multical_residual(rec, cfg.grid))

    tol = lambda v: 3 * se(v) + 1e-12
    table.check("ai_matches_benchmark_over_x", abs(loss_ai.mean() - bench_x) <= tol(loss_ai),
                f"{fmt(loss_ai.mean())} vs {fmt(bench_x)}")
    table.check("full_matches_benchmark_over_xw", abs(loss_full.mean() - bench_xw) <= tol(loss_full),
                f"{fmt(loss_full.mean())} vs {fmt(bench_xw)}")
    return table


# --------------------------------------------------------------------------
# calibration


def run_calibration(cfg: ExperimentConfig, threads: int = 1) -> ResultTable:
    """ECE, reliability table, fitted temperature and multicalibration residual per predictor."""
    dgp = build_dgp(cfg.dgp)
    pub = _public(dgp)
    setup = RngStream(cfg.seed, SETUP_STREAM)
    fit_data = pub.draw(cfg.n_cal_values[0], setup.spawn(TEMP_FIT))
    eval_data = pub.draw(cfg.n_test, setup.spawn(EVAL))
    oracle = OraclePredictor(pub)
    P_oracle = oracle.predict_proba(eval_data.x)
    table = ResultTable(
        ["predictor", "metric", "bin", "lower", "upper", "mean_confidence", "accuracy", "count", "value"],
        provenance=_provenance(cfg),
    )
    y0 = (eval_data.y == 0).astype(float)
    for spec in cfg.predictor_specs:
        name = predictor_name(spec)
        predictor = build_predictor(spec, pub, setup.spawn(TRAIN))
        P = predictor.predict_proba(eval_data.x)
        rel = reliability_from_probs(P, eval_data.y, cfg.bins)
        tau = TemperatureScaler().fit(predictor.predict_proba(fit_data.x), fit_data.y).tau_
        rec = np.column_stack([P_oracle[:, 0], P[:, 0], P[:, 0], y0])
        resid = multical_residual(rec, cfg.grid)
        ece_value = rel.ece()
        table.add(predictor=name, metric="ece", value=ece_value)
        table.add(predictor=name, metric="fitted_tau", value=tau)
        table.add(predictor=name, metric="multical_residual", value=resid)
        for b, (lo, hi, conf, acc, cnt) in enumerate(rel.rows()):
            table.add(predictor=name, metric="reliability", bin=b, lower=lo, upper=hi,
                      mean_confidence=conf, accuracy=acc, count=int(cnt))
        if isinstance(spec, OracleSpec):
            table.check("oracle_ece", ece_value <= 0.02, f"ece {fmt(ece_value)} <= 0.02")
            table.check("oracle_tau", abs(tau - 1) <= 0.05, f"tau {fmt(tau)} vs 1 +/- 0.05")
            table.check("oracle_multical_residual", resid <= 0.02, f"residual {fmt(resid)} <= 0.02")
        elif isinstance(spec, TemperedSpec):
            target = 1 / spec.tau
            table.check(f"{name}_tau_recovery", abs(tau - target) <= 0.05,
                        f"tau {fmt(tau)} vs {fmt(target)} +/- 0.05")
    return table


EXPERIMENTS = {
    "coverage": run_coverage,
    "strategies": run_strategies,
    "voi": run_voi,
    "private-signal": run_private_signal,
    "calibration": run_calibration,
}


def run_experiment(cfg: ExperimentConfig, threads: int = 1) -> ResultTable:
    return EXPERIMENTS[cfg.experiment](cfg, threads=threads)
