#include "fibro/training.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <stdexcept>

#include "fibro/error.hpp"
#include "fibro/hash.hpp"
#include "fibro/json_util.hpp"
#include "fibro/ops.hpp"

namespace fibro {

using nlohmann::json;

void TrainConfig::validate() const {
    if (epochs < 1) throw ValidationError("train config: epochs must be >= 1");
    if (!(optimizer.learning_rate >= 0.0) || !std::isfinite(optimizer.learning_rate)) {
        throw ValidationError("train config: lr must be finite and >= 0");
    }
    AdamWOptions rest = optimizer;
    rest.learning_rate = 1.0;
    rest.validate();
    if (sigma_constant && !(*sigma_constant > 0.0)) {
        throw ValidationError("train config: sigma_constant must be > 0");
    }
}

void to_json(json& j, const TrainConfig& c) {
    j = json{{"epochs", c.epochs},
             {"lr", c.optimizer.learning_rate},
             {"beta1", c.optimizer.beta1},
             {"beta2", c.optimizer.beta2},
             {"eps", c.optimizer.epsilon},
             {"weight_decay", c.optimizer.weight_decay},
             {"seed", c.seed},
             {"batch_size", 1},
             {"head_only", c.head_only},
             {"include_baseline_fvc", c.include_baseline_fvc},
             {"init_bias_to_label_mean", c.init_bias_to_label_mean},
             {"sigma_constant", c.sigma_constant ? json(*c.sigma_constant) : json(nullptr)}};
}

void from_json(const json& j, TrainConfig& c) {
    static const std::set<std::string> known = {
        "epochs", "lr", "beta1", "beta2", "eps", "weight_decay", "seed", "batch_size",
        "head_only", "include_baseline_fvc", "init_bias_to_label_mean", "sigma_constant"};
    if (!j.is_object()) throw ValidationError("train config: expected a JSON object");
    for (const auto& [key, value] : j.items())
        if (!known.count(key)) throw ValidationError("train config: unknown key '" + key + "'");
    TrainConfig d;
    try {
        d.epochs = json_unsigned(j, "epochs", d.epochs, "train config");
        d.optimizer.learning_rate = j.value("lr", d.optimizer.learning_rate);
        d.optimizer.beta1 = j.value("beta1", d.optimizer.beta1);
        d.optimizer.beta2 = j.value("beta2", d.optimizer.beta2);
        d.optimizer.epsilon = j.value("eps", d.optimizer.epsilon);
        d.optimizer.weight_decay = j.value("weight_decay", d.optimizer.weight_decay);
        d.seed = json_unsigned(j, "seed", d.seed, "train config");
        if (json_unsigned(j, "batch_size", 1, "train config") != 1) throw ValidationError("train config: only batch_size 1 is supported");
        d.head_only = j.value("head_only", d.head_only);
        d.include_baseline_fvc = j.value("include_baseline_fvc", d.include_baseline_fvc);
        d.init_bias_to_label_mean = j.value("init_bias_to_label_mean", d.init_bias_to_label_mean);
        if (j.contains("sigma_constant") && !j.at("sigma_constant").is_null()) {
            d.sigma_constant = j.at("sigma_constant").get<double>();
        }
    } catch (const json::exception& e) {
        throw ValidationError(std::string("train config: ") + e.what());
    }
    d.validate();
    c = d;
}

void norm_stats_to_json(json& j, const NormStats& s) {
    auto stat = [](const FeatureStats& f) { return json{{"mean", f.mean}, {"std", f.std}}; };
    j = json{{"fold_id", s.fold_id},
             {"age", stat(s.age)},
             {"volume", stat(s.volume)},
             {"baseline_fvc", stat(s.baseline_fvc)},
             {"warnings", s.warnings}};
}

NormStats norm_stats_from_json(const json& j) {
    auto stat = [](const json& f) { return FeatureStats{f.at("mean").get<double>(), f.at("std").get<double>()}; };
    try {
        NormStats s;
        s.fold_id = j.at("fold_id").get<int>();
        s.age = stat(j.at("age"));
        s.volume = stat(j.at("volume"));
        s.baseline_fvc = stat(j.at("baseline_fvc"));
        s.warnings = j.value("warnings", std::vector<std::string>{});
        return s;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("norm stats: ") + e.what());
    }
}

std::pair<double, double> mean_and_std(const std::vector<double>& values) {
    if (values.empty()) throw ValidationError("mean_and_std of no values");
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    return {mean, std::sqrt(var / static_cast<double>(values.size()))};
}

ShallowVector shallow_for(const PreparedPatient& p, const NormStats& stats, bool include_baseline_fvc) {
    return encode(p.feature_row(), stats, include_baseline_fvc);
}

std::optional<std::string> training_exclusion(const PreparedPatient& p) {
    if (!p.has_ct) return "missing CT volume";
    if (!p.label) return "fvc series too short for a slope fit";
    return std::nullopt;
}

namespace {

Tensor slice_tensor(const RealRaster& r) {
    return Tensor::from({1, 1, r.height, r.width}, r.pixels);
}

std::vector<std::size_t> seeded_order(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::mt19937_64 rng(seed);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    return order;
}

double mean_label(const PreparedDataset& ds, const std::vector<std::string>& ids) {
    std::vector<double> labels;
    for (const std::string& id : ids) labels.push_back(ds.find(id).label->slope_ml_per_week);
    return mean_and_std(labels).first;
}

} // namespace

TrainResult train_fold(const PreparedDataset& ds, const std::vector<std::string>& train_ids, int fold_id,
                       const TrainConfig& config, const ModelConfig& model_config,
                       const std::function<void(const EpochLog&)>& on_epoch) {
    config.validate();
    std::vector<const PreparedPatient*> used;
    std::vector<std::string> used_ids;
    std::vector<Exclusion> excluded;
    for (const std::string& id : train_ids) {
        const PreparedPatient& p = ds.find(id);
        if (auto reason = training_exclusion(p)) {
            excluded.push_back({id, *reason});
            continue;
        }
        used.push_back(&p);
        used_ids.push_back(id);
    }
    if (used.size() < 2) throw ValidationError("fold " + std::to_string(fold_id) + ": fewer than 2 trainable patients");

    std::vector<FeatureRow> rows;
    for (const PreparedPatient* p : used) rows.push_back(p->feature_row());
    NormStats stats = fit_norm_stats(rows, fold_id);

    ModelConfig mc = model_config;
    mc.shallow_dim = kShallowDim + (config.include_baseline_fvc ? 1 : 0);
    mc.input_height = ds.height;
    mc.input_width = ds.width;
    FibroModel model(mc);
    if (config.init_bias_to_label_mean) {
        Tensor bias = model.head().out_b;
        bias.mutable_data()[0] = mean_label(ds, used_ids);
    }

    std::vector<ShallowVector> shallow;
    for (const PreparedPatient* p : used) shallow.push_back(shallow_for(*p, stats, config.include_baseline_fvc));

    AdamW optimizer(config.head_only ? model.head_parameters() : model.parameters(), config.optimizer);
    std::vector<EpochLog> log;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        double total = 0.0;
        for (std::size_t i : seeded_order(used.size(), derive_seed(config.seed, {epoch, 0x5eed}))) {
            const PreparedPatient& p = *used[i];
            const std::uint64_t slice_seed = derive_seed(config.seed, {epoch, fnv1a64(p.patient_id)});
            const std::size_t index = select_slice(p.n_slices, slice_seed).index;
            Tape tape;
            const Tensor pred = model.forward(tape, slice_tensor(p.slice_at(index)), shallow[i]);
            const Tensor loss = ops::l1_loss(tape, pred, Tensor::scalar(p.label->slope_ml_per_week));
            total += loss.item();
            tape.backward(loss);
            optimizer.step();
            model.zero_grad();
        }
        log.push_back({epoch + 1, total / static_cast<double>(used.size()), used.size()});
        if (on_epoch) on_epoch(log.back());
    }
    return {std::move(model), std::move(stats), std::move(used_ids), std::move(excluded), std::move(log)};
}

SlopePredictor model_predictor(const FibroModel& model, const NormStats& stats, bool include_baseline_fvc) {
    return [&model, stats, include_baseline_fvc](const PreparedPatient& p) {
        return model.predict(slice_tensor(p.eval_slice()), shallow_for(p, stats, include_baseline_fvc));
    };
}

SlopePredictor constant_predictor(double slope) {
    return [slope](const PreparedPatient&) { return slope; };
}

SigmaEstimate fit_sigma(const PreparedDataset& ds, const std::vector<std::string>& train_ids,
                        const SlopePredictor& predictor, int fold_id, std::optional<double> constant) {
    SigmaEstimate est;
    est.fold_id = fold_id;
    std::vector<double> residuals;
    for (const std::string& id : train_ids) {
        const PreparedPatient& p = ds.find(id);
        if (training_exclusion(p)) continue;
        const double slope = predictor(p);
        const std::size_t b = p.baseline_row();
        const FvcSeries& s = p.fvc_series;
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (i == b) continue;
            const double pred = slope * (s.weeks[i] - s.weeks[b]) + s.fvc_ml[b];
            residuals.push_back(s.fvc_ml[i] - pred);
        }
    }
    est.residuals = residuals.size();
    if (constant) {
        est.sigma_ml = *constant;
    } else if (!residuals.empty()) {
        est.sigma_ml = std::max(kSigmaFloorMl, mean_and_std(residuals).second);
    }
    return est;
}

FoldEvaluation evaluate_fold(const PreparedDataset& ds, const std::vector<std::string>& test_ids,
                             const SlopePredictor& predictor, const SigmaEstimate& sigma) {
    FoldEvaluation ev;
    std::vector<ScoredRow> scored;
    for (const std::string& id : test_ids) {
        const PreparedPatient& p = ds.find(id);
        if (!p.has_ct) {
            ev.excluded.push_back({id, "missing CT volume"});
            continue;
        }
        const double slope = predictor(p);
        ev.slopes.emplace_back(id, slope);
        const std::size_t b = p.baseline_row();
        const FvcSeries& s = p.fvc_series;
        if (s.size() < 2) {
            ++ev.patients_without_followup;
            continue;
        }
        const std::vector<double> pred = reconstruct_fvc(slope, s.fvc_ml[b], s.weeks[b], s.weeks);
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (i == b) continue;
            ev.rows.push_back({id, s.weeks[i], s.fvc_ml[i], pred[i]});
            scored.push_back({s.fvc_ml[i], {pred[i], sigma.sigma_ml}});
        }
    }
    if (scored.empty()) throw ValidationError("evaluation: no scored rows in the test set");
    ev.score = score(scored);
    return ev;
}

void assert_no_leakage(int fold_id, const NormStats& stats, const SigmaEstimate& sigma) {
    if (stats.fold_id != fold_id || sigma.fold_id != fold_id) {
        throw std::logic_error("leakage: fold " + std::to_string(fold_id) + " uses statistics from fold " +
                               std::to_string(stats.fold_id) + "/" + std::to_string(sigma.fold_id));
    }
}

std::string config_fingerprint(const TrainConfig& train, const ModelConfig& model, const FoldPlan& plan,
                               std::uint64_t dataset_seed, const std::vector<int>& stats_fold_ids) {
    const json j{{"train", train},
                 {"model", model},
                 {"fold_plan", plan},
                 {"dataset_seed", dataset_seed},
                 {"stats_fold_ids", stats_fold_ids}};
    return hex64(fnv1a64(j.dump()));
}

namespace {

struct MethodResult {
    SigmaEstimate sigma;
    FoldEvaluation eval;
};

std::optional<double> slope_rmse(const std::vector<std::pair<std::string, double>>& slopes,
                                 const std::map<std::string, double>& truth) {
    if (truth.empty() || slopes.empty()) return std::nullopt;
    std::vector<double> t, p;
    for (const auto& [id, s] : slopes) {
        const auto it = truth.find(id);
        if (it == truth.end()) throw ValidationError("truth table has no slope for '" + id + "'");
        t.push_back(it->second);
        p.push_back(s);
    }
    return rmse(t, p);
}

json method_json(const MethodResult& m, const std::map<std::string, double>& truth) {
    json j{{"sigma_used", m.sigma.sigma_ml},
           {"sigma_fold_id", m.sigma.fold_id},
           {"lll_m", m.eval.score.lll_m},
           {"rmse", m.eval.score.rmse},
           {"n_rows", m.eval.rows.size()}};
    if (auto s = slope_rmse(m.eval.slopes, truth)) j["slope_rmse"] = *s;
    return j;
}

} // namespace

json run_cv(const PreparedDataset& ds, const TrainConfig& train, const ModelConfig& model_config,
            const CvOptions& options, const std::function<void(const std::string&)>& log) {
    train.validate();
    const std::vector<std::string> ids = ds.patient_ids();
    const FoldPlan plan = make_folds(ids, options.k, options.fold_seed);
    plan.validate(ids);

    static const char* kMethods[] = {"model", "zero_slope", "train_mean_slope"};
    std::map<std::string, std::vector<double>> lll, rms;
    std::map<std::string, std::vector<std::pair<std::string, double>>> pooled_slopes;
    std::vector<int> stats_ids;
    json folds = json::array();

    for (std::size_t f = 0; f < plan.k; ++f) {
        double model_sigma = kSigmaFloorMl;
        const int fold = static_cast<int>(f);
        const auto train_ids = plan.train_ids(f);
        const auto test_ids = plan.test_ids(f);
        TrainResult tr = train_fold(ds, train_ids, fold, train, model_config, [&](const EpochLog& e) {
            if (log) {
                log("fold=" + std::to_string(f) + " epoch=" + std::to_string(e.epoch) +
                    " loss=" + format_double(e.mean_loss));
            }
        });
        const SlopePredictor predictors[] = {model_predictor(tr.model, tr.stats, train.include_baseline_fvc),
                                             constant_predictor(0.0),
                                             constant_predictor(mean_label(ds, tr.used_ids))};
        json fold_json{{"fold", f},
                       {"train_patients", train_ids.size()},
                       {"test_patients", test_ids.size()},
                       {"norm_stats_fold_id", tr.stats.fold_id},
                       {"final_train_loss", tr.log.back().mean_loss}};
        json excluded = json::array();
        for (const Exclusion& e : tr.excluded) excluded.push_back({{"patient_id", e.patient_id}, {"reason", e.reason}});
        fold_json["excluded_from_training"] = excluded;

        for (std::size_t m = 0; m < 3; ++m) {
            MethodResult r;
            r.sigma = fit_sigma(ds, tr.used_ids, predictors[m], fold, train.sigma_constant);
            assert_no_leakage(fold, tr.stats, r.sigma);
            r.eval = evaluate_fold(ds, test_ids, predictors[m], r.sigma);
            fold_json[kMethods[m]] = method_json(r, options.true_slopes);
            lll[kMethods[m]].push_back(r.eval.score.lll_m);
            rms[kMethods[m]].push_back(r.eval.score.rmse);
            auto& pool = pooled_slopes[kMethods[m]];
            pool.insert(pool.end(), r.eval.slopes.begin(), r.eval.slopes.end());
            if (m == 0) {
                model_sigma = r.sigma.sigma_ml;
                fold_json["patients_without_followup"] = r.eval.patients_without_followup;
                json ex = json::array();
                for (const Exclusion& e : r.eval.excluded) ex.push_back({{"patient_id", e.patient_id}, {"reason", e.reason}});
                fold_json["excluded_from_test"] = ex;
            }
        }
        stats_ids.push_back(tr.stats.fold_id);
        if (options.checkpoint_dir) {
            json stats_json;
            norm_stats_to_json(stats_json, tr.stats);
            tr.model.save(*options.checkpoint_dir / ("fold" + std::to_string(f) + ".ckpt"),
                          json{{"fold", f},
                               {"norm_stats", stats_json},
                               {"sigma_ml", model_sigma},
                               {"train_config", train}});
        }
        if (log) {
            log("fold=" + std::to_string(f) + " lll_m=" + format_double(lll["model"].back()) +
                " rmse=" + format_double(rms["model"].back()));
        }
        folds.push_back(std::move(fold_json));
    }

    json aggregate;
    for (const char* m : kMethods) {
        const auto [lm, ls] = mean_and_std(lll[m]);
        const auto [rm, rs] = mean_and_std(rms[m]);
        json a{{"lll_m_mean", lm}, {"lll_m_std", ls}, {"rmse_mean", rm}, {"rmse_std", rs}};
        if (auto s = slope_rmse(pooled_slopes[m], options.true_slopes)) a["slope_rmse"] = *s;
        aggregate[m] = a;
    }

    ModelConfig effective = model_config;
    effective.shallow_dim = kShallowDim + (train.include_baseline_fvc ? 1 : 0);
    effective.input_height = ds.height;
    effective.input_width = ds.width;
    return json{{"schema", "fibro-eval-report/1"},
                {"fingerprint", config_fingerprint(train, effective, plan, ds.seed, stats_ids)},
                {"k", plan.k},
                {"fold_seed", plan.seed},
                {"dataset_seed", ds.seed},
                {"scored_visits", "all recorded visits except the baseline row"},
                {"lll_m_convention", "higher (less negative) is better"},
                {"train_config", train},
                {"model_config", effective},
                {"folds", folds},
                {"aggregate", aggregate}};
}

} // namespace fibro
