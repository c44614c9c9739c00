#include "fibro/cli.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "fibro/error.hpp"
#include "fibro/gradcheck.hpp"
#include "fibro/hash.hpp"
#include "fibro/synth.hpp"
#include "fibro/training.hpp"

namespace fibro::cli {

namespace fs = std::filesystem;
using nlohmann::json;

void to_json(json& j, const RunManifest& m) {
    j = json{{"command", m.command},           {"argv", m.argv},
             {"config_paths", m.config_paths}, {"seeds", m.seeds},
             {"start_time", m.start_time},     {"end_time", m.end_time},
             {"artifacts", m.artifacts},       {"fingerprint", m.fingerprint}};
}

void write_atomic(const fs::path& path, const std::string& contents) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw DataError("cannot write " + tmp.string());
        os << contents;
        if (!os) throw DataError("write failed: " + tmp.string());
    }
    fs::rename(tmp, path);
}

std::string utc_timestamp() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

json config_schema() {
    json train_defaults = TrainConfig{};
    json model_defaults = ModelConfig{};
    return json{
        {"train_config",
         {{"defaults", train_defaults},
          {"fields",
           {{"epochs", "integer >= 1"},
            {"lr", "AdamW learning rate, >= 0 (0 freezes parameters)"},
            {"beta1", "(0,1)"},
            {"beta2", "(0,1)"},
            {"eps", "> 0"},
            {"weight_decay", "decoupled weight decay, >= 0"},
            {"seed", "unsigned integer; epoch order and slice draws"},
            {"batch_size", "must be 1"},
            {"head_only", "optimize only the head layers"},
            {"include_baseline_fvc", "append z-scored baseline FVC to the shallow vector"},
            {"init_bias_to_label_mean", "start the output bias at the mean training slope"},
            {"sigma_constant", "null (fit on training residuals) or a positive number in ml"}}}}},
        {"model_config",
         {{"defaults", model_defaults},
          {"fields",
           {{"input_size", "[H, W]; overridden by the prepared dataset"},
            {"backbone_channels", "stem width then one stride-2 stage per entry; last entry is c'"},
            {"attention_filter_size", "query/key inner dimension"},
            {"stacking_factor", "number of attention layers, >= 0"},
            {"shallow_dim", "5, or 6 with include_baseline_fvc (set automatically when training)"},
            {"deep_linear", "c' -> c' layer after pooling"},
            {"activation", "\"silu\" or \"relu\""},
            {"gamma_init", "[low, high] uniform range for every gamma"},
            {"zero_init_last_block", "zero the last residual block's second conv"},
            {"seed", "unsigned integer; parameter initialization"}}}}}};
}

namespace {

class Logger {
public:
    Logger(std::ostream& os, std::string command) : os_(os), command_(std::move(command)) {}

    void info(const std::string& msg) { write("info", msg); }
    void warn(const std::string& msg) { write("warn", msg); }
    void error(const std::string& kind, const std::string& msg) {
        os_ << "level=error kind=" << kind << " cmd=" << command_ << " msg=" << json(msg).dump() << '\n';
    }
    void set_command(std::string c) { command_ = std::move(c); }

private:
    void write(const char* level, const std::string& msg) {
        os_ << "level=" << level << " cmd=" << command_ << " msg=" << json(msg).dump() << '\n';
    }
    std::ostream& os_;
    std::string command_;
};

json read_json_file(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open " + path.string());
    try {
        return json::parse(is);
    } catch (const json::exception& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

template <class T>
T load_config(const std::string& path) {
    if (path.empty()) return T{};
    return read_json_file(path).get<T>();
}

fs::path run_dir(const std::string& out_dir, const std::string& fingerprint) {
    return fs::path(out_dir) / ("run-" + fingerprint);
}

std::map<std::string, double> truth_map(const fs::path& path) {
    std::map<std::string, double> m;
    for (const TruthRow& r : load_truth_csv(path)) m[r.patient_id] = r.true_slope;
    return m;
}

struct Context {
    std::ostream& out;
    Logger& log;
    RunManifest manifest;
};

void finish(Context& ctx, const fs::path& manifest_path) {
    ctx.manifest.end_time = utc_timestamp();
    json j = ctx.manifest;
    write_atomic(manifest_path, j.dump(2) + "\n");
    ctx.log.info("manifest written to " + manifest_path.string());
}

PreparedDataset prepare_or_load(const std::string& prepared, const std::string& data, const PrepareOptions& po,
                                Logger& log) {
    if (!prepared.empty()) {
        if (!fs::exists(prepared)) throw DataError("prepared dataset not found: " + prepared);
        return load_prepared(prepared);
    }
    if (data.empty()) throw ValidationError("one of --prepared or --data is required");
    log.info("preparing " + data);
    return prepare_dataset(data, po);
}

void log_warnings(const PreparedDataset& ds, Logger& log) {
    for (const PreparedPatient& p : ds.patients)
        for (const std::string& w : p.warnings) log.warn("patient=" + p.patient_id + " " + w);
}

} // namespace

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return dispatch(args, out, err);
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Slope regression from CT slices and clinical features", "fibro"};
    app.set_version_flag("--version", json{{"name", "fibro"},
                                           {"version", kVersion},
                                           {"prepared_format", kPreparedFormatVersion},
                                           {"checkpoint_format", 1}}
                                          .dump());
    bool print_schema = false;
    app.add_flag("--print-config-schema", print_schema, "Print train/model config schema as JSON");
    app.require_subcommand(0, 1);

    // synth
    auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
    SynthOptions so;
    std::string synth_out;
    synth->add_option("--patients", so.n_patients, "Number of patients")->check(CLI::Range(2, 100000));
    synth->add_option("--noise", so.noise_ml, "FVC noise sd in ml")->check(CLI::NonNegativeNumber);
    synth->add_option("--seed", so.seed, "Generator seed");
    synth->add_option("--size", so.height, "Slice height and width in pixels")->check(CLI::Range(8, 1024));
    synth->add_option("--slices", so.n_slices, "Slices per volume")->check(CLI::Range(1, 4096));
    synth->add_option("--out", synth_out, "Output directory")->required();

    // prepare
    auto* prepare = app.add_subcommand("prepare", "Segment, measure and cache a dataset");
    std::string prep_data, prep_out;
    PrepareOptions po;
    bool drop_negative = false;
    auto add_prepare_opts = [&](CLI::App* sub) {
        sub->add_option("--prepare-seed", po.seed, "Seed for the evaluation slice draw");
        sub->add_option("--size", po.height, "Model input height and width")->check(CLI::Range(4, 1024));
        sub->add_option("--t-low", po.watershed.t_low, "Lung marker threshold");
        sub->add_option("--t-high", po.watershed.t_high, "Background marker threshold");
        sub->add_flag("--drop-negative-weeks", drop_negative, "Exclude negative weeks from slope fits");
    };
    prepare->add_option("--data", prep_data, "Dataset directory (train.csv, ct/)")->required();
    prepare->add_option("--out", prep_out, "Prepared file (default <data>/prepared.fpd)");
    prepare->add_option("--seed", po.seed, "Seed for the evaluation slice draw");
    prepare->add_option("--size", po.height, "Model input height and width")->check(CLI::Range(4, 1024));
    prepare->add_option("--t-low", po.watershed.t_low, "Lung marker threshold");
    prepare->add_option("--t-high", po.watershed.t_high, "Background marker threshold");
    prepare->add_flag("--drop-negative-weeks", drop_negative, "Exclude negative weeks from slope fits");

    // fit-slopes
    auto* fit = app.add_subcommand("fit-slopes", "Fit slope pseudo-labels from train.csv");
    std::string fit_data, fit_out;
    fit->add_option("--data", fit_data, "Dataset directory")->required();
    fit->add_option("--out", fit_out, "Output CSV (default <data>/slopes.csv)");
    fit->add_flag("--drop-negative-weeks", drop_negative, "Exclude negative weeks");

    // train
    auto* train = app.add_subcommand("train", "Train one model");
    std::string prepared_path, data_dir, train_cfg_path, model_cfg_path, plan_path, out_dir = "runs";
    int fold = -1;
    std::size_t k = 5;
    std::uint64_t fold_seed = 0;
    train->add_option("--prepared", prepared_path, "Prepared dataset file");
    train->add_option("--data", data_dir, "Dataset directory (prepared on the fly)");
    train->add_option("--config", train_cfg_path, "Train config JSON");
    train->add_option("--model-config", model_cfg_path, "Model config JSON");
    train->add_option("--fold-plan", plan_path, "Fold plan JSON");
    train->add_option("--fold", fold, "Train on this fold's training split (needs --fold-plan)");
    train->add_option("--out-dir", out_dir, "Parent of the run directory");
    add_prepare_opts(train);

    // evaluate
    auto* evaluate = app.add_subcommand("evaluate", "Score a checkpoint");
    std::string ckpt_path, truth_path;
    evaluate->add_option("--checkpoint", ckpt_path, "Checkpoint written by train or cv")->required();
    evaluate->add_option("--prepared", prepared_path, "Prepared dataset file");
    evaluate->add_option("--data", data_dir, "Dataset directory (prepared on the fly)");
    evaluate->add_option("--fold-plan", plan_path, "Evaluate the checkpoint's test fold");
    evaluate->add_option("--truth", truth_path, "truth.csv for slope RMSE");
    evaluate->add_option("--out-dir", out_dir, "Parent of the run directory");
    add_prepare_opts(evaluate);

    // cv
    auto* cv = app.add_subcommand("cv", "k-fold cross-validation");
    cv->add_option("--prepared", prepared_path, "Prepared dataset file");
    cv->add_option("--data", data_dir, "Dataset directory (prepared on the fly)");
    cv->add_option("--k", k, "Number of folds")->check(CLI::Range(2, 1000));
    cv->add_option("--seed", fold_seed, "Fold plan seed");
    cv->add_option("--config", train_cfg_path, "Train config JSON");
    cv->add_option("--model-config", model_cfg_path, "Model config JSON");
    cv->add_option("--truth", truth_path, "truth.csv for slope RMSE (default <data>/truth.csv if present)");
    cv->add_option("--out-dir", out_dir, "Parent of the run directory");
    add_prepare_opts(cv);

    // gradcheck
    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient check");
    GradCheckOptions gco;
    double tolerance = 1e-4;
    gradcheck->add_option("--model-config", model_cfg_path, "Model config JSON");
    gradcheck->add_option("--seed", gco.seed, "Input seed");
    gradcheck->add_option("--step", gco.step, "Finite-difference step")->check(CLI::PositiveNumber);
    gradcheck->add_option("--tolerance", tolerance, "Maximum relative error")->check(CLI::PositiveNumber);
    gradcheck->add_option("--out-dir", out_dir, "Parent of the run directory");

    Logger log(err, "fibro");
    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        log.error("usage", e.what());
        err << app.help();
        return 1;
    }

    if (print_schema) {
        out << config_schema().dump(2) << '\n';
        return 0;
    }
    if (app.get_subcommands().empty()) {
        log.error("usage", "no subcommand given");
        err << app.help();
        return 1;
    }

    CLI::App* sub = app.get_subcommands().front();
    log.set_command(sub->get_name());
    Context ctx{out, log, {}};
    ctx.manifest.command = sub->get_name();
    ctx.manifest.argv = args;
    ctx.manifest.start_time = utc_timestamp();
    po.width = po.height;
    po.include_negative_weeks = !drop_negative;

    try {
        if (*synth) {
            so.width = so.height;
            const json opts{{"patients", so.n_patients}, {"noise_ml", so.noise_ml}, {"seed", so.seed},
                            {"size", so.height},         {"slices", so.n_slices}};
            const auto truth = generate_synthetic(synth_out, so);
            ctx.manifest.seeds = {{"synth", so.seed}};
            ctx.manifest.fingerprint = hex64(fnv1a64(opts.dump()));
            for (const char* a : {"train.csv", "truth.csv", "ct"}) {
                ctx.manifest.artifacts.push_back((fs::path(synth_out) / a).string());
            }
            log.info("wrote " + std::to_string(truth.size()) + " patients to " + synth_out);
            finish(ctx, fs::path(synth_out) / "manifest.json");
            out << synth_out << '\n';
        } else if (*prepare) {
            const fs::path target = prep_out.empty() ? fs::path(prep_data) / "prepared.fpd" : fs::path(prep_out);
            const PreparedDataset ds = prepare_dataset(prep_data, po);
            log_warnings(ds, log);
            if (target.has_parent_path()) fs::create_directories(target.parent_path());
            save_prepared(target, ds);
            const fs::path volumes = target.parent_path() / "volumes.csv";
            write_volumes_csv(volumes, ds);
            const json opts{{"seed", po.seed}, {"size", po.height}, {"t_low", po.watershed.t_low},
                            {"t_high", po.watershed.t_high}, {"include_negative_weeks", po.include_negative_weeks}};
            ctx.manifest.seeds = {{"prepare", po.seed}};
            ctx.manifest.fingerprint = hex64(fnv1a64(opts.dump()));
            ctx.manifest.artifacts = {target.string(), volumes.string()};
            log.info("prepared " + std::to_string(ds.patients.size()) + " patients");
            fs::path manifest = target;
            manifest += ".manifest.json";
            finish(ctx, manifest);
            out << target.string() << '\n';
        } else if (*fit) {
            const fs::path target = fit_out.empty() ? fs::path(fit_data) / "slopes.csv" : fs::path(fit_out);
            if (!fs::is_directory(fit_data)) throw DataError("data directory not found: " + fit_data);
            const auto records = load_clinical_csv(fs::path(fit_data) / "train.csv");
            for (const PatientRecord& r : records) {
                std::string reason;
                if (!pseudo_label(r.fvc_series, !drop_negative, &reason)) log.warn("patient=" + r.patient_id + " " + reason);
            }
            if (target.has_parent_path()) fs::create_directories(target.parent_path());
            write_slopes_csv(target, records, !drop_negative);
            ctx.manifest.fingerprint =
                hex64(fnv1a64(json{{"include_negative_weeks", !drop_negative}}.dump()));
            ctx.manifest.artifacts = {target.string()};
            fs::path manifest = target;
            manifest += ".manifest.json";
            finish(ctx, manifest);
            out << target.string() << '\n';
        } else if (*train) {
            const TrainConfig tc = load_config<TrainConfig>(train_cfg_path);
            const ModelConfig mc = load_config<ModelConfig>(model_cfg_path);
            const PreparedDataset ds = prepare_or_load(prepared_path, data_dir, po, log);
            std::vector<std::string> ids = ds.patient_ids();
            FoldPlan plan;
            json plan_json = nullptr;
            if (!plan_path.empty()) {
                plan = read_json_file(plan_path).get<FoldPlan>();
                plan.validate(ids);
                if (fold < 0 || static_cast<std::size_t>(fold) >= plan.k) {
                    throw ValidationError("--fold must be in [0, " + std::to_string(plan.k) + ") with --fold-plan");
                }
                ids = plan.train_ids(static_cast<std::size_t>(fold));
                plan_json = plan;
            } else if (fold >= 0) {
                throw ValidationError("--fold needs --fold-plan");
            }
            const json fp_src{{"train", tc}, {"model", mc}, {"plan", plan_json}, {"fold", fold}, {"dataset_seed", ds.seed}};
            const std::string fp = hex64(fnv1a64(fp_src.dump()));
            const fs::path dir = run_dir(out_dir, fp);
            fs::create_directories(dir);
            TrainResult tr = train_fold(ds, ids, fold, tc, mc, [&](const EpochLog& e) {
                log.info("epoch=" + std::to_string(e.epoch) + " loss=" + format_double(e.mean_loss));
            });
            for (const Exclusion& e : tr.excluded) log.warn("excluded patient=" + e.patient_id + " " + e.reason);
            const SigmaEstimate sigma = fit_sigma(ds, tr.used_ids, model_predictor(tr.model, tr.stats, tc.include_baseline_fvc),
                                                  fold, tc.sigma_constant);
            assert_no_leakage(fold, tr.stats, sigma);
            json stats_json;
            norm_stats_to_json(stats_json, tr.stats);
            tr.model.save(dir / "model.ckpt", json{{"fold", fold},
                                                   {"norm_stats", stats_json},
                                                   {"sigma_ml", sigma.sigma_ml},
                                                   {"train_config", tc}});
            json log_json = json::array();
            for (const EpochLog& e : tr.log) log_json.push_back({{"epoch", e.epoch}, {"mean_loss", e.mean_loss}});
            write_atomic(dir / "train_log.json", log_json.dump(2) + "\n");
            ctx.manifest.config_paths = {{"train", train_cfg_path}, {"model", model_cfg_path}, {"fold_plan", plan_path}};
            ctx.manifest.seeds = {{"train", tc.seed}, {"model", mc.seed}, {"dataset", ds.seed}};
            ctx.manifest.fingerprint = fp;
            ctx.manifest.artifacts = {(dir / "model.ckpt").string(), (dir / "train_log.json").string()};
            finish(ctx, dir / "manifest.json");
            out << (dir / "model.ckpt").string() << '\n';
        } else if (*evaluate) {
            json extra;
            const FibroModel model = FibroModel::load(ckpt_path, &extra);
            const PreparedDataset ds = prepare_or_load(prepared_path, data_dir, po, log);
            int ck_fold = -1;
            NormStats stats;
            TrainConfig tc;
            double sigma_ml = kSigmaFloorMl;
            try {
                ck_fold = extra.at("fold").get<int>();
                stats = norm_stats_from_json(extra.at("norm_stats"));
                tc = extra.at("train_config").get<TrainConfig>();
                sigma_ml = extra.at("sigma_ml").get<double>();
            } catch (const nlohmann::json::exception& e) {
                throw ValidationError(ckpt_path + ": checkpoint lacks training metadata (" + e.what() + ")");
            }
            std::vector<std::string> ids = ds.patient_ids();
            if (!plan_path.empty()) {
                const FoldPlan plan = read_json_file(plan_path).get<FoldPlan>();
                plan.validate(ids);
                if (ck_fold < 0) throw ValidationError("checkpoint was trained without a fold; omit --fold-plan");
                ids = plan.test_ids(static_cast<std::size_t>(ck_fold));
            }
            const SigmaEstimate sigma{ck_fold, sigma_ml, 0};
            assert_no_leakage(ck_fold, stats, sigma);
            const FoldEvaluation ev =
                evaluate_fold(ds, ids, model_predictor(model, stats, tc.include_baseline_fvc), sigma);
            json rows = json::array();
            for (const RowDetail& r : ev.rows) {
                rows.push_back({{"patient_id", r.patient_id}, {"week", r.week},
                                {"fvc_true_ml", r.fvc_true_ml}, {"fvc_pred_ml", r.fvc_pred_ml}});
            }
            json slopes = json::object();
            for (const auto& [id, s] : ev.slopes) slopes[id] = s;
            json report{{"checkpoint", ckpt_path}, {"fold", ck_fold}, {"sigma_used", sigma_ml},
                        {"lll_m", ev.score.lll_m}, {"rmse", ev.score.rmse}, {"n_rows", ev.rows.size()},
                        {"lll_m_convention", "higher (less negative) is better"},
                        {"patients_without_followup", ev.patients_without_followup},
                        {"predicted_slopes", slopes}, {"rows", rows}};
            if (!truth_path.empty()) {
                const auto truth = truth_map(truth_path);
                std::vector<double> t, p;
                for (const auto& [id, s] : ev.slopes) {
                    if (!truth.count(id)) throw ValidationError("truth table has no slope for '" + id + "'");
                    t.push_back(truth.at(id));
                    p.push_back(s);
                }
                report["slope_rmse"] = rmse(t, p);
            }
            const std::string fp = hex64(fnv1a64(json{{"checkpoint", fs::absolute(ckpt_path).string()},
                                                     {"dataset_seed", ds.seed},
                                                     {"fold_plan", plan_path}}
                                                     .dump()));
            const fs::path dir = run_dir(out_dir, fp);
            write_atomic(dir / "eval.json", report.dump(2) + "\n");
            ctx.manifest.config_paths = {{"checkpoint", ckpt_path}, {"fold_plan", plan_path}};
            ctx.manifest.seeds = {{"dataset", ds.seed}};
            ctx.manifest.fingerprint = fp;
            ctx.manifest.artifacts = {(dir / "eval.json").string()};
            finish(ctx, dir / "manifest.json");
            out << json{{"lll_m", ev.score.lll_m}, {"rmse", ev.score.rmse}}.dump() << '\n';
        } else if (*cv) {
            const TrainConfig tc = load_config<TrainConfig>(train_cfg_path);
            const ModelConfig mc = load_config<ModelConfig>(model_cfg_path);
            const PreparedDataset ds = prepare_or_load(prepared_path, data_dir, po, log);
            log_warnings(ds, log);
            CvOptions opts;
            opts.k = k;
            opts.fold_seed = fold_seed;
            if (truth_path.empty() && !data_dir.empty() && fs::exists(fs::path(data_dir) / "truth.csv")) {
                truth_path = (fs::path(data_dir) / "truth.csv").string();
            }
            if (!truth_path.empty()) opts.true_slopes = truth_map(truth_path);

            ModelConfig effective = mc;
            effective.shallow_dim = kShallowDim + (tc.include_baseline_fvc ? 1 : 0);
            effective.input_height = ds.height;
            effective.input_width = ds.width;
            const FoldPlan plan = make_folds(ds.patient_ids(), k, fold_seed);
            std::vector<int> expected_ids;
            for (std::size_t f = 0; f < k; ++f) expected_ids.push_back(static_cast<int>(f));
            const std::string fp = config_fingerprint(tc, effective, plan, ds.seed, expected_ids);
            const fs::path dir = run_dir(out_dir, fp);
            fs::create_directories(dir);
            write_atomic(dir / "folds.json", json(plan).dump(2) + "\n");
            opts.checkpoint_dir = dir;

            const json report = run_cv(ds, tc, mc, opts, [&](const std::string& m) { log.info(m); });
            if (report.at("fingerprint").get<std::string>() != fp) {
                throw std::logic_error("report fingerprint does not match the run fingerprint");
            }
            write_atomic(dir / "report.json", report.dump(2) + "\n");
            ctx.manifest.config_paths = {{"train", train_cfg_path}, {"model", model_cfg_path}, {"truth", truth_path}};
            ctx.manifest.seeds = {{"fold", fold_seed}, {"train", tc.seed}, {"model", mc.seed}, {"dataset", ds.seed}};
            ctx.manifest.fingerprint = fp;
            ctx.manifest.artifacts = {(dir / "report.json").string(), (dir / "folds.json").string()};
            for (std::size_t f = 0; f < k; ++f) {
                ctx.manifest.artifacts.push_back((dir / ("fold" + std::to_string(f) + ".ckpt")).string());
            }
            finish(ctx, dir / "manifest.json");
            const json& agg = report.at("aggregate");
            out << json{{"report", (dir / "report.json").string()},
                        {"lll_m_mean", agg.at("model").at("lll_m_mean")},
                        {"rmse_mean", agg.at("model").at("rmse_mean")}}
                       .dump()
                << '\n';
        } else if (*gradcheck) {
            const ModelConfig mc = load_config<ModelConfig>(model_cfg_path);
            const json fp_src{{"model", mc}, {"seed", gco.seed}, {"step", gco.step}, {"floor", gco.floor}};
            const std::string fp = hex64(fnv1a64(fp_src.dump()));
            const GradCheckResult r = gradient_check(mc, gco);
            const bool pass = r.max_rel_error < tolerance;
            const json result{{"checked", r.checked},
                              {"max_rel_error", r.max_rel_error},
                              {"tolerance", tolerance},
                              {"floor", gco.floor},
                              {"worst_parameter", r.worst_parameter},
                              {"worst_index", r.worst_index},
                              {"worst_analytic", r.worst_analytic},
                              {"worst_numeric", r.worst_numeric},
                              {"pass", pass}};
            const fs::path dir = run_dir(out_dir, fp);
            write_atomic(dir / "gradcheck.json", result.dump(2) + "\n");
            ctx.manifest.config_paths = {{"model", model_cfg_path}};
            ctx.manifest.seeds = {{"input", gco.seed}, {"model", mc.seed}};
            ctx.manifest.fingerprint = fp;
            ctx.manifest.artifacts = {(dir / "gradcheck.json").string()};
            finish(ctx, dir / "manifest.json");
            out << result.dump() << '\n';
            if (!pass) {
                log.error("gradcheck", "max relative error " + format_double(r.max_rel_error) + " exceeds tolerance");
                return 2;
            }
        }
        return 0;
    } catch (const ValidationError& e) {
        log.error("validation", e.what());
        return 1;
    } catch (const std::exception& e) {
        log.error("internal", e.what());
        return 2;
    }
}

} // namespace fibro::cli
