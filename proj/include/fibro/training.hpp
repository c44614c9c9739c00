#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fibro/adamw.hpp"
#include "fibro/features.hpp"
#include "fibro/folds.hpp"
#include "fibro/metrics.hpp"
#include "fibro/model.hpp"
#include "fibro/prepared.hpp"
#include "json.hpp"

namespace fibro {

struct TrainConfig {
    std::size_t epochs = 40;
    AdamWOptions optimizer;
    std::uint64_t seed = 0;
    /// Optimize only the deep linear and output layers.
    bool head_only = false;
    /// Append the z-scored baseline FVC to the shallow vector.
    bool include_baseline_fvc = false;
    /// Start the output bias at the mean training label instead of 0.
    bool init_bias_to_label_mean = true;
    /// Fixed sigma for every prediction; otherwise sigma is fit on the
    /// training fold residuals.
    std::optional<double> sigma_constant;

    void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct Exclusion {
    std::string patient_id;
    std::string reason;
};

struct EpochLog {
    std::size_t epoch = 0;
    double mean_loss = 0.0;
    std::size_t samples = 0;
};

struct TrainResult {
    FibroModel model;
    NormStats stats;
    std::vector<std::string> used_ids;
    std::vector<Exclusion> excluded;
    std::vector<EpochLog> log;
};

/// Shallow vector of a patient under fold statistics.
ShallowVector shallow_for(const PreparedPatient& p, const NormStats& stats, bool include_baseline_fvc);

/// Reason a patient cannot be used for training, or nullopt.
std::optional<std::string> training_exclusion(const PreparedPatient& p);

/// Batch-size-1 training on the listed patients. Each epoch visits the
/// patients in a seeded order and redraws one slice per patient from the
/// truncated band. NormStats are fit on the used patients and tagged with
/// `fold_id`.
TrainResult train_fold(const PreparedDataset& dataset, const std::vector<std::string>& train_ids, int fold_id,
                       const TrainConfig& config, const ModelConfig& model_config,
                       const std::function<void(const EpochLog&)>& on_epoch = {});

using SlopePredictor = std::function<double(const PreparedPatient&)>;

/// Predicted slope from the evaluation slice (chosen at prepare time).
SlopePredictor model_predictor(const FibroModel& model, const NormStats& stats, bool include_baseline_fvc);
SlopePredictor constant_predictor(double slope);

struct SigmaEstimate {
    int fold_id = -1;
    double sigma_ml = kSigmaFloorMl;
    std::size_t residuals = 0;
};

/// Population std of reconstruction residuals over the non-baseline visits
/// of the training patients, floored at 70 ml; `constant` overrides.
SigmaEstimate fit_sigma(const PreparedDataset& dataset, const std::vector<std::string>& train_ids,
                        const SlopePredictor& predictor, int fold_id, std::optional<double> constant);

struct RowDetail {
    std::string patient_id;
    int week = 0;
    double fvc_true_ml = 0.0;
    double fvc_pred_ml = 0.0;
};

struct FoldEvaluation {
    ScorePair score;
    std::vector<RowDetail> rows;
    /// Predicted slope per evaluated patient, in test-id order.
    std::vector<std::pair<std::string, double>> slopes;
    std::size_t patients_without_followup = 0;
    std::vector<Exclusion> excluded;
};

/// Reconstructs FVC at every non-baseline visit of each test patient from
/// the baseline row and the predicted slope, then scores with `sigma`.
FoldEvaluation evaluate_fold(const PreparedDataset& dataset, const std::vector<std::string>& test_ids,
                             const SlopePredictor& predictor, const SigmaEstimate& sigma);

struct CvOptions {
    std::size_t k = 5;
    std::uint64_t fold_seed = 0;
    /// Optional true slopes for slope RMSE.
    std::map<std::string, double> true_slopes;
    /// When set, each fold's checkpoint is written to
    /// `<dir>/fold<k>.ckpt`.
    std::optional<std::filesystem::path> checkpoint_dir;
};

/// Hex FNV-1a over the canonical JSON of every config and seed plus the
/// fold id carried by each fold's NormStats and sigma.
std::string config_fingerprint(const TrainConfig& train, const ModelConfig& model, const FoldPlan& plan,
                               std::uint64_t dataset_seed, const std::vector<int>& stats_fold_ids);

/// Train and evaluate every fold, plus zero-slope and training-mean
/// baselines. Returns the report JSON; see README for its layout.
nlohmann::json run_cv(const PreparedDataset& dataset, const TrainConfig& train, const ModelConfig& model,
                      const CvOptions& options, const std::function<void(const std::string&)>& log = {});

/// Throws std::logic_error when a fold's statistics were not fit on it.
void assert_no_leakage(int fold_id, const NormStats& stats, const SigmaEstimate& sigma);

void norm_stats_to_json(nlohmann::json& j, const NormStats& stats);
NormStats norm_stats_from_json(const nlohmann::json& j);

/// mean and population std of the values.
std::pair<double, double> mean_and_std(const std::vector<double>& values);

} // namespace fibro
