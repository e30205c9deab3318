#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hatemtl/corpus.hpp"
#include "hatemtl/fusion.hpp"
#include "hatemtl/mtl.hpp"

namespace hatemtl {

// ---------------------------------------------------------------------------
// Metrics

/// Rows are gold labels, columns predictions.
struct ConfusionMatrix {
    std::vector<std::string> labels;
    std::vector<std::vector<std::size_t>> counts;

    explicit ConfusionMatrix(std::vector<std::string> label_set = {});
    std::size_t total() const;
    std::size_t at(std::size_t gold, std::size_t predicted) const { return counts[gold][predicted]; }
};

ConfusionMatrix confusion(const std::vector<std::string>& gold, const std::vector<std::string>& predicted,
                          const std::vector<std::string>& label_set);
ConfusionMatrix confusion(const std::vector<int>& gold, const std::vector<int>& predicted,
                          const std::vector<std::string>& label_set);

struct ClassMetrics {
    std::string label;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t support = 0;
};

struct MetricsReport {
    std::vector<ClassMetrics> per_class;
    double macro_f1 = 0.0;
    double weighted_f1 = 0.0;
    std::size_t total = 0;

    nlohmann::ordered_json to_json() const;
    static MetricsReport from_json(const nlohmann::json& j);
};

/// Per-class F1 = 2PR/(P+R), 0 whenever a denominator vanishes. Macro averages over
/// the whole label set, weighted uses gold supports (0 when there are no records).
MetricsReport macro_weighted_f1(const ConfusionMatrix& cm);

/// Rounds to 6 decimals for display fields.
double display_round(double value);

// ---------------------------------------------------------------------------
// Cross-validation

struct RunEntry {
    std::size_t run = 0;
    std::size_t fold = 0;
    MetricsReport metrics;
};

struct RunAggregate {
    std::string task;
    std::vector<RunEntry> entries;
    double mean_macro_f1 = 0.0;
    double std_macro_f1 = 0.0;
    double mean_weighted_f1 = 0.0;
    double std_weighted_f1 = 0.0;

    /// Recomputes the means and population standard deviations from `entries`.
    void finalize();

    nlohmann::ordered_json to_json() const;
    static RunAggregate from_json(const nlohmann::json& j);
};

/// Input of one (run, fold) job: every task's dataset and its split for this fold.
struct FoldJob {
    JobKey key;
    std::uint64_t seed = 0;
    std::vector<const Dataset*> datasets;
    std::vector<FoldSplit> splits;  // parallel to datasets

    TaskSplit task_split(std::size_t i) const;
    std::vector<TaskSplit> task_splits() const;
};

/// Test-set predictions of one job: task → predicted class index per test id.
struct FoldPredictions {
    std::map<std::string, std::vector<int>> labels;
    std::vector<TrainingEvent> events;
};

using Pipeline = std::function<FoldPredictions(const FoldJob&)>;

struct CVOptions {
    std::size_t folds = 5;
    std::size_t runs = 5;
    double val_fraction = 0.15;
    std::uint64_t seed = 0;
    /// When false every run reuses run index 0 for seeding (identical runs).
    bool distinct_run_seeds = true;
};

/// Outcome of one job, serializable so jobs can run in separate processes.
struct JobResult {
    JobKey key;
    std::map<std::string, MetricsReport> metrics;
    /// task → (tweet id, gold, predicted) for every test record.
    std::map<std::string, std::vector<std::tuple<std::string, std::string, std::string>>> predictions;
    std::vector<TrainingEvent> events;

    nlohmann::json to_json() const;
    static JobResult from_json(const nlohmann::json& j);
};

/// Fold splits of every dataset (shared across runs).
std::vector<std::vector<FoldSplit>> make_splits(const std::vector<const Dataset*>& datasets,
                                                const CVOptions& options);

JobResult run_job(const Pipeline& pipeline, const std::vector<const Dataset*>& datasets,
                  const std::vector<std::vector<FoldSplit>>& splits, const CVOptions& options,
                  std::size_t run, std::size_t fold);

/// task → aggregate over jobs.
std::map<std::string, RunAggregate> aggregate(const std::vector<JobResult>& jobs);

struct CVResult {
    std::map<std::string, RunAggregate> aggregates;
    std::vector<JobResult> jobs;
};

/// runs × folds jobs in (run, fold) order.
CVResult cross_validate(const Pipeline& pipeline, const std::vector<const Dataset*>& datasets,
                        const CVOptions& options);

/// Single-task models, one per dataset.
Pipeline stl_pipeline(const EncoderConfig& encoder, const TrainingConfig& training);
/// One jointly trained model over all datasets.
Pipeline mtl_pipeline(const EncoderConfig& encoder, const TrainingConfig& training);

struct FusionPipelineOptions {
    FeatureMask mask = FeatureMask::all();
    FusionConfig fusion;
    BundleOptions bundles;
    std::size_t max_features = kDefaultMaxFeatures;
    const SentimentLexicon* lexicon = nullptr;
};

/// MTL training followed by per-task fusion layers over the transferred encoder.
Pipeline fusion_pipeline(const EncoderConfig& encoder, const TrainingConfig& training,
                         const FusionPipelineOptions& options);

// ---------------------------------------------------------------------------
// Error analysis and history profiling

struct ErrorCase {
    std::string text;
    std::string gold;
    std::string predicted;
};

struct ErrorCases {
    std::vector<ErrorCase> false_positives;  // gold negative, predicted positive
    std::vector<ErrorCase> false_negatives;  // gold positive, predicted negative
};

ErrorCases error_cases(const std::vector<std::string>& gold, const std::vector<std::string>& predicted,
                       const std::vector<std::string>& texts, const std::set<std::string>& positive_labels);

/// JSON Lines with `kind`, `text`, `gold`, `predicted`.
void write_error_cases(const std::filesystem::path& path, const ErrorCases& cases);

struct GroupProfile {
    std::size_t users = 0;
    double mean_hateful = 0.0;
};

struct HistoryProfile {
    std::size_t window = 50;
    std::map<std::string, GroupProfile> groups;  // target-tweet label → profile

    nlohmann::ordered_json to_json() const;
};

inline constexpr std::size_t kDefaultHistoryWindow = 50;

using TextClassifier = std::function<std::string(const std::string&)>;

/// Groups authors by the label of their target tweets (a user counts once per group),
/// classifies the `window` most recent history posts of each and averages the number
/// predicted in `hateful_labels`. Cold users are left out of the means.
HistoryProfile profile_history(const TextClassifier& classify, const Dataset& ds, std::size_t window,
                               const std::set<std::string>& hateful_labels);

}  // namespace hatemtl
