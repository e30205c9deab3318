#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "hatemtl/corpus.hpp"
#include "hatemtl/encoder.hpp"
#include "hatemtl/fusion.hpp"
#include "hatemtl/mtl.hpp"

namespace hatemtl {

/// Invalid configuration or missing inputs (command exit code 2).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr const char* kWorkspaceEnv = "HATEMTL_WORKSPACE";
inline constexpr const char* kArtifactVersion = "0.1.0";

struct DatasetSpec {
    std::string task;
    std::filesystem::path corpus;
    std::filesystem::path users;
};

struct FeatureConfig {
    std::filesystem::path lexicon;  // empty: no sentiment lexicon
    std::size_t max_features = kDefaultMaxFeatures;
    std::size_t history_window = 50;
    BundleOptions bundles;
    FusionConfig fusion;
};

struct EvaluationConfig {
    std::size_t folds = 5;
    double val_fraction = 0.15;
    /// Task → labels counted as hateful in history profiles and error analysis.
    std::map<std::string, std::vector<std::string>> hateful_labels;
};

/// One file drives every command. Relative paths resolve against `root`.
struct WorkspaceConfig {
    std::filesystem::path root;
    std::filesystem::path task_manifest;
    std::vector<TaskId> tasks;  // inline alternative to task_manifest
    std::vector<DatasetSpec> datasets;
    FeatureConfig features;
    EncoderConfig encoder;
    TrainingConfig training;
    EvaluationConfig evaluation;
    std::filesystem::path output_dir = "out";
    std::uint64_t seed = 0;
    bool strict = false;

    /// Parses a config document. Unknown keys are rejected.
    static WorkspaceConfig from_json(const nlohmann::json& j, const std::filesystem::path& root);
    /// Reads a config file; `root` defaults to the file's directory unless the
    /// workspace environment variable is set.
    static WorkspaceConfig load(const std::filesystem::path& path);

    /// Effective settings with every default filled in (paths as written).
    nlohmann::ordered_json to_json() const;
    /// SHA-256 of the canonical (key-sorted) effective settings.
    std::string config_hash() const;

    std::filesystem::path resolve(const std::filesystem::path& p) const;
    /// Throws ConfigError naming the first referenced path that does not exist.
    void check_paths() const;
    /// Tasks from the manifest file or the inline list.
    std::vector<TaskId> task_list() const;
    std::set<std::string> hateful_labels(const std::string& task) const;
};

std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::filesystem::path& path);

/// Provenance record kept at `<out>/<run-id>/manifest.json`.
struct RunManifest {
    std::string run_id;
    std::string config_hash;
    nlohmann::json config;
    std::uint64_t seed = 0;
    std::string created;
    std::string updated;
    std::vector<nlohmann::json> commands;
    std::set<std::string> files;  // relative to the run directory

    static RunManifest load_or_create(const std::filesystem::path& run_dir, const WorkspaceConfig& config,
                                      const std::string& run_id);
    void add_file(const std::filesystem::path& run_dir, const std::filesystem::path& file);
    void save(const std::filesystem::path& run_dir);
    nlohmann::ordered_json to_json() const;
};

/// Loaded datasets of a workspace, in config order.
struct Workspace {
    WorkspaceConfig config;
    std::vector<Dataset> datasets;
    std::vector<LoadReport> reports;
    SentimentLexicon lexicon;

    static Workspace open(const WorkspaceConfig& config);
    std::vector<const Dataset*> pointers() const;
    const Dataset& dataset(const std::string& task) const;
};

/// Runs the command line. Returns the process exit code: 0 success, 1 runtime
/// failure, 2 configuration or validation failure.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace hatemtl
