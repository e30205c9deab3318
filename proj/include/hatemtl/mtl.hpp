#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hatemtl/corpus.hpp"
#include "hatemtl/encoder.hpp"

namespace hatemtl {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct TrainingConfig {
    double learning_rate = 2e-5;
    std::size_t batch_size = 32;
    std::size_t epochs = 3;
    AdamConfig adam;
    std::uint64_t seed = 0;
    std::size_t runs = 5;
    /// Cap on tokenizer vocabulary (excluding the three special ids).
    std::size_t max_vocab = 20000;

    void validate() const;
    nlohmann::ordered_json to_json() const;
    static TrainingConfig from_json(const nlohmann::json& j);
};

/// First and second moment estimates for one parameter set. Each set keeps its own
/// step count, so a head that sits out a step does not advance its bias correction.
struct AdamState {
    ParamSet m;
    ParamSet v;
    std::size_t steps = 0;

    static AdamState for_params(const ParamSet& params);
};

/// One Adam update. Parameters are rounded back onto the float32 grid afterwards.
void adam_step(ParamSet& params, const ParamSet& grads, AdamState& state, double learning_rate,
               const AdamConfig& config);

struct MTLModel {
    EncoderConfig config;
    Tokenizer tokenizer;
    EncoderParams shared;
    std::map<std::string, TaskHead> heads;

    const TaskHead& head(const std::string& task) const;
    Eigen::VectorXd encode(std::string_view text) const;
    /// Predicted class index per text (argmax, lowest index on ties).
    std::vector<int> predict(const std::string& task, const std::vector<std::string>& texts) const;
    ad::Matrix logits(const std::string& task, const std::vector<std::string>& texts) const;

    Checkpoint to_checkpoint(std::uint64_t seed = 0) const;
    static MTLModel from_checkpoint(const Checkpoint& checkpoint);
};

/// One task's data for a training job: the dataset plus the ids used for training
/// and validation.
struct TaskSplit {
    const Dataset* dataset = nullptr;
    std::vector<std::string> train_ids;
    std::vector<std::string> val_ids;

    static TaskSplit from_fold(const Dataset& ds, const FoldSplit& fold);
};

struct TrainingEvent {
    std::size_t run = 0;
    std::size_t fold = 0;
    std::string task;
    std::size_t epoch = 0;  // 1-based
    std::size_t step = 0;   // global optimizer steps so far
    double loss = 0.0;      // mean training loss of the task's steps in this epoch
    std::optional<double> val_macro_f1;

    nlohmann::ordered_json to_json() const;
    static TrainingEvent from_json(const nlohmann::json& j);
};

void write_events(const std::filesystem::path& path, const std::vector<TrainingEvent>& events);
std::vector<TrainingEvent> read_events(const std::filesystem::path& path);

struct TrainingHistory {
    std::vector<TrainingEvent> events;
    std::map<std::string, std::vector<double>> epoch_loss;
    std::map<std::string, std::vector<double>> val_macro_f1;
    std::map<std::string, std::size_t> steps;  // optimizer steps per task
};

/// Identifies the job for seeding and event labels.
struct JobKey {
    std::size_t run = 0;
    std::size_t fold = 0;
};

/// Tokenizer over the training texts of every task.
Tokenizer build_task_tokenizer(const std::vector<TaskSplit>& tasks, std::size_t max_vocab,
                               std::size_t max_length);

/// Fresh model: tokenizer from the training texts, encoder and one head per task, seeded
/// from (seed, run, fold). `encoder.vocab_size` is overwritten with the tokenizer size.
MTLModel init_model(const std::vector<TaskSplit>& tasks, EncoderConfig encoder,
                    const TrainingConfig& training, JobKey job = {});

struct TrainResult {
    MTLModel model;
    TrainingHistory history;
};

/// Single-task training of one encoder and one head.
TrainResult train_stl(const TaskSplit& task, const EncoderConfig& encoder,
                      const TrainingConfig& training, JobKey job = {});

/// Joint training with strict round-robin over tasks. An epoch is one pass over the
/// largest task's batches; smaller tasks cycle, reshuffling on every pass. Each step
/// updates the shared encoder and the active task's head only.
TrainResult train_mtl(const std::vector<TaskSplit>& tasks, const EncoderConfig& encoder,
                      const TrainingConfig& training, JobKey job = {});

/// Continues training an existing model (used by train_stl / train_mtl).
TrainingHistory train_model(MTLModel& model, const std::vector<TaskSplit>& tasks,
                            const TrainingConfig& training, JobKey job = {});

struct SharedEncoder {
    EncoderConfig config;
    Tokenizer tokenizer;
    EncoderParams params;

    Eigen::VectorXd encode(std::string_view text) const;
};

/// Deep copy of the shared encoder.
SharedEncoder transfer_shared(const MTLModel& model);

/// Macro-F1 of `task`'s head on the given records (0 when `ids` is empty).
double evaluate_macro_f1(const MTLModel& model, const Dataset& ds, const std::vector<std::string>& ids);

}  // namespace hatemtl
