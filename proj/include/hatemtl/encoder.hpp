#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "hatemtl/autodiff.hpp"

namespace hatemtl {

/// Raised when parameters do not match the shapes implied by a config.
class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Tokenizer

class Tokenizer {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnknown = 1;
    static constexpr int kStart = 2;
    static constexpr std::size_t kDefaultMaxLength = 64;

    Tokenizer() = default;

    /// Keeps the `max_vocab` most frequent tokens (ties lexicographic) after the three
    /// special ids.
    static Tokenizer build(const std::vector<std::vector<std::string>>& corpus,
                           std::size_t max_vocab, std::size_t max_length = kDefaultMaxLength);

    /// Lowercased surface tokens used for encoder input (no stemming).
    static std::vector<std::string> split(std::string_view text);

    /// Sequence-start id, token ids, then padding; always exactly max_length ids.
    std::vector<int> encode(std::string_view text) const;
    std::vector<int> encode_tokens(const std::vector<std::string>& tokens) const;

    int id_of(std::string_view token) const;
    std::size_t size() const { return vocab_.size(); }
    std::size_t max_length() const { return max_length_; }
    const std::vector<std::string>& vocabulary() const { return vocab_; }

    nlohmann::json to_json() const;
    static Tokenizer from_json(const nlohmann::json& j);

    bool operator==(const Tokenizer& other) const {
        return vocab_ == other.vocab_ && max_length_ == other.max_length_;
    }

private:
    void rebuild_index();

    std::vector<std::string> vocab_;
    std::unordered_map<std::string, int> index_;
    std::size_t max_length_ = kDefaultMaxLength;
};

/// Number of leading non-pad ids.
std::size_t active_length(std::span<const int> ids);

// ---------------------------------------------------------------------------
// Configuration and parameters

enum class EncoderKind { transformer, cnn, gru };

std::string to_string(EncoderKind kind);
EncoderKind parse_encoder_kind(std::string_view name);

struct EncoderConfig {
    EncoderKind kind = EncoderKind::transformer;
    int vocab_size = 0;
    int max_length = static_cast<int>(Tokenizer::kDefaultMaxLength);
    int embedding_dim = 64;
    int hidden_dim = 128;  // transformer feed-forward width
    struct {
        int layers = 2;
        int heads = 2;
    } transformer;
    struct {
        int num_filters = 100;
        std::vector<int> kernel_widths{1, 2, 3, 4};
    } cnn;
    struct {
        int hidden_nodes = 100;
    } gru;
    int output_dim = 64;

    void validate() const;
    /// Width of the pooled representation before the output projection.
    int pooled_dim() const;

    nlohmann::ordered_json to_json() const;
    static EncoderConfig from_json(const nlohmann::json& j);
};

struct NamedTensor {
    std::string name;
    ad::Matrix value;
};

/// Ordered collection of named parameter matrices.
class ParamSet {
public:
    ad::Matrix& add(std::string name, Eigen::Index rows, Eigen::Index cols);
    ad::Matrix& at(std::string_view name);
    const ad::Matrix& at(std::string_view name) const;
    bool contains(std::string_view name) const;

    std::vector<NamedTensor>& tensors() { return tensors_; }
    const std::vector<NamedTensor>& tensors() const { return tensors_; }

    /// Flat view across all tensors in order (column-major within a tensor).
    std::size_t flat_size() const;
    double& flat(std::size_t i);
    double flat(std::size_t i) const;

    ParamSet zeros_like() const;
    void set_zero();
    bool all_finite() const;
    bool same_shapes(const ParamSet& other) const;
    /// Rounds every value to the nearest float32, which makes 32-bit checkpoints lossless.
    void round_to_float();

    bool operator==(const ParamSet& other) const;

private:
    std::vector<NamedTensor> tensors_;
    std::unordered_map<std::string, std::size_t> index_;
};

using EncoderParams = ParamSet;

/// Embeddings ~ U(-0.05, 0.05), weights Glorot-uniform, biases 0, norm gains 1.
EncoderParams init_encoder_params(const EncoderConfig& config, std::uint64_t seed);

/// Throws ShapeError when `params` is not exactly the tensor table implied by `config`.
void check_shapes(const EncoderParams& params, const EncoderConfig& config);

struct TaskHead {
    std::string task;
    std::vector<std::string> labels;
    ParamSet params;  // "weight": output_dim x |labels|, "bias": 1 x |labels|

    std::size_t num_classes() const { return labels.size(); }
};

TaskHead init_head(const std::string& task, const std::vector<std::string>& labels, int input_dim,
                   std::uint64_t seed);

// ---------------------------------------------------------------------------
// Forward passes

/// Parameter handles on a tape. Gradients go to `grads` when given.
class BoundParams {
public:
    BoundParams(ad::Tape& tape, const ParamSet& params, ParamSet* grads = nullptr);
    ad::Var operator()(std::string_view name) const;

private:
    std::unordered_map<std::string, ad::Var> vars_;
};

/// Builds the encoder graph for one id sequence and returns its 1 x output_dim node.
ad::Var encode_graph(ad::Tape& tape, const BoundParams& params, const EncoderConfig& config,
                     std::span<const int> ids);

/// Pre-projection pooled features (1 x pooled_dim).
ad::Var pooled_graph(ad::Tape& tape, const BoundParams& params, const EncoderConfig& config,
                     std::span<const int> ids);

Eigen::VectorXd encode_ids(std::span<const int> ids, const EncoderParams& params,
                           const EncoderConfig& config);
Eigen::VectorXd encode_text(std::string_view text, const Tokenizer& tokenizer,
                            const EncoderParams& params, const EncoderConfig& config);

using EncodeFn = std::function<Eigen::VectorXd(const std::string&)>;

/// Mean of the encodings of the first `m_cap` history posts, encoded `batch` at a time.
/// Chunking changes throughput only. Empty history gives a zero vector of `dim`.
Eigen::VectorXd intra_user_representation(const std::vector<std::string>& history,
                                          std::size_t m_cap, std::size_t batch,
                                          const EncodeFn& encode, Eigen::Index dim);

/// Mean of the encodings; zero vector of `dim` when empty.
Eigen::VectorXd inter_user_representation(const std::vector<std::string>& tweets,
                                          const EncodeFn& encode, Eigen::Index dim);

struct LabeledBatch {
    std::vector<std::vector<int>> ids;
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }
};

LabeledBatch make_batch(const std::vector<std::string>& texts, const std::vector<int>& labels,
                        const Tokenizer& tokenizer);

struct ForwardResult {
    double loss = 0.0;
    ad::Matrix logits;  // batch x classes
};

/// Mean categorical cross-entropy of the head's softmax over the batch.
ForwardResult forward_with_loss(const LabeledBatch& batch, const EncoderParams& params,
                                const EncoderConfig& config, const TaskHead& head);

struct GradientResult {
    double loss = 0.0;
    ad::Matrix logits;
    ParamSet encoder;
    ParamSet head;
};

/// Analytic gradients of forward_with_loss w.r.t. every encoder and head parameter.
GradientResult gradient(const LabeledBatch& batch, const EncoderParams& params,
                        const EncoderConfig& config, const TaskHead& head);

/// Logits of `head` for each sequence (no loss).
ad::Matrix predict_logits(const std::vector<std::vector<int>>& ids, const EncoderParams& params,
                          const EncoderConfig& config, const TaskHead& head);

// ---------------------------------------------------------------------------
// Persistence

struct Checkpoint {
    EncoderConfig config;
    Tokenizer tokenizer;
    EncoderParams encoder;
    std::vector<TaskHead> heads;
    std::uint64_t seed = 0;
    nlohmann::json extra = nlohmann::json::object();
};

/// Single-file container: "HMTLCKPT", u32 version, u64 manifest length, JSON manifest
/// (config, tokenizer, seed, shape table, heads), then little-endian float32 tensors.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
/// Reads a checkpoint and verifies every tensor shape against the stored config.
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// Manifest only, without reading tensor data.
nlohmann::json read_checkpoint_manifest(const std::filesystem::path& path);

/// `token d1 ... dE` lines; rows for tokens in the tokenizer are overwritten.
/// Returns how many rows were set.
std::size_t load_embeddings(const std::filesystem::path& path, const Tokenizer& tokenizer,
                            EncoderParams& params, const EncoderConfig& config);

}  // namespace hatemtl
