#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "hatemtl/corpus.hpp"
#include "hatemtl/encoder.hpp"
#include "hatemtl/mtl.hpp"
#include "hatemtl/textfeat.hpp"
#include "hatemtl/usergraph.hpp"

namespace hatemtl {

struct FeatureMask {
    bool intra = false;
    bool inter = false;
    bool tb = false;

    static FeatureMask none() { return {}; }
    static FeatureMask all() { return {true, true, true}; }
    bool any() const { return intra || inter || tb; }

    /// "none", "all", or a '+' / ',' separated list of intra, inter, tb.
    static FeatureMask parse(std::string_view text);
    /// Canonical name: "none", "all", or e.g. "intra+inter".
    std::string name() const;

    bool operator==(const FeatureMask&) const = default;
};

/// Frozen per-record inputs of the fusion layer.
struct FeatureBundle {
    std::string tweet_id;
    Eigen::VectorXd t;
    Eigen::VectorXd f_intra;
    Eigen::VectorXd f_inter;
    TweetFeatureVector f_tb;
    std::size_t sparse_dim = 0;  // TF-IDF vocabulary size
};

struct BlockDims {
    std::size_t t = 0;
    std::size_t intra = 0;
    std::size_t inter = 0;
    std::size_t dense = TweetFeatureVector::kDenseSize;
    std::size_t sparse = 0;

    static BlockDims of(const FeatureBundle& b);
    /// Enabled block widths in concatenation order.
    std::vector<std::size_t> widths(const FeatureMask& mask) const;
    std::size_t total(const FeatureMask& mask) const;

    bool operator==(const BlockDims&) const = default;
};

/// [t | f_intra | f_inter | f_tb dense | f_tb sparse] with disabled blocks left out.
/// The sparse block is expanded to its full vocabulary width here.
Eigen::VectorXd fuse(const FeatureBundle& bundle, const FeatureMask& mask);

/// Inverse of fuse: the enabled blocks, in order.
std::vector<Eigen::VectorXd> split_fused(const Eigen::VectorXd& fused, const BlockDims& dims,
                                         const FeatureMask& mask);

struct FusionConfig {
    /// Width of the trainable projection applied to the sparse TF-IDF block; 0 keeps
    /// it raw.
    std::size_t sparse_projection = 50;
    /// Standardize the dense tweet-feature block with training-split statistics.
    bool standardize_dense = true;

    nlohmann::ordered_json to_json() const;
    static FusionConfig from_json(const nlohmann::json& j);
};

/// Softmax layer over the fused vector. The t block is initialized from an MTL head
/// so that a model with every mask off is exactly that head.
class FusionModel {
public:
    FusionModel() = default;
    FusionModel(const FeatureMask& mask, const BlockDims& dims, const FusionConfig& config,
                const TaskHead& head, std::uint64_t seed);

    const FeatureMask& mask() const { return mask_; }
    const BlockDims& dims() const { return dims_; }
    const FusionConfig& config() const { return config_; }
    const std::vector<std::string>& labels() const { return labels_; }
    std::size_t num_classes() const { return labels_.size(); }
    /// Width of the layer input after the sparse projection.
    std::size_t input_dim() const;

    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }

    void set_dense_stats(const std::array<double, TweetFeatureVector::kDenseSize>& mean,
                         const std::array<double, TweetFeatureVector::kDenseSize>& scale);
    const std::array<double, TweetFeatureVector::kDenseSize>& dense_mean() const { return mean_; }
    const std::array<double, TweetFeatureVector::kDenseSize>& dense_scale() const { return scale_; }

    /// Dense part of the layer input (everything except the sparse block).
    Eigen::RowVectorXd dense_input(const FeatureBundle& bundle) const;
    ad::Matrix logits(const std::vector<const FeatureBundle*>& bundles) const;

    /// Logits on a tape; gradients go to `grads` when given.
    ad::Var logits_graph(ad::Tape& tape, const std::vector<const FeatureBundle*>& bundles,
                         ParamSet* grads) const;

    void check(const FeatureBundle& bundle) const;

    nlohmann::json to_json() const;
    static FusionModel from_json(const nlohmann::json& j);
    void save(const std::filesystem::path& path) const;
    static FusionModel load(const std::filesystem::path& path);

private:
    FeatureMask mask_;
    BlockDims dims_;
    FusionConfig config_;
    std::vector<std::string> labels_;
    std::string task_;
    ParamSet params_;
    std::array<double, TweetFeatureVector::kDenseSize> mean_{};
    std::array<double, TweetFeatureVector::kDenseSize> scale_{1, 1, 1, 1, 1, 1, 1};
};

struct FusionTrainResult {
    FusionModel model;
    std::vector<double> epoch_loss;
};

/// Trains the fusion layer on frozen bundles. With every mask off the warm-started
/// head is returned untouched.
FusionTrainResult train_fusion(const std::vector<FeatureBundle>& bundles, const std::vector<int>& labels,
                               const FeatureMask& mask, const FusionConfig& config,
                               const TaskHead& head, const TrainingConfig& training, JobKey job = {});

struct Prediction {
    int label = 0;
    Eigen::VectorXd probabilities;
};

Prediction predict(const FusionModel& model, const FeatureBundle& bundle);
std::vector<int> predict_labels(const FusionModel& model, const std::vector<FeatureBundle>& bundles);

/// Index of the largest value, lowest index on ties.
int argmax(const Eigen::Ref<const Eigen::RowVectorXd>& values);

struct BundleOptions {
    std::size_t m_cap = 200;
    std::size_t intra_batch = 50;
    std::size_t neighbors = kDefaultNeighbors;
    std::size_t per_user = kDefaultTweetsPerNeighbor;
    SimilarityWeights weights = uniform_similarity_weights();
    /// Encode history with the untrained encoder (same config and init seed) instead of
    /// the shared fine-tuned one.
    bool frozen_history = false;

    nlohmann::ordered_json to_json() const;
    static BundleOptions from_json(const nlohmann::json& j);
};

/// Precomputes bundles for records of one dataset. Neighbors are drawn from every
/// user of the dataset other than the author.
class BundleBuilder {
public:
    BundleBuilder(const Dataset& ds, const SharedEncoder& encoder, const NGramVocabulary& vocab,
                  const SentimentLexicon& lexicon, const BundleOptions& options,
                  const EncoderParams* history_params = nullptr);

    FeatureBundle build(const TweetRecord& record);
    std::vector<FeatureBundle> build(const std::vector<std::size_t>& record_positions);

    const NeighborSelection& neighbors_of(const std::string& user_id);
    std::vector<NeighborSelection> selections() const;

private:
    const Eigen::VectorXd& embed_target(const std::string& text);
    const Eigen::VectorXd& embed_history(const std::string& text);

    const Dataset& ds_;
    const SharedEncoder& encoder_;
    const NGramVocabulary& vocab_;
    const SentimentLexicon& lexicon_;
    BundleOptions options_;
    const EncoderParams* history_params_;
    SimilarityContext context_;
    std::vector<const UserRecord*> pool_;
    std::map<std::string, NeighborSelection> neighbor_cache_;
    std::unordered_map<std::string, Eigen::VectorXd> target_cache_;
    std::unordered_map<std::string, Eigen::VectorXd> history_cache_;
};

/// TF-IDF vocabulary over the training texts.
NGramVocabulary build_train_vocab(const Dataset& ds, const std::vector<std::string>& train_ids,
                                  std::size_t max_features = kDefaultMaxFeatures);

/// Binary cache: "HMTLBNDL", u32 version, u64 manifest length, JSON manifest (ids,
/// block widths), then per bundle float64 blocks and the sparse entries.
void save_bundles(const std::filesystem::path& path, const std::vector<FeatureBundle>& bundles);
std::vector<FeatureBundle> load_bundles(const std::filesystem::path& path);

}  // namespace hatemtl
