#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "hatemtl/corpus.hpp"
#include "hatemtl/textfeat.hpp"

namespace hatemtl {

struct SimilarityFeatures {
    static constexpr std::size_t kCount = 7;

    double follow_overlap = 0.0;
    double mention_affinity = 0.0;
    double retweet_affinity = 0.0;
    double favourite_affinity = 0.0;
    double hashtag_overlap = 0.0;
    double interest_overlap = 0.0;
    double profile_similarity = 0.0;

    std::array<double, kCount> as_array() const;
    static SimilarityFeatures from_array(const std::array<double, kCount>& a);
    bool operator==(const SimilarityFeatures&) const = default;
};

using SimilarityWeights = std::array<double, SimilarityFeatures::kCount>;

inline SimilarityWeights uniform_similarity_weights() {
    SimilarityWeights w;
    w.fill(1.0 / static_cast<double>(SimilarityFeatures::kCount));
    return w;
}

struct SimilarityScore {
    double value = 0.0;
    SimilarityFeatures components;
};

/// Shared lookups for scoring a pool: a TF-IDF vocabulary over profile texts and the
/// author of each known tweet (favourites point at tweets, not users).
class SimilarityContext {
public:
    SimilarityContext() = default;

    /// Builds the profile vocabulary from the given users.
    static SimilarityContext from_users(const std::vector<const UserRecord*>& users,
                                        std::unordered_map<std::string, std::string> tweet_author = {});
    static SimilarityContext from_dataset(const Dataset& ds);

    const NGramVocabulary& profile_vocab() const { return profile_vocab_; }
    /// Empty string when the tweet's author is unknown.
    const std::string& author_of(const std::string& tweet_id) const;
    /// Profile TF-IDF vector; precomputed for the users the context was built from.
    SparseVector profile_vector(const UserRecord& u) const;

private:
    NGramVocabulary profile_vocab_;
    std::unordered_map<std::string, std::string> tweet_author_;
    std::unordered_map<std::string, SparseVector> profile_vectors_;
};

/// Seven bounded, symmetric similarity components:
///   follow_overlap      Jaccard(following ∪ followers) of both users
///   *_affinity          (n(u→v) + n(v→u)) / (total(u) + total(v)), 0 when the total is 0
///   hashtag/interest    Jaccard over supports
///   profile_similarity  cosine of profile TF-IDF vectors
SimilarityFeatures similarity_features(const UserRecord& u, const UserRecord& v,
                                       const SimilarityContext& context);

/// Same, with a context built from just the two users.
SimilarityFeatures similarity_features(const UserRecord& u, const UserRecord& v);

/// Weighted sum of the components; throws std::invalid_argument for negative weights
/// or weights not summing to 1 (within 1e-9).
SimilarityScore tsim_score(const SimilarityFeatures& f, const SimilarityWeights& weights);

struct NeighborSelection {
    std::string target_user;
    std::vector<std::pair<std::string, SimilarityScore>> neighbors;
};

inline constexpr std::size_t kDefaultNeighbors = 3;
inline constexpr std::size_t kDefaultTweetsPerNeighbor = 5;

/// k highest-scoring users of `pool` (target skipped), ties by ascending user_id.
NeighborSelection top_k_similar(const UserRecord& target, const std::vector<const UserRecord*>& pool,
                                std::size_t k, const SimilarityWeights& weights,
                                const SimilarityContext& context);

NeighborSelection top_k_similar(const UserRecord& target, const std::vector<const UserRecord*>& pool,
                                std::size_t k,
                                const SimilarityWeights& weights = uniform_similarity_weights());

using TextEmbedder = std::function<Eigen::VectorXd(const std::string&)>;

double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

/// For each neighbor in order, the `per_user` history tweets closest to the target
/// by cosine of their embeddings (ties keep history order).
std::vector<std::string> select_inter_tweets(const std::string& target_text,
                                             const NeighborSelection& neighbors,
                                             const UserMap& users, const TextEmbedder& embed,
                                             std::size_t per_user = kDefaultTweetsPerNeighbor);

/// JSON Lines: {"target_user", "neighbors": [{"user_id", "score", "components"}]}.
void write_neighbor_selections(const std::filesystem::path& path,
                               const std::vector<NeighborSelection>& selections);
std::vector<NeighborSelection> read_neighbor_selections(const std::filesystem::path& path);

}  // namespace hatemtl
