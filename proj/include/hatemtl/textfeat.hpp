#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

namespace hatemtl {

/// Splits on Unicode whitespace and strips leading/trailing punctuation. A leading
/// `#` or `@` is kept. Tokens that end up empty are dropped. Case is preserved.
std::vector<std::string> tokenize(std::string_view text);

/// ASCII lowercasing; other bytes pass through.
std::string to_lower(std::string_view text);

/// `#` followed by at least one word character, nothing else.
bool is_hashtag(std::string_view token);

/// True for a token from the shipped ASCII emoticon list, e.g. ":)" or "<3".
bool is_ascii_emoticon(std::string_view token);

/// True for code points in the Emoticons (U+1F600..U+1F64F) and Supplemental
/// Symbols and Pictographs (U+1F900..U+1F9FF) blocks.
bool is_emoji_codepoint(char32_t cp);

const std::vector<std::string_view>& ascii_emoticons();

struct SentimentLexicon {
    std::unordered_map<std::string, double> valence;  // token → [-4, 4]
    std::unordered_set<std::string> negators;

    /// `token<TAB>valence` lines; `!negator<TAB>token` declares a negator; `#` starts a
    /// comment line.
    static SentimentLexicon load(const std::filesystem::path& path);
    static SentimentLexicon parse(std::string_view content);

    /// Valence for a lowercase token, 0 when absent.
    double lookup(std::string_view token) const;
};

struct SurfaceCounts {
    std::size_t hashtags = 0;
    std::size_t emoticons = 0;
    std::size_t uppercase_letters = 0;
    std::size_t lowercase_letters = 0;
    std::size_t positive_words = 0;
    std::size_t negative_words = 0;

    bool operator==(const SurfaceCounts&) const = default;
};

SurfaceCounts count_surface_features(std::string_view text, const SentimentLexicon& lexicon);

/// Multiplier applied to a token's valence when a negator occurs among the three
/// preceding tokens.
inline constexpr double kNegationScalar = -0.74;
/// s / sqrt(s^2 + alpha) normalization constant.
inline constexpr double kSentimentAlpha = 15.0;
inline constexpr std::size_t kNegationWindow = 3;

/// Lexicon sentiment in [-1, 1]: token valences (negation-damped) are summed and
/// squashed with s / sqrt(s^2 + 15). Hashtags and mentions are not scored.
double sentiment_score(std::string_view text, const SentimentLexicon& lexicon);

/// tokenize → lowercase → Porter stem. Hashtags and mentions keep their prefix and
/// are not stemmed.
std::vector<std::string> normalize_tokens(std::string_view text);

/// Unigrams, bigrams and trigrams of a token sequence, joined with a single space.
std::vector<std::string> extract_ngrams(const std::vector<std::string>& tokens);

using SparseVector = std::vector<std::pair<std::uint32_t, double>>;  // sorted by index

double sparse_norm(const SparseVector& v);
double sparse_dot(const SparseVector& a, const SparseVector& b);

class NGramVocabulary {
public:
    NGramVocabulary() = default;

    std::size_t size() const { return terms_.size(); }
    std::size_t corpus_size() const { return corpus_size_; }
    const std::vector<std::string>& terms() const { return terms_; }

    /// -1 when the gram is not in the vocabulary.
    std::int64_t index_of(std::string_view gram) const;
    std::size_t document_frequency(std::size_t index) const { return df_[index]; }
    /// ln((1 + N) / (1 + df)) + 1
    double idf(std::size_t index) const;

    void save(const std::filesystem::path& path) const;
    static NGramVocabulary load(const std::filesystem::path& path);

    friend NGramVocabulary build_ngram_vocab(const std::vector<std::vector<std::string>>& corpus,
                                             std::size_t max_features);

private:
    void rebuild_index();

    std::vector<std::string> terms_;
    std::vector<std::size_t> df_;
    std::size_t corpus_size_ = 0;
    std::unordered_map<std::string, std::uint32_t> index_;
};

inline constexpr std::size_t kDefaultMaxFeatures = 10000;

/// Ranks every 1-3 gram by document frequency (ties lexicographic), keeps the top
/// `max_features` and assigns indices in rank order.
NGramVocabulary build_ngram_vocab(const std::vector<std::vector<std::string>>& corpus,
                                  std::size_t max_features = kDefaultMaxFeatures);

/// Raw tf times smoothed idf over in-vocabulary grams, L2-normalized.
SparseVector tfidf_vector(const std::vector<std::string>& tokens, const NGramVocabulary& vocab);

struct TweetFeatureVector {
    static constexpr std::size_t kDenseSize = 7;
    /// hashtags, emoticons, uppercase, lowercase, positive, negative, sentiment
    std::array<double, kDenseSize> dense{};
    SparseVector sparse;
};

TweetFeatureVector tweet_feature_vector(std::string_view text, const NGramVocabulary& vocab,
                                        const SentimentLexicon& lexicon);

}  // namespace hatemtl
