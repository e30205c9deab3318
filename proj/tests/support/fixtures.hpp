#pragma once

// Synthetic corpora with known structure for the directional and planted checks.

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "hatemtl/corpus.hpp"
#include "hatemtl/eval.hpp"

namespace hatemtl::fixtures {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "hatemtl");
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }
    /// Writes `content` to `name` and returns the full path.
    std::filesystem::path write(const std::string& name, const std::string& content) const;

private:
    std::filesystem::path path_;
};

/// Distinct lowercase pseudo-words built from syllables, e.g. "kalomi".
std::vector<std::string> make_words(std::size_t n, std::uint64_t seed, const std::string& salt);

/// Train/test ids of one generated task.
struct Holdout {
    Dataset ds;
    std::vector<std::string> train_ids;
    std::vector<std::string> test_ids;

    FoldSplit as_fold() const;
};

/// Two disjoint keyword sets, one per class. Labels {"pos", "neg"}.
Holdout separable(std::size_t train, std::size_t test, std::uint64_t seed);

/// Two related tasks sharing one cue vocabulary. The "wide" task sees every cue in
/// training; the smaller "narrow" task trains on a quarter of the cues and is tested on
/// all of them, so only a shared encoder can carry the rest over.
struct MtlFixture {
    Holdout wide;
    Holdout narrow;
};

MtlFixture shared_vocabulary(std::uint64_t seed, std::size_t train_per_task = 400);

/// Single task where `hidden_share` of the records carry no cue in their text; their
/// label shows only in the author's history and in similar users' posts (users of the
/// same class share followees, hashtags and interests).
Holdout user_signal(std::uint64_t seed, double hidden_share = 0.3);

/// Marker word that the planted classifier treats as hateful.
inline constexpr const char* kPlantedMarker = "zzhatemark";

struct PlantedProfile {
    Dataset ds;
    std::size_t window = 50;
    std::set<std::string> hateful_labels;
    /// label → expected mean hateful count, computed while planting.
    std::map<std::string, double> expected;
    /// label → number of warm users in the group.
    std::map<std::string, std::size_t> expected_users;
};

/// Users whose target tweets carry label X get a planted number of marker posts in
/// their `window` most recent history posts (mean 7 for "hateful"). Posts past the
/// window are all marked, so counting them would show up.
PlantedProfile planted_history(std::uint64_t seed, std::size_t window = 50);

/// Keyword classifier matching planted_history.
TextClassifier planted_classifier();

/// Two-task workspace (corpora, users, task manifest, lexicon, workspace.json) that
/// the command line runs end to end in a few minutes.
void write_workspace(const std::filesystem::path& dir, const std::filesystem::path& lexicon, std::uint64_t seed);

}  // namespace hatemtl::fixtures
