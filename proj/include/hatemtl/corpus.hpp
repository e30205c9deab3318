#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace hatemtl {

/// Raised for unreadable files and schema violations. `line()` is 1-based, 0 when
/// the problem is not tied to a line.
class CorpusError : public std::runtime_error {
public:
    CorpusError(const std::string& message, std::size_t line = 0);
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

struct TaskId {
    std::string id;
    std::vector<std::string> label_set;

    /// Throws CorpusError when the label set is empty or has duplicates.
    void validate() const;
    bool has_label(std::string_view label) const;
    /// Position of `label` in label_set; throws CorpusError when absent.
    std::size_t label_index(std::string_view label) const;
    std::size_t num_labels() const { return label_set.size(); }
};

struct TweetRecord {
    std::string tweet_id;
    std::string task;
    std::string text;
    std::string label;
    std::string user_id;
};

/// Element → occurrence count. Counts are always >= 1.
using Multiset = std::map<std::string, std::size_t>;

std::size_t multiset_size(const Multiset& m);

struct UserRecord {
    std::string user_id;
    std::vector<std::string> history;  // most recent first
    std::set<std::string> following;
    std::set<std::string> followers;
    Multiset mentioned;
    Multiset retweeted;
    Multiset favourited;
    Multiset hashtags;
    std::set<std::string> interests;
    std::string profile_text;

    bool cold() const { return history.empty(); }
};

using UserMap = std::map<std::string, UserRecord>;

struct Dataset {
    TaskId task;
    std::vector<TweetRecord> records;
    UserMap users;

    /// Record position for a tweet id; throws CorpusError when unknown.
    std::size_t index_of(std::string_view tweet_id) const;
    const UserRecord& user_of(const TweetRecord& record) const;

    /// Rebuilds the id index. Called by the loaders; call again after editing `records`.
    void reindex();

private:
    std::unordered_map<std::string, std::size_t> index_;
};

struct LineIssue {
    std::size_t line;
    std::string message;
};

struct LoadOptions {
    /// Strict mode turns undecodable (non UTF-8) lines into errors instead of skipping them.
    bool strict = false;
};

struct LoadReport {
    std::vector<LineIssue> skipped;
};

/// Reads a JSON Lines corpus (`tweet_id`, `text`, `label`, `user_id`). Every author gets
/// a cold UserRecord; use load_dataset to attach a users file.
Dataset load_corpus(const std::filesystem::path& path, const TaskId& task,
                    const LoadOptions& options = {}, LoadReport* report = nullptr);

/// Reads a JSON Lines users file.
UserMap load_users(const std::filesystem::path& path, const LoadOptions& options = {},
                   LoadReport* report = nullptr);

/// Merges users into the dataset; authors missing from `users` stay cold.
void attach_users(Dataset& ds, const UserMap& users);

Dataset load_dataset(const std::filesystem::path& corpus_path,
                     const std::filesystem::path& users_path, const TaskId& task,
                     const LoadOptions& options = {}, LoadReport* report = nullptr);

/// Validates invariants of an in-memory dataset (labels, ids, non-empty text, user entries).
void validate_dataset(const Dataset& ds);

/// Task manifest: JSON `{"tasks": [{"id": "d1", "labels": ["hateful", ...]}, ...]}`.
std::vector<TaskId> load_task_manifest(const std::filesystem::path& path);

/// Label → count over every label in the task's label set (absent labels map to 0).
std::map<std::string, std::size_t> class_distribution(const Dataset& ds);

struct FoldSplit {
    std::size_t fold_index = 0;
    std::vector<std::string> train_ids;
    std::vector<std::string> val_ids;
    std::vector<std::string> test_ids;
};

/// Stratified k-fold split. Each record lands in exactly one test fold; the remaining
/// pool of each fold is divided into validation (round(val_fraction * pool)) and
/// training, also stratified by label. Ids inside each set keep dataset order.
///
/// Labels with fewer than k records produce a message in `warnings` (if given).
std::vector<FoldSplit> kfold_split(const Dataset& ds, std::size_t k, double val_fraction,
                                   std::uint64_t seed,
                                   std::vector<std::string>* warnings = nullptr);

/// Record positions for a list of tweet ids.
std::vector<std::size_t> record_indices(const Dataset& ds, const std::vector<std::string>& ids);

void write_corpus(const std::filesystem::path& path, const Dataset& ds);
void write_users(const std::filesystem::path& path, const UserMap& users);

}  // namespace hatemtl
