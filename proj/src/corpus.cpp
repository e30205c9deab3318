#include "hatemtl/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "hatemtl/rng.hpp"
#include "hatemtl/utf8.hpp"

namespace hatemtl {

using nlohmann::json;

namespace {

std::string with_line(const std::string& message, std::size_t line) {
    if (line == 0) return message;
    return "line " + std::to_string(line) + ": " + message;
}

std::string trim(std::string_view s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

bool blank_after_strip(const std::string& text) {
    std::size_t pos = 0;
    while (pos < text.size()) {
        if (!utf8::is_space(utf8::next(text, pos))) return false;
    }
    return true;
}

// Calls `fn(json, line_no)` for every non-blank line. Undecodable lines are skipped
// (lenient) or fatal (strict).
template <typename Fn>
void for_each_json_line(const std::filesystem::path& path, const LoadOptions& options,
                        LoadReport* report, Fn&& fn) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CorpusError("cannot open " + path.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        if (!utf8::valid(line)) {
            const std::string msg = path.string() + ": invalid UTF-8";
            if (options.strict) throw CorpusError(with_line(msg, line_no), line_no);
            if (report) report->skipped.push_back({line_no, msg});
            continue;
        }
        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::parse_error& e) {
            throw CorpusError(with_line(path.string() + ": malformed JSON: " + e.what(), line_no),
                              line_no);
        }
        if (!obj.is_object()) {
            throw CorpusError(with_line(path.string() + ": expected a JSON object", line_no),
                              line_no);
        }
        fn(obj, line_no);
    }
}

std::string string_field(const json& obj, const char* key, std::size_t line_no,
                         bool required = true) {
    auto it = obj.find(key);
    if (it == obj.end()) {
        if (!required) return {};
        throw CorpusError(with_line(std::string("missing field '") + key + "'", line_no), line_no);
    }
    if (!it->is_string()) {
        throw CorpusError(with_line(std::string("field '") + key + "' must be a string", line_no),
                          line_no);
    }
    return it->get<std::string>();
}

std::vector<std::string> string_array(const json& obj, const char* key, std::size_t line_no) {
    std::vector<std::string> out;
    auto it = obj.find(key);
    if (it == obj.end() || it->is_null()) return out;
    if (!it->is_array()) {
        throw CorpusError(with_line(std::string("field '") + key + "' must be an array", line_no),
                          line_no);
    }
    for (const auto& v : *it) {
        if (!v.is_string()) {
            throw CorpusError(
                with_line(std::string("field '") + key + "' must hold strings", line_no), line_no);
        }
        out.push_back(v.get<std::string>());
    }
    return out;
}

Multiset to_multiset(const std::vector<std::string>& items) {
    Multiset m;
    for (const auto& s : items) ++m[s];
    return m;
}

std::vector<std::string> from_multiset(const Multiset& m) {
    std::vector<std::string> out;
    for (const auto& [k, n] : m) out.insert(out.end(), n, k);
    return out;
}

}  // namespace

CorpusError::CorpusError(const std::string& message, std::size_t line)
    : std::runtime_error(message), line_(line) {}

void TaskId::validate() const {
    if (id.empty()) throw CorpusError("task id must be non-empty");
    if (label_set.empty()) throw CorpusError("task '" + id + "' has an empty label set");
    std::set<std::string> seen;
    for (const auto& l : label_set) {
        if (!seen.insert(l).second) {
            throw CorpusError("task '" + id + "' lists label '" + l + "' twice");
        }
    }
}

bool TaskId::has_label(std::string_view label) const {
    return std::find(label_set.begin(), label_set.end(), label) != label_set.end();
}

std::size_t TaskId::label_index(std::string_view label) const {
    auto it = std::find(label_set.begin(), label_set.end(), label);
    if (it == label_set.end()) {
        throw CorpusError("label '" + std::string(label) + "' not in task '" + id + "'");
    }
    return static_cast<std::size_t>(it - label_set.begin());
}

std::size_t multiset_size(const Multiset& m) {
    std::size_t n = 0;
    for (const auto& [k, c] : m) n += c;
    return n;
}

std::size_t Dataset::index_of(std::string_view tweet_id) const {
    auto it = index_.find(std::string(tweet_id));
    if (it == index_.end()) throw CorpusError("unknown tweet id '" + std::string(tweet_id) + "'");
    return it->second;
}

const UserRecord& Dataset::user_of(const TweetRecord& record) const {
    auto it = users.find(record.user_id);
    if (it == users.end()) throw CorpusError("no user entry for '" + record.user_id + "'");
    return it->second;
}

void Dataset::reindex() {
    index_.clear();
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (!index_.emplace(records[i].tweet_id, i).second) {
            throw CorpusError("duplicate tweet_id '" + records[i].tweet_id + "'");
        }
    }
}

Dataset load_corpus(const std::filesystem::path& path, const TaskId& task,
                    const LoadOptions& options, LoadReport* report) {
    task.validate();
    Dataset ds;
    ds.task = task;
    std::map<std::string, std::size_t> first_seen;
    for_each_json_line(path, options, report, [&](const json& obj, std::size_t line_no) {
        TweetRecord r;
        r.tweet_id = string_field(obj, "tweet_id", line_no);
        r.text = string_field(obj, "text", line_no);
        r.label = string_field(obj, "label", line_no);
        r.user_id = string_field(obj, "user_id", line_no);
        r.task = task.id;
        if (r.tweet_id.empty()) throw CorpusError(with_line("empty tweet_id", line_no), line_no);
        if (r.user_id.empty()) throw CorpusError(with_line("empty user_id", line_no), line_no);
        if (blank_after_strip(r.text)) {
            throw CorpusError(with_line("empty text for tweet '" + r.tweet_id + "'", line_no),
                              line_no);
        }
        if (!task.has_label(r.label)) {
            throw CorpusError(with_line("unknown label '" + r.label + "' for task '" + task.id +
                                            "' in " + path.string(),
                                        line_no),
                              line_no);
        }
        auto [it, fresh] = first_seen.emplace(r.tweet_id, line_no);
        if (!fresh) {
            throw CorpusError(with_line("duplicate tweet_id '" + r.tweet_id +
                                            "' (first seen on line " +
                                            std::to_string(it->second) + ")",
                                        line_no),
                              line_no);
        }
        ds.records.push_back(std::move(r));
    });
    if (ds.records.empty()) throw CorpusError(path.string() + ": corpus has no records");
    for (const auto& r : ds.records) {
        auto& u = ds.users[r.user_id];
        u.user_id = r.user_id;
    }
    ds.reindex();
    return ds;
}

UserMap load_users(const std::filesystem::path& path, const LoadOptions& options,
                   LoadReport* report) {
    UserMap users;
    for_each_json_line(path, options, report, [&](const json& obj, std::size_t line_no) {
        UserRecord u;
        u.user_id = string_field(obj, "user_id", line_no);
        if (u.user_id.empty()) throw CorpusError(with_line("empty user_id", line_no), line_no);
        u.history = string_array(obj, "history", line_no);
        for (auto& s : string_array(obj, "following", line_no)) u.following.insert(std::move(s));
        for (auto& s : string_array(obj, "followers", line_no)) u.followers.insert(std::move(s));
        u.mentioned = to_multiset(string_array(obj, "mentioned", line_no));
        u.retweeted = to_multiset(string_array(obj, "retweeted", line_no));
        u.favourited = to_multiset(string_array(obj, "favourited", line_no));
        u.hashtags = to_multiset(string_array(obj, "hashtags", line_no));
        for (auto& s : string_array(obj, "interests", line_no)) u.interests.insert(std::move(s));
        u.profile_text = string_field(obj, "profile_text", line_no, /*required=*/false);
        const std::string id = u.user_id;
        if (!users.emplace(id, std::move(u)).second) {
            throw CorpusError(with_line("duplicate user_id '" + id + "'", line_no), line_no);
        }
    });
    return users;
}

void attach_users(Dataset& ds, const UserMap& users) {
    for (const auto& [id, user] : users) ds.users[id] = user;
    for (const auto& r : ds.records) {
        auto& u = ds.users[r.user_id];
        u.user_id = r.user_id;
    }
}

Dataset load_dataset(const std::filesystem::path& corpus_path,
                     const std::filesystem::path& users_path, const TaskId& task,
                     const LoadOptions& options, LoadReport* report) {
    Dataset ds = load_corpus(corpus_path, task, options, report);
    attach_users(ds, load_users(users_path, options, report));
    return ds;
}

void validate_dataset(const Dataset& ds) {
    ds.task.validate();
    if (ds.records.empty()) throw CorpusError("dataset has no records");
    std::set<std::string> ids;
    for (const auto& r : ds.records) {
        if (!ids.insert(r.tweet_id).second) {
            throw CorpusError("duplicate tweet_id '" + r.tweet_id + "'");
        }
        if (!ds.task.has_label(r.label)) {
            throw CorpusError("unknown label '" + r.label + "' on tweet '" + r.tweet_id + "'");
        }
        if (blank_after_strip(r.text)) throw CorpusError("empty text on tweet '" + r.tweet_id + "'");
        if (!ds.users.count(r.user_id)) throw CorpusError("no user entry for '" + r.user_id + "'");
    }
}

std::vector<TaskId> load_task_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw CorpusError("cannot open " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw CorpusError(path.string() + ": " + e.what());
    }
    std::vector<TaskId> tasks;
    std::set<std::string> seen;
    if (!doc.contains("tasks") || !doc["tasks"].is_array()) {
        throw CorpusError(path.string() + ": expected a 'tasks' array");
    }
    for (const auto& t : doc["tasks"]) {
        TaskId task;
        task.id = t.at("id").get<std::string>();
        task.label_set = t.at("labels").get<std::vector<std::string>>();
        task.validate();
        if (!seen.insert(task.id).second) {
            throw CorpusError(path.string() + ": duplicate task id '" + task.id + "'");
        }
        tasks.push_back(std::move(task));
    }
    return tasks;
}

std::map<std::string, std::size_t> class_distribution(const Dataset& ds) {
    std::map<std::string, std::size_t> counts;
    for (const auto& l : ds.task.label_set) counts[l] = 0;
    for (const auto& r : ds.records) ++counts[r.label];
    return counts;
}

std::vector<FoldSplit> kfold_split(const Dataset& ds, std::size_t k, double val_fraction,
                                   std::uint64_t seed, std::vector<std::string>* warnings) {
    if (k < 2) throw std::invalid_argument("kfold_split: k must be >= 2");
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
        throw std::invalid_argument("kfold_split: val_fraction must lie in (0, 1)");
    }
    const std::size_t n = ds.records.size();
    if (n < k) {
        throw std::invalid_argument("kfold_split: " + std::to_string(n) +
                                    " records are too few for " + std::to_string(k) + " folds");
    }

    const std::size_t num_labels = ds.task.label_set.size();
    std::vector<std::vector<std::size_t>> by_label(num_labels);
    for (std::size_t i = 0; i < n; ++i) {
        by_label[ds.task.label_index(ds.records[i].label)].push_back(i);
    }

    Rng rng(derive_seed(seed, "split"));
    for (std::size_t l = 0; l < num_labels; ++l) {
        if (!by_label[l].empty() && by_label[l].size() < k && warnings) {
            warnings->push_back("label '" + ds.task.label_set[l] + "' has only " +
                                std::to_string(by_label[l].size()) + " records for " +
                                std::to_string(k) + " folds");
        }
        rng.shuffle(by_label[l]);
    }

    // Deal labels in order with one running counter so fold sizes differ by at most one
    // and every label is spread evenly.
    std::vector<std::size_t> fold_of(n);
    std::size_t counter = 0;
    for (const auto& group : by_label) {
        for (std::size_t idx : group) fold_of[idx] = counter++ % k;
    }

    std::vector<FoldSplit> folds(k);
    for (std::size_t f = 0; f < k; ++f) {
        FoldSplit& split = folds[f];
        split.fold_index = f;

        // Pool per label in shuffled order.
        std::vector<std::vector<std::size_t>> pool(num_labels);
        std::size_t pool_size = 0;
        for (std::size_t l = 0; l < num_labels; ++l) {
            for (std::size_t idx : by_label[l]) {
                if (fold_of[idx] != f) pool[l].push_back(idx);
            }
            pool_size += pool[l].size();
        }
        Rng val_rng(derive_seed(seed, "split-val", 0, f));
        for (auto& p : pool) val_rng.shuffle(p);

        // Largest-remainder allocation of the validation quota across labels.
        const auto target = static_cast<std::size_t>(std::llround(val_fraction * pool_size));
        std::vector<std::size_t> quota(num_labels);
        std::vector<double> remainder(num_labels);
        std::size_t assigned = 0;
        for (std::size_t l = 0; l < num_labels; ++l) {
            const double exact = val_fraction * static_cast<double>(pool[l].size());
            quota[l] = static_cast<std::size_t>(std::floor(exact));
            remainder[l] = exact - static_cast<double>(quota[l]);
            assigned += quota[l];
        }
        std::vector<std::size_t> order(num_labels);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
        for (std::size_t i = 0; assigned < target && i < order.size(); ++i) {
            if (quota[order[i]] < pool[order[i]].size()) {
                ++quota[order[i]];
                ++assigned;
            }
        }

        std::vector<char> role(n, 't');  // t = train, v = val, x = test
        for (std::size_t i = 0; i < n; ++i) {
            if (fold_of[i] == f) role[i] = 'x';
        }
        for (std::size_t l = 0; l < num_labels; ++l) {
            for (std::size_t j = 0; j < quota[l]; ++j) role[pool[l][j]] = 'v';
        }
        for (std::size_t i = 0; i < n; ++i) {
            const std::string& id = ds.records[i].tweet_id;
            if (role[i] == 'x') {
                split.test_ids.push_back(id);
            } else if (role[i] == 'v') {
                split.val_ids.push_back(id);
            } else {
                split.train_ids.push_back(id);
            }
        }
    }
    return folds;
}

std::vector<std::size_t> record_indices(const Dataset& ds, const std::vector<std::string>& ids) {
    std::vector<std::size_t> out;
    out.reserve(ids.size());
    for (const auto& id : ids) out.push_back(ds.index_of(id));
    return out;
}

void write_corpus(const std::filesystem::path& path, const Dataset& ds) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CorpusError("cannot write " + path.string());
    for (const auto& r : ds.records) {
        nlohmann::ordered_json obj;
        obj["tweet_id"] = r.tweet_id;
        obj["text"] = r.text;
        obj["label"] = r.label;
        obj["user_id"] = r.user_id;
        out << obj.dump() << '\n';
    }
}

void write_users(const std::filesystem::path& path, const UserMap& users) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CorpusError("cannot write " + path.string());
    for (const auto& [id, u] : users) {
        nlohmann::ordered_json obj;
        obj["user_id"] = u.user_id;
        obj["history"] = u.history;
        obj["following"] = std::vector<std::string>(u.following.begin(), u.following.end());
        obj["followers"] = std::vector<std::string>(u.followers.begin(), u.followers.end());
        obj["mentioned"] = from_multiset(u.mentioned);
        obj["retweeted"] = from_multiset(u.retweeted);
        obj["favourited"] = from_multiset(u.favourited);
        obj["hashtags"] = from_multiset(u.hashtags);
        obj["interests"] = std::vector<std::string>(u.interests.begin(), u.interests.end());
        obj["profile_text"] = u.profile_text;
        out << obj.dump() << '\n';
    }
}

}  // namespace hatemtl
