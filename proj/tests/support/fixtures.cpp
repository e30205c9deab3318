#include "fixtures.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

#include <unistd.h>

#include <json.hpp>

#include "hatemtl/rng.hpp"

namespace hatemtl::fixtures {

namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kOnsets{"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"};
const std::vector<std::string> kVowels{"a", "e", "i", "o", "u"};

std::string pick(Rng& rng, const std::vector<std::string>& v) { return v[rng.below(v.size())]; }

std::string sentence(Rng& rng, const std::vector<std::string>& filler, std::size_t n,
                     const std::vector<std::string>& inserts) {
    std::vector<std::string> words;
    for (std::size_t i = 0; i < n; ++i) words.push_back(pick(rng, filler));
    for (const auto& w : inserts) {
        const std::size_t at = rng.below(words.size() + 1);
        words.insert(words.begin() + static_cast<std::ptrdiff_t>(at), w);
    }
    std::string out;
    for (const auto& w : words) {
        if (!out.empty()) out += ' ';
        out += w;
    }
    return out;
}

std::string tweet_id(const std::string& prefix, std::size_t i) { return prefix + std::to_string(100000 + i); }

}  // namespace

TempDir::TempDir(const std::string& tag) {
    static std::size_t counter = 0;
    std::random_device rd;
    path_ = fs::temp_directory_path() /
            (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++) + "-" + std::to_string(rd()));
    fs::create_directories(path_);
}

TempDir::~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
}

fs::path TempDir::write(const std::string& name, const std::string& content) const {
    const fs::path p = path_ / name;
    fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    out << content;
    return p;
}

std::vector<std::string> make_words(std::size_t n, std::uint64_t seed, const std::string& salt) {
    Rng rng(derive_seed(seed, "words/" + salt));
    std::set<std::string> seen;
    std::vector<std::string> out;
    while (out.size() < n) {
        std::string w;
        const std::size_t syllables = 2 + rng.below(2);
        for (std::size_t s = 0; s < syllables; ++s) w += pick(rng, kOnsets) + pick(rng, kVowels);
        w += salt.substr(0, 1);
        if (seen.insert(w).second) out.push_back(w);
    }
    return out;
}

FoldSplit Holdout::as_fold() const {
    FoldSplit f;
    f.train_ids = train_ids;
    f.test_ids = test_ids;
    return f;
}

Holdout separable(std::size_t train, std::size_t test, std::uint64_t seed) {
    Rng rng(derive_seed(seed, "fixture/separable"));
    const auto pos = make_words(20, seed, "p");
    const auto neg = make_words(20, seed, "n");
    Holdout h;
    h.ds.task = {"toy", {"pos", "neg"}};
    for (std::size_t i = 0; i < train + test; ++i) {
        const bool p = i % 2 == 0;
        TweetRecord r;
        r.tweet_id = tweet_id("s", i);
        r.task = "toy";
        r.label = p ? "pos" : "neg";
        r.text = sentence(rng, p ? pos : neg, 4 + rng.below(4), {});
        r.user_id = "u" + std::to_string(i % 17);
        h.ds.records.push_back(r);
        (i < train ? h.train_ids : h.test_ids).push_back(r.tweet_id);
    }
    for (const auto& r : h.ds.records) h.ds.users[r.user_id].user_id = r.user_id;
    h.ds.reindex();
    return h;
}

MtlFixture shared_vocabulary(std::uint64_t seed, std::size_t train_per_task) {
    Rng rng(derive_seed(seed, "fixture/mtl"));
    const auto cues = make_words(40, seed, "c");
    const auto filler = make_words(300, seed, "f");
    const std::vector<std::string> seen_cues(cues.begin(), cues.begin() + 10);

    auto make = [&](const std::string& task, const std::vector<std::string>& labels, std::size_t test,
                    const std::vector<std::string>& train_cues) {
        Holdout h;
        h.ds.task = {task, labels};
        for (std::size_t i = 0; i < train_per_task + test; ++i) {
            const bool train = i < train_per_task;
            const bool positive = rng.uniform() < 0.5;
            std::vector<std::string> inserts;
            if (positive) inserts.push_back(train ? pick(rng, train_cues) : pick(rng, cues));
            TweetRecord r;
            r.tweet_id = tweet_id(task + "-", i);
            r.task = task;
            r.label = positive ? labels[0] : labels[1];
            r.text = sentence(rng, filler, 5 + rng.below(5), inserts);
            r.user_id = task + "-u" + std::to_string(i % 40);
            h.ds.records.push_back(r);
            (train ? h.train_ids : h.test_ids).push_back(r.tweet_id);
        }
        for (const auto& r : h.ds.records) h.ds.users[r.user_id].user_id = r.user_id;
        h.ds.reindex();
        return h;
    };
    MtlFixture f;
    f.wide = make("wide", {"hateful", "normal"}, 200, cues);
    f.narrow = make("narrow", {"abusive", "clean"}, 150, seen_cues);
    return f;
}

Holdout user_signal(std::uint64_t seed, double hidden_share) {
    Rng rng(derive_seed(seed, "fixture/user-signal"));
    const auto cues = make_words(30, seed, "c");
    const auto filler = make_words(250, seed, "f");
    const auto tags_h = make_words(6, seed, "h");
    const auto tags_n = make_words(6, seed, "m");

    constexpr std::size_t kUsers = 120;
    constexpr std::size_t kPostsPerUser = 5;
    constexpr std::size_t kHistory = 20;
    Holdout h;
    h.ds.task = {"signal", {"hateful", "normal"}};
    std::vector<bool> hateful_user(kUsers);
    for (std::size_t u = 0; u < kUsers; ++u) {
        hateful_user[u] = u % 2 == 0;
        const bool bad = hateful_user[u];
        UserRecord rec;
        rec.user_id = "user" + std::to_string(1000 + u);
        for (std::size_t k = 0; k < kHistory; ++k) {
            std::vector<std::string> inserts;
            if (bad && k % 2 == 0) inserts.push_back(pick(rng, cues));
            rec.history.push_back(sentence(rng, filler, 6 + rng.below(4), inserts));
        }
        const std::string hub = bad ? "hub_h" : "hub_n";
        for (std::size_t k = 0; k < 6; ++k) rec.following.insert(hub + std::to_string(rng.below(8)));
        for (std::size_t k = 0; k < 3; ++k) rec.hashtags["#" + pick(rng, bad ? tags_h : tags_n)] += 1;
        rec.interests.insert(bad ? "topic_h" + std::to_string(rng.below(3)) : "topic_n" + std::to_string(rng.below(3)));
        rec.profile_text = sentence(rng, bad ? tags_h : tags_n, 4, {});
        h.ds.users[rec.user_id] = rec;
    }
    std::size_t i = 0;
    std::vector<std::string> ids;
    for (std::size_t u = 0; u < kUsers; ++u) {
        for (std::size_t k = 0; k < kPostsPerUser; ++k, ++i) {
            const bool bad = hateful_user[u];
            const bool hidden = rng.uniform() < hidden_share;
            std::vector<std::string> inserts;
            if (bad && !hidden) inserts.push_back(pick(rng, cues));
            TweetRecord r;
            r.tweet_id = tweet_id("t", i);
            r.task = "signal";
            r.label = bad ? "hateful" : "normal";
            r.text = sentence(rng, filler, 6 + rng.below(4), inserts);
            r.user_id = "user" + std::to_string(1000 + u);
            h.ds.records.push_back(r);
            ids.push_back(r.tweet_id);
        }
    }
    rng.shuffle(ids);
    const std::size_t n_test = ids.size() / 5;
    h.test_ids.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_test));
    h.train_ids.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_test), ids.end());
    // Fixed-width ids, so lexicographic order is dataset order.
    std::sort(h.test_ids.begin(), h.test_ids.end());
    std::sort(h.train_ids.begin(), h.train_ids.end());
    h.ds.reindex();
    return h;
}

PlantedProfile planted_history(std::uint64_t seed, std::size_t window) {
    Rng rng(derive_seed(seed, "fixture/planted"));
    const auto filler = make_words(100, seed, "f");
    PlantedProfile p;
    p.window = window;
    p.ds.task = {"planted", {"hateful", "offensive", "neutral"}};
    p.hateful_labels = {"hateful"};

    // Per-group counts of marker posts inside the window; each list averages to the
    // group's planted mean.
    const std::map<std::string, std::vector<std::size_t>> plan{
        {"hateful", {7, 5, 9, 7, 6, 8, 7, 7}},
        {"offensive", {4, 5, 3, 6, 4, 5}},
        {"neutral", {1, 0, 2, 1, 0, 2, 1, 1, 1, 1}},
    };
    std::size_t record = 0;
    std::size_t user_no = 0;
    std::map<std::string, std::vector<std::size_t>> planted;
    for (const auto& [label, counts] : plan) {
        for (std::size_t c : counts) {
            UserRecord u;
            u.user_id = "p" + std::to_string(100 + user_no++);
            const std::size_t total = window + 10;
            std::vector<char> marked(window, 0);
            for (std::size_t k = 0; k < c; ++k) marked[k] = 1;
            rng.shuffle(marked);
            for (std::size_t k = 0; k < total; ++k) {
                const bool mark = k >= window || marked[k];
                u.history.push_back(sentence(rng, filler, 5, mark ? std::vector<std::string>{kPlantedMarker}
                                                                  : std::vector<std::string>{}));
            }
            // Oracle: recount from the stored history, independent of the plan.
            std::size_t recount = 0;
            for (std::size_t k = 0; k < window; ++k) {
                recount += u.history[k].find(kPlantedMarker) != std::string::npos ? 1 : 0;
            }
            planted[label].push_back(recount);
            // Several target tweets per user: the user still counts once in the group.
            const std::size_t posts = 1 + rng.below(3);
            for (std::size_t k = 0; k < posts; ++k) {
                p.ds.records.push_back({tweet_id("q", record++), "planted", sentence(rng, filler, 6, {}), label,
                                        u.user_id});
            }
            p.ds.users[u.user_id] = u;
        }
        // A cold author in every group, left out of the means.
        UserRecord cold;
        cold.user_id = "p" + std::to_string(100 + user_no++);
        p.ds.records.push_back({tweet_id("q", record++), "planted", sentence(rng, filler, 6, {}), label, cold.user_id});
        p.ds.users[cold.user_id] = cold;
    }
    for (const auto& [label, counts] : planted) {
        p.expected[label] = static_cast<double>(std::accumulate(counts.begin(), counts.end(), std::size_t{0})) /
                            static_cast<double>(counts.size());
        p.expected_users[label] = counts.size();
    }
    p.ds.reindex();
    return p;
}

TextClassifier planted_classifier() {
    return [](const std::string& text) {
        return text.find(kPlantedMarker) != std::string::npos ? std::string("hateful") : std::string("neutral");
    };
}

void write_workspace(const fs::path& dir, const fs::path& lexicon, std::uint64_t seed) {
    Rng rng(derive_seed(seed, "fixture/workspace"));
    const auto cues_hate = make_words(20, seed, "c");
    const auto cues_abuse = make_words(20, seed, "a");
    const auto filler = make_words(200, seed, "f");
    const std::vector<std::string> moods{"great", "love", "happy", "awful", "hate", "stupid", "not", "nice", "bad"};
    fs::create_directories(dir / "data");

    struct TaskPlan {
        TaskId task;
        std::vector<std::vector<std::string>> cues;  // per label, empty = no cue
        std::vector<std::size_t> counts;
    };
    const std::vector<TaskPlan> plans{
        {{"d1", {"hateful", "abusive", "neutral"}}, {cues_hate, cues_abuse, {}}, {60, 50, 130}},
        {{"d2", {"sexism", "neutral"}}, {cues_hate, {}}, {55, 105}},
    };

    nlohmann::json manifest;
    manifest["tasks"] = nlohmann::json::array();
    nlohmann::json datasets = nlohmann::json::array();
    for (const auto& plan : plans) {
        manifest["tasks"].push_back({{"id", plan.task.id}, {"labels", plan.task.label_set}});
        Dataset ds;
        ds.task = plan.task;
        const std::size_t n_users = 40;
        std::vector<std::size_t> user_class(n_users);
        for (std::size_t u = 0; u < n_users; ++u) {
            UserRecord rec;
            rec.user_id = plan.task.id + "_user" + std::to_string(u);
            user_class[u] = u % plan.task.label_set.size();
            const auto& cues = plan.cues[user_class[u]];
            if (u % 10 != 9) {  // every tenth user stays cold
                for (std::size_t k = 0; k < 12; ++k) {
                    std::vector<std::string> inserts{pick(rng, moods)};
                    if (!cues.empty() && k % 3 == 0) inserts.push_back(pick(rng, cues));
                    rec.history.push_back(sentence(rng, filler, 6, inserts));
                }
            }
            const std::string hub = "hub" + std::to_string(user_class[u]);
            for (std::size_t k = 0; k < 4; ++k) rec.following.insert(hub + "_" + std::to_string(rng.below(6)));
            rec.followers.insert("fan" + std::to_string(rng.below(30)));
            rec.hashtags["#" + plan.task.label_set[user_class[u]]] += 1 + rng.below(3);
            rec.mentioned["@" + hub] += 1;
            rec.interests.insert("topic" + std::to_string(user_class[u]));
            rec.profile_text = sentence(rng, filler, 5, {plan.task.label_set[user_class[u]]});
            ds.users[rec.user_id] = rec;
        }
        std::size_t i = 0;
        for (std::size_t label = 0; label < plan.counts.size(); ++label) {
            // Authors mostly share the class of their posts.
            std::vector<std::size_t> authors;
            for (std::size_t u = 0; u < n_users; ++u) {
                if (user_class[u] == label) authors.push_back(u);
            }
            for (std::size_t k = 0; k < plan.counts[label]; ++k, ++i) {
                std::vector<std::string> inserts{pick(rng, moods)};
                if (!plan.cues[label].empty()) inserts.push_back(pick(rng, plan.cues[label]));
                if (rng.uniform() < 0.2) inserts.push_back("#" + plan.task.label_set[label]);
                std::string text = sentence(rng, filler, 5 + rng.below(4), inserts);
                if (rng.uniform() < 0.1) text += " :)";
                if (rng.uniform() < 0.1) text = "WOW " + text;
                const std::size_t author =
                    rng.uniform() < 0.85 ? authors[rng.below(authors.size())] : rng.below(n_users);
                ds.records.push_back({plan.task.id + "-" + std::to_string(5000 + i), plan.task.id, text,
                                      plan.task.label_set[label], plan.task.id + "_user" + std::to_string(author)});
            }
        }
        Rng order(derive_seed(seed, "fixture/workspace-order/" + plan.task.id));
        order.shuffle(ds.records);
        write_corpus(dir / "data" / (plan.task.id + ".jsonl"), ds);
        write_users(dir / "data" / (plan.task.id + "_users.jsonl"), ds.users);
        datasets.push_back({{"task", plan.task.id},
                            {"corpus", "data/" + plan.task.id + ".jsonl"},
                            {"users", "data/" + plan.task.id + "_users.jsonl"}});
    }
    std::ofstream(dir / "tasks.json") << manifest.dump(2) << '\n';
    fs::copy_file(lexicon, dir / "lexicon.tsv", fs::copy_options::overwrite_existing);

    nlohmann::ordered_json config;
    config["task_manifest"] = "tasks.json";
    config["datasets"] = datasets;
    config["output_dir"] = "out";
    config["seed"] = 7;
    config["features"] = {{"lexicon", "lexicon.tsv"}, {"max_features", 2000}, {"history_window", 50}};
    config["encoder"] = {{"kind", "cnn"},
                         {"max_length", 24},
                         {"embedding_dim", 24},
                         {"cnn", {{"num_filters", 24}, {"kernel_widths", {1, 2, 3}}}},
                         {"output_dim", 24}};
    config["training"] = {{"learning_rate", 0.005}, {"batch_size", 32}, {"epochs", 6}, {"runs", 2}};
    config["evaluation"] = {{"folds", 3},
                            {"val_fraction", 0.15},
                            {"hateful_labels", {{"d1", {"hateful", "abusive"}}, {"d2", {"sexism"}}}}};
    std::ofstream(dir / "workspace.json") << config.dump(2) << '\n';
}

}  // namespace hatemtl::fixtures
