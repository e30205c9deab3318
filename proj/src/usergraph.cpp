#include "hatemtl/usergraph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <stdexcept>

#include <json.hpp>

namespace hatemtl {

namespace {

template <typename SetA, typename SetB>
double jaccard_keys(const SetA& a, const SetB& b) {
    // Both inputs are ordered by key (std::set or std::map).
    std::size_t inter = 0;
    auto ia = a.begin();
    auto ib = b.begin();
    auto key = [](const auto& x) -> const std::string& {
        if constexpr (std::is_same_v<std::decay_t<decltype(x)>, std::string>) {
            return x;
        } else {
            return x.first;
        }
    };
    while (ia != a.end() && ib != b.end()) {
        const auto& ka = key(*ia);
        const auto& kb = key(*ib);
        if (ka < kb) {
            ++ia;
        } else if (kb < ka) {
            ++ib;
        } else {
            ++inter;
            ++ia;
            ++ib;
        }
    }
    const std::size_t uni = a.size() + b.size() - inter;
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::size_t count_of(const Multiset& m, const std::string& key) {
    auto it = m.find(key);
    return it == m.end() ? 0 : it->second;
}

double affinity(std::size_t u_to_v, std::size_t v_to_u, std::size_t total_u, std::size_t total_v) {
    const std::size_t denom = total_u + total_v;
    if (denom == 0) return 0.0;
    return static_cast<double>(u_to_v + v_to_u) / static_cast<double>(denom);
}

std::size_t favourites_authored_by(const Multiset& favourites, const std::string& author,
                                   const SimilarityContext& ctx) {
    std::size_t n = 0;
    for (const auto& [tweet, count] : favourites) {
        if (ctx.author_of(tweet) == author) n += count;
    }
    return n;
}

SparseVector profile_tfidf(const UserRecord& u, const NGramVocabulary& vocab) {
    return tfidf_vector(normalize_tokens(u.profile_text), vocab);
}

}  // namespace

std::array<double, SimilarityFeatures::kCount> SimilarityFeatures::as_array() const {
    return {follow_overlap,  mention_affinity, retweet_affinity,  favourite_affinity,
            hashtag_overlap, interest_overlap, profile_similarity};
}

SimilarityFeatures SimilarityFeatures::from_array(const std::array<double, kCount>& a) {
    return {a[0], a[1], a[2], a[3], a[4], a[5], a[6]};
}

SimilarityContext SimilarityContext::from_users(
    const std::vector<const UserRecord*>& users,
    std::unordered_map<std::string, std::string> tweet_author) {
    SimilarityContext ctx;
    ctx.tweet_author_ = std::move(tweet_author);
    std::vector<std::vector<std::string>> docs;
    docs.reserve(users.size());
    for (const UserRecord* u : users) docs.push_back(normalize_tokens(u->profile_text));
    if (!docs.empty()) ctx.profile_vocab_ = build_ngram_vocab(docs);
    for (const UserRecord* u : users) {
        ctx.profile_vectors_.emplace(u->user_id, profile_tfidf(*u, ctx.profile_vocab_));
    }
    return ctx;
}

SimilarityContext SimilarityContext::from_dataset(const Dataset& ds) {
    std::vector<const UserRecord*> users;
    users.reserve(ds.users.size());
    for (const auto& [id, u] : ds.users) users.push_back(&u);
    std::unordered_map<std::string, std::string> authors;
    for (const auto& r : ds.records) authors.emplace(r.tweet_id, r.user_id);
    return from_users(users, std::move(authors));
}

const std::string& SimilarityContext::author_of(const std::string& tweet_id) const {
    static const std::string kUnknown;
    auto it = tweet_author_.find(tweet_id);
    return it == tweet_author_.end() ? kUnknown : it->second;
}

SparseVector SimilarityContext::profile_vector(const UserRecord& u) const {
    auto it = profile_vectors_.find(u.user_id);
    if (it != profile_vectors_.end()) return it->second;
    return profile_tfidf(u, profile_vocab_);
}

SimilarityFeatures similarity_features(const UserRecord& u, const UserRecord& v,
                                       const SimilarityContext& ctx) {
    SimilarityFeatures f;

    std::set<std::string> net_u(u.following.begin(), u.following.end());
    net_u.insert(u.followers.begin(), u.followers.end());
    std::set<std::string> net_v(v.following.begin(), v.following.end());
    net_v.insert(v.followers.begin(), v.followers.end());
    f.follow_overlap = jaccard_keys(net_u, net_v);

    f.mention_affinity = affinity(count_of(u.mentioned, v.user_id), count_of(v.mentioned, u.user_id),
                                  multiset_size(u.mentioned), multiset_size(v.mentioned));
    f.retweet_affinity = affinity(count_of(u.retweeted, v.user_id), count_of(v.retweeted, u.user_id),
                                  multiset_size(u.retweeted), multiset_size(v.retweeted));
    f.favourite_affinity = affinity(favourites_authored_by(u.favourited, v.user_id, ctx),
                                    favourites_authored_by(v.favourited, u.user_id, ctx),
                                    multiset_size(u.favourited), multiset_size(v.favourited));

    f.hashtag_overlap = jaccard_keys(u.hashtags, v.hashtags);
    f.interest_overlap = jaccard_keys(u.interests, v.interests);

    const SparseVector pu = ctx.profile_vector(u);
    const SparseVector pv = ctx.profile_vector(v);
    if (!pu.empty() && !pv.empty()) {
        f.profile_similarity = std::clamp(sparse_dot(pu, pv), 0.0, 1.0);
    }
    return f;
}

SimilarityFeatures similarity_features(const UserRecord& u, const UserRecord& v) {
    return similarity_features(u, v, SimilarityContext::from_users({&u, &v}));
}

SimilarityScore tsim_score(const SimilarityFeatures& f, const SimilarityWeights& weights) {
    double total = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0)) throw std::invalid_argument("tsim_score: weights must be non-negative");
        total += w;
    }
    if (std::abs(total - 1.0) > 1e-9) {
        throw std::invalid_argument("tsim_score: weights must sum to 1");
    }
    const auto c = f.as_array();
    double value = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) value += weights[i] * c[i];
    return {std::clamp(value, 0.0, 1.0), f};
}

NeighborSelection top_k_similar(const UserRecord& target, const std::vector<const UserRecord*>& pool,
                                std::size_t k, const SimilarityWeights& weights,
                                const SimilarityContext& context) {
    if (k == 0) throw std::invalid_argument("top_k_similar: k must be >= 1");
    NeighborSelection sel;
    sel.target_user = target.user_id;
    std::set<std::string> seen;
    for (const UserRecord* u : pool) {
        if (u->user_id == target.user_id || !seen.insert(u->user_id).second) continue;
        sel.neighbors.emplace_back(u->user_id,
                                   tsim_score(similarity_features(target, *u, context), weights));
    }
    auto better = [](const auto& a, const auto& b) {
        if (a.second.value != b.second.value) return a.second.value > b.second.value;
        return a.first < b.first;
    };
    const std::size_t keep = std::min(k, sel.neighbors.size());
    std::partial_sort(sel.neighbors.begin(), sel.neighbors.begin() + static_cast<std::ptrdiff_t>(keep),
                      sel.neighbors.end(), better);
    sel.neighbors.resize(keep);
    return sel;
}

NeighborSelection top_k_similar(const UserRecord& target, const std::vector<const UserRecord*>& pool,
                                std::size_t k, const SimilarityWeights& weights) {
    std::vector<const UserRecord*> all = pool;
    all.push_back(&target);
    // Sorted so the profile vocabulary does not depend on pool order.
    std::sort(all.begin(), all.end(),
              [](const UserRecord* a, const UserRecord* b) { return a->user_id < b->user_id; });
    all.erase(std::unique(all.begin(), all.end(),
                          [](const UserRecord* a, const UserRecord* b) {
                              return a->user_id == b->user_id;
                          }),
              all.end());
    return top_k_similar(target, pool, k, weights, SimilarityContext::from_users(all));
}

double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    const double na = a.norm();
    const double nb = b.norm();
    if (na == 0.0 || nb == 0.0) return 0.0;
    return a.dot(b) / (na * nb);
}

std::vector<std::string> select_inter_tweets(const std::string& target_text,
                                             const NeighborSelection& neighbors,
                                             const UserMap& users, const TextEmbedder& embed,
                                             std::size_t per_user) {
    std::vector<std::string> out;
    if (per_user == 0) return out;
    bool have_target = false;
    Eigen::VectorXd target;
    for (const auto& [user_id, score] : neighbors.neighbors) {
        auto it = users.find(user_id);
        if (it == users.end() || it->second.history.empty()) continue;
        if (!have_target) {
            target = embed(target_text);
            have_target = true;
        }
        const auto& history = it->second.history;
        std::vector<double> sims(history.size());
        for (std::size_t i = 0; i < history.size(); ++i) {
            sims[i] = history[i] == target_text ? 1.0 : cosine_similarity(embed(history[i]), target);
        }
        std::vector<std::size_t> order(history.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return sims[a] > sims[b]; });
        const std::size_t take = std::min(per_user, order.size());
        for (std::size_t i = 0; i < take; ++i) out.push_back(history[order[i]]);
    }
    return out;
}

void write_neighbor_selections(const std::filesystem::path& path,
                               const std::vector<NeighborSelection>& selections) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    static const char* kNames[] = {"follow_overlap",    "mention_affinity", "retweet_affinity",
                                   "favourite_affinity", "hashtag_overlap", "interest_overlap",
                                   "profile_similarity"};
    for (const auto& sel : selections) {
        nlohmann::ordered_json obj;
        obj["target_user"] = sel.target_user;
        auto& arr = obj["neighbors"] = nlohmann::ordered_json::array();
        for (const auto& [id, score] : sel.neighbors) {
            nlohmann::ordered_json n;
            n["user_id"] = id;
            n["score"] = score.value;
            const auto c = score.components.as_array();
            auto& comps = n["components"] = nlohmann::ordered_json::object();
            for (std::size_t i = 0; i < c.size(); ++i) comps[kNames[i]] = c[i];
            arr.push_back(std::move(n));
        }
        out << obj.dump() << '\n';
    }
}

std::vector<NeighborSelection> read_neighbor_selections(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    static const char* kNames[] = {"follow_overlap",    "mention_affinity", "retweet_affinity",
                                   "favourite_affinity", "hashtag_overlap", "interest_overlap",
                                   "profile_similarity"};
    std::vector<NeighborSelection> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto obj = nlohmann::json::parse(line);
        NeighborSelection sel;
        sel.target_user = obj.at("target_user").get<std::string>();
        for (const auto& n : obj.at("neighbors")) {
            SimilarityScore s;
            s.value = n.at("score").get<double>();
            std::array<double, SimilarityFeatures::kCount> c{};
            for (std::size_t i = 0; i < c.size(); ++i) c[i] = n.at("components").at(kNames[i]).get<double>();
            s.components = SimilarityFeatures::from_array(c);
            sel.neighbors.emplace_back(n.at("user_id").get<std::string>(), s);
        }
        out.push_back(std::move(sel));
    }
    return out;
}

}  // namespace hatemtl
