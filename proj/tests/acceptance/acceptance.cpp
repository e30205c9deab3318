// Acceptance checks: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "hatemtl/corpus.hpp"
#include "hatemtl/eval.hpp"
#include "hatemtl/fusion.hpp"
#include "hatemtl/mtl.hpp"
#include "hatemtl/rng.hpp"
#include "hatemtl/textfeat.hpp"
#include "hatemtl/usergraph.hpp"
#include "hatemtl/workspace.hpp"

using namespace hatemtl;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

/// Collects the first few failure messages of one criterion.
class Checker {
public:
    void expect(bool ok, const std::string& what) {
        if (ok) return;
        ++failures_;
        if (failures_ <= 3) notes_ += (notes_.empty() ? "" : "; ") + what;
    }
    Outcome outcome(const std::string& summary) const {
        if (failures_ == 0) return {true, summary};
        return {false, std::to_string(failures_) + " failure(s): " + notes_ + " | " + summary};
    }

private:
    std::size_t failures_ = 0;
    std::string notes_;
};

std::string fmt(double v, int precision = 4) {
    std::ostringstream s;
    s.precision(precision);
    s << std::fixed << v;
    return s.str();
}

std::string sci(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2e", v);
    return buf;
}

// ---------------------------------------------------------------------------
// 1. Metric oracle

struct MetricCase {
    std::vector<std::vector<std::size_t>> counts;
    std::vector<double> precision;
    std::vector<double> recall;
    std::vector<double> f1;
    double macro;
    double weighted;
};

// Expected values from exact rational arithmetic, frozen.
const std::vector<MetricCase> kMetricCases{
    {{{8, 2}, {0, 10}}, {1.0, 0.8333333333333334}, {0.8, 1.0}, {0.8888888888888888, 0.9090909090909091}, 0.898989898989899, 0.898989898989899},
    {{{5, 0, 0}, {0, 5, 0}, {0, 0, 0}}, {1.0, 1.0, 0.0}, {1.0, 1.0, 0.0}, {1.0, 1.0, 0.0}, 0.6666666666666666, 1.0},
    {{{3, 1}, {2, 4}}, {0.6, 0.8}, {0.75, 0.6666666666666666}, {0.6666666666666666, 0.7272727272727273}, 0.696969696969697, 0.703030303030303},
    {{{0, 4}, {0, 6}}, {0.0, 0.6}, {0.0, 1.0}, {0.0, 0.75}, 0.375, 0.45},
    {{{10, 0, 0}, {3, 2, 5}, {1, 1, 8}}, {0.7142857142857143, 0.6666666666666666, 0.6153846153846154}, {1.0, 0.2, 0.8}, {0.8333333333333334, 0.3076923076923077, 0.6956521739130435}, 0.6122259383128948, 0.6122259383128948},
    {{{1, 0, 0, 0}, {0, 2, 1, 0}, {0, 3, 0, 4}, {2, 0, 0, 7}}, {0.3333333333333333, 0.4, 0.0, 0.6363636363636364}, {1.0, 0.6666666666666666, 0.0, 0.7777777777777778}, {0.5, 0.5, 0.0, 0.7}, 0.425, 0.415},
    {{{50, 7, 3}, {12, 40, 8}, {0, 9, 71}}, {0.8064516129032258, 0.7142857142857143, 0.8658536585365854}, {0.8333333333333334, 0.6666666666666666, 0.8875}, {0.819672131147541, 0.6896551724137931, 0.8765432098765432}, 0.7952901711459591, 0.8034154750190176},
    {{{0, 0}, {0, 0}}, {0.0, 0.0}, {0.0, 0.0}, {0.0, 0.0}, 0.0, 0.0},
    {{{7, 0, 0}, {0, 0, 0}, {4, 0, 9}}, {0.6363636363636364, 0.0, 1.0}, {1.0, 0.0, 0.6923076923076923}, {0.7777777777777778, 0.0, 0.8181818181818182}, 0.531986531986532, 0.804040404040404},
    {{{2, 3, 4, 1, 0}, {0, 6, 1, 0, 2}, {3, 0, 5, 0, 0}, {1, 1, 1, 9, 0}, {0, 0, 0, 2, 4}}, {0.3333333333333333, 0.6, 0.45454545454545453, 0.75, 0.6666666666666666}, {0.2, 0.6666666666666666, 0.625, 0.75, 0.6666666666666666}, {0.25, 0.631578947368421, 0.5263157894736842, 0.75, 0.6666666666666666}, 0.5649122807017544, 0.564327485380117},
};

Outcome metric_oracle() {
    Checker c;
    const double tol = 1e-9;
    double worst = 0.0;
    for (std::size_t k = 0; k < kMetricCases.size(); ++k) {
        const auto& mc = kMetricCases[k];
        std::vector<std::string> labels;
        for (std::size_t i = 0; i < mc.counts.size(); ++i) labels.push_back("l" + std::to_string(i));
        ConfusionMatrix cm(labels);
        cm.counts = mc.counts;
        const auto m = macro_weighted_f1(cm);
        auto cmp = [&](double got, double want, const std::string& what) {
            worst = std::max(worst, std::abs(got - want));
            c.expect(std::abs(got - want) <= tol, "matrix " + std::to_string(k) + " " + what);
        };
        for (std::size_t i = 0; i < labels.size(); ++i) {
            cmp(m.per_class[i].precision, mc.precision[i], "precision");
            cmp(m.per_class[i].recall, mc.recall[i], "recall");
            cmp(m.per_class[i].f1, mc.f1[i], "f1");
        }
        cmp(m.macro_f1, mc.macro, "macro");
        cmp(m.weighted_f1, mc.weighted, "weighted");
    }
    const std::vector<std::string> gold{"a", "b", "c", "a", "c", "c"};
    const auto perfect = macro_weighted_f1(confusion(gold, gold, {"a", "b", "c"}));
    c.expect(perfect.macro_f1 == 1.0 && perfect.weighted_f1 == 1.0, "perfect classifier is not exactly 1.0");
    return c.outcome("10 matrices, max |diff| " + sci(worst) + ", perfect = 1.0");
}

// ---------------------------------------------------------------------------
// 2. Gradient check

Outcome gradient_correctness() {
    Checker c;
    std::string summary;
    for (EncoderKind kind : {EncoderKind::transformer, EncoderKind::cnn, EncoderKind::gru}) {
        EncoderConfig cfg;  // defaults: 2 layers x 2 heads x 64, 100 filters widths 1-4, GRU 100
        // eps 1e-6: wider steps cross ReLU kinks of the 256-wide transformer FFN.
        cfg.kind = kind;
        const auto setup = fixtures::gradient_setup(cfg, 4, 31);
        const auto report = fixtures::gradient_check(setup.batch, setup.params, setup.config, setup.head, 40, 77, 1e-6);
        const double worst = std::max(report.max_relative_error, report.directional_relative_error);
        c.expect(report.max_relative_error < 1e-3, to_string(kind) + " worst " + report.worst + " " +
                                                       sci(report.max_relative_error));
        c.expect(report.directional_relative_error < 1e-3, to_string(kind) + " directional " +
                                                               sci(report.directional_relative_error));
        summary += (summary.empty() ? "" : ", ") + to_string(kind) + " " + sci(worst) + " over " +
                   std::to_string(report.coordinates) + " coords";
    }
    return c.outcome(summary);
}

// ---------------------------------------------------------------------------
// 3. TF-IDF brute force

Outcome tfidf_bruteforce() {
    Checker c;
    Rng rng(303);
    const auto words = fixtures::make_words(60, 303, "w");
    std::vector<std::vector<std::string>> docs;
    for (int d = 0; d < 100; ++d) {
        std::string text;
        const std::size_t n = 3 + rng.below(12);
        for (std::size_t k = 0; k < n; ++k) text += words[rng.below(words.size())] + (rng.below(5) == 0 ? "! " : " ");
        if (rng.below(4) == 0) text += "#tag" + std::to_string(rng.below(3));
        docs.push_back(normalize_tokens(text));
    }
    const std::size_t cap = 400;
    const NGramVocabulary vocab = build_ngram_vocab(docs, cap);

    // Independent n-grams, document frequencies and vocabulary ranking.
    auto grams_of = [](const std::vector<std::string>& t) {
        std::vector<std::string> g;
        for (std::size_t n = 1; n <= 3; ++n) {
            for (std::size_t i = 0; i + n <= t.size(); ++i) {
                std::string s = t[i];
                for (std::size_t j = 1; j < n; ++j) s += " " + t[i + j];
                g.push_back(s);
            }
        }
        return g;
    };
    std::map<std::string, std::size_t> df;
    for (const auto& d : docs) {
        const auto g = grams_of(d);
        for (const auto& s : std::set<std::string>(g.begin(), g.end())) ++df[s];
    }
    std::vector<std::pair<std::size_t, std::string>> ranked;
    for (const auto& [s, n] : df) ranked.emplace_back(n, s);
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    ranked.resize(std::min(cap, ranked.size()));
    c.expect(vocab.size() == ranked.size(), "vocabulary size");
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < ranked.size(); ++i) {
        index[ranked[i].second] = i;
        c.expect(i < vocab.size() && vocab.terms()[i] == ranked[i].second, "vocabulary order at " + std::to_string(i));
    }

    const double n_docs = static_cast<double>(docs.size());
    double worst = 0.0;
    for (std::size_t d = 0; d < docs.size(); ++d) {
        std::map<std::size_t, double> tf;
        for (const auto& s : grams_of(docs[d])) {
            auto it = index.find(s);
            if (it != index.end()) tf[it->second] += 1.0;
        }
        std::map<std::size_t, double> expect;
        double norm = 0.0;
        for (const auto& [i, n] : tf) {
            const double w = n * (std::log((1.0 + n_docs) / (1.0 + static_cast<double>(df[ranked[i].second]))) + 1.0);
            expect[i] = w;
            norm += w * w;
        }
        norm = std::sqrt(norm);
        const SparseVector got = tfidf_vector(docs[d], vocab);
        c.expect(got.size() == expect.size(), "doc " + std::to_string(d) + " entry count");
        for (const auto& [i, v] : got) {
            const double want = expect.count(i) ? expect[i] / norm : 0.0;
            worst = std::max(worst, std::abs(v - want));
            c.expect(std::abs(v - want) <= 1e-9, "doc " + std::to_string(d) + " index " + std::to_string(i));
        }
    }
    return c.outcome("100 documents, " + std::to_string(vocab.size()) + " terms, max |diff| " + sci(worst));
}

// ---------------------------------------------------------------------------
// 4. Splitter invariants

Outcome splitter_invariants() {
    Checker c;
    Rng rng(404);
    std::size_t smallest = 1000;
    std::size_t largest = 0;
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = trial == 0 ? 25 : trial == 1 ? 500 : 25 + rng.below(476);
        smallest = std::min(smallest, n);
        largest = std::max(largest, n);
        const std::size_t k = 2 + rng.below(3);
        Dataset ds;
        ds.task.id = "s";
        for (std::size_t l = 0; l < k; ++l) ds.task.label_set.push_back("c" + std::to_string(l));
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t label = rng.uniform() < 0.5 ? 0 : rng.below(k);
            ds.records.push_back({"r" + std::to_string(i), "s", "text", ds.task.label_set[label], "u"});
        }
        ds.users["u"].user_id = "u";
        ds.reindex();
        const std::uint64_t seed = rng.next();
        const auto folds = kfold_split(ds, 5, 0.15, seed);
        const auto again = kfold_split(ds, 5, 0.15, seed);
        const std::string tag = "dataset " + std::to_string(trial) + " (n=" + std::to_string(n) + ")";
        c.expect(folds.size() == 5, tag + " fold count");
        std::multiset<std::string> tested;
        for (std::size_t f = 0; f < folds.size(); ++f) {
            const auto& fs = folds[f];
            std::set<std::string> seen;
            bool disjoint = true;
            for (const auto* part : {&fs.train_ids, &fs.val_ids, &fs.test_ids}) {
                for (const auto& id : *part) disjoint = seen.insert(id).second && disjoint;
            }
            c.expect(disjoint, tag + " parts overlap");
            c.expect(seen.size() == n, tag + " fold does not cover every record");
            tested.insert(fs.test_ids.begin(), fs.test_ids.end());
            const double pool = static_cast<double>(fs.train_ids.size() + fs.val_ids.size());
            c.expect(std::abs(static_cast<double>(fs.val_ids.size()) - 0.15 * pool) <= 1.0, tag + " val ratio");
            c.expect(fs.train_ids == again[f].train_ids && fs.val_ids == again[f].val_ids &&
                         fs.test_ids == again[f].test_ids,
                     tag + " not deterministic");
        }
        bool once = tested.size() == n;
        for (const auto& r : ds.records) once = once && tested.count(r.tweet_id) == 1;
        c.expect(once, tag + " test folds are not an exact partition");
    }
    return c.outcome("50 datasets, sizes " + std::to_string(smallest) + "-" + std::to_string(largest));
}

// ---------------------------------------------------------------------------
// 5. Transfer fidelity

Outcome transfer_fidelity() {
    Checker c;
    const auto fx = fixtures::shared_vocabulary(55, 60);
    std::vector<TaskSplit> tasks;
    for (const auto* h : {&fx.wide, &fx.narrow}) {
        TaskSplit s;
        s.dataset = &h->ds;
        s.train_ids = h->train_ids;
        tasks.push_back(s);
    }
    std::size_t compared = 0;
    fixtures::TempDir dir;
    for (EncoderKind kind : {EncoderKind::transformer, EncoderKind::cnn, EncoderKind::gru}) {
        EncoderConfig enc;
        enc.kind = kind;
        enc.max_length = 16;
        enc.embedding_dim = 16;
        enc.transformer.heads = 2;
        enc.transformer.layers = 1;
        enc.cnn.num_filters = 8;
        enc.gru.hidden_nodes = 12;
        enc.output_dim = 16;
        TrainingConfig t;
        t.learning_rate = 0.01;
        t.batch_size = 16;
        t.epochs = 1;
        t.seed = 9;
        const auto r = train_mtl(tasks, enc, t);
        const SharedEncoder shared = transfer_shared(r.model);
        const fs::path ck = dir / (to_string(kind) + ".ckpt");
        save_checkpoint(ck, r.model.to_checkpoint(9));
        const MTLModel loaded = MTLModel::from_checkpoint(load_checkpoint(ck));
        const SharedEncoder reloaded = transfer_shared(loaded);
        for (const auto& rec : fx.narrow.ds.records) {
            const Eigen::VectorXd src = r.model.encode(rec.text);
            c.expect(shared.encode(rec.text) == src, to_string(kind) + " transfer differs on " + rec.tweet_id);
            c.expect(reloaded.encode(rec.text) == src, to_string(kind) + " reload differs on " + rec.tweet_id);
            ++compared;
        }
    }
    return c.outcome(std::to_string(compared) + " encodings bit-identical across 3 encoder kinds");
}

// ---------------------------------------------------------------------------
// 6. Directional MTL gain

EncoderConfig directional_encoder() {
    EncoderConfig enc;
    enc.kind = EncoderKind::cnn;
    enc.max_length = 16;
    enc.embedding_dim = 32;
    enc.cnn.num_filters = 16;
    enc.cnn.kernel_widths = {1, 2, 3};
    enc.output_dim = 32;
    return enc;
}

TrainingConfig directional_training(std::uint64_t seed, std::size_t epochs) {
    TrainingConfig t;
    t.learning_rate = 0.005;
    t.batch_size = 32;
    t.epochs = epochs;
    t.seed = seed;
    return t;
}

Outcome mtl_gain() {
    Checker c;
    const std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    double stl_sum = 0.0;
    double mtl_sum = 0.0;
    std::size_t wins = 0;
    std::string per_seed;
    for (std::uint64_t seed : seeds) {
        const auto fx = fixtures::shared_vocabulary(seed, 400);
        auto split_of = [](const fixtures::Holdout& h) {
            TaskSplit s;
            s.dataset = &h.ds;
            s.train_ids = h.train_ids;
            return s;
        };
        const TrainingConfig t = directional_training(seed, 6);
        const auto stl = train_stl(split_of(fx.narrow), directional_encoder(), t);
        const auto mtl = train_mtl({split_of(fx.wide), split_of(fx.narrow)}, directional_encoder(), t);
        const double s = evaluate_macro_f1(stl.model, fx.narrow.ds, fx.narrow.test_ids);
        const double m = evaluate_macro_f1(mtl.model, fx.narrow.ds, fx.narrow.test_ids);
        stl_sum += s;
        mtl_sum += m;
        wins += m >= s + 0.02 ? 1 : 0;
        per_seed += (per_seed.empty() ? "" : " ") + fmt(s, 3) + "->" + fmt(m, 3);
    }
    const double stl_mean = stl_sum / static_cast<double>(seeds.size());
    const double mtl_mean = mtl_sum / static_cast<double>(seeds.size());
    c.expect(mtl_mean >= stl_mean - 0.01, "mean MTL below STL - 0.01");
    c.expect(wins >= 3, "MTL >= STL + 0.02 in only " + std::to_string(wins) + " of 5 seeds");
    return c.outcome("narrow-task macro-F1 STL " + fmt(stl_mean) + " vs MTL " + fmt(mtl_mean) + ", wins " +
                     std::to_string(wins) + "/5 [" + per_seed + "]");
}

// ---------------------------------------------------------------------------
// 7 & 8. Fusion

struct FusionRun {
    double text_only = 0.0;
    double full = 0.0;
    double head_macro = 0.0;
    double head_weighted = 0.0;
    double none_macro = 0.0;
    double none_weighted = 0.0;
    double max_prob_diff = 0.0;
};

FusionRun fusion_run(std::uint64_t seed, const SentimentLexicon& lexicon) {
    const auto h = fixtures::user_signal(seed);
    TaskSplit split;
    split.dataset = &h.ds;
    split.train_ids = h.train_ids;
    const TrainingConfig t = directional_training(seed, 6);
    const TrainResult text = train_stl(split, directional_encoder(), t);
    const SharedEncoder shared = transfer_shared(text.model);
    const NGramVocabulary vocab = build_train_vocab(h.ds, h.train_ids, 2000);
    BundleBuilder builder(h.ds, shared, vocab, lexicon, BundleOptions{});
    auto positions = [&](const std::vector<std::string>& ids) {
        std::vector<std::size_t> out;
        for (const auto& id : ids) out.push_back(h.ds.index_of(id));
        return out;
    };
    const auto train_bundles = builder.build(positions(h.train_ids));
    const auto test_bundles = builder.build(positions(h.test_ids));
    std::vector<int> train_labels;
    std::vector<int> gold;
    std::vector<std::string> test_texts;
    for (const auto& id : h.train_ids) train_labels.push_back(static_cast<int>(h.ds.task.label_index(h.ds.records[h.ds.index_of(id)].label)));
    for (const auto& id : h.test_ids) {
        const auto& r = h.ds.records[h.ds.index_of(id)];
        gold.push_back(static_cast<int>(h.ds.task.label_index(r.label)));
        test_texts.push_back(r.text);
    }
    const TaskHead& head = text.model.head(h.ds.task.id);
    TrainingConfig ft = t;
    ft.epochs = 30;
    ft.learning_rate = 0.01;
    const auto none = train_fusion(train_bundles, train_labels, FeatureMask::none(), {}, head, ft);
    const auto all = train_fusion(train_bundles, train_labels, FeatureMask::all(), {}, head, ft);
    auto metrics = [&](const std::vector<int>& predicted) {
        return macro_weighted_f1(confusion(gold, predicted, h.ds.task.label_set));
    };
    FusionRun r;
    const auto head_m = metrics(text.model.predict(h.ds.task.id, test_texts));
    const auto none_m = metrics(predict_labels(none.model, test_bundles));
    r.text_only = none_m.macro_f1;
    r.full = metrics(predict_labels(all.model, test_bundles)).macro_f1;
    r.head_macro = head_m.macro_f1;
    r.head_weighted = head_m.weighted_f1;
    r.none_macro = none_m.macro_f1;
    r.none_weighted = none_m.weighted_f1;
    const ad::Matrix head_logits = text.model.logits(h.ds.task.id, test_texts);
    const ad::Matrix head_probs = ad::softmax(head_logits);
    for (std::size_t i = 0; i < test_bundles.size(); ++i) {
        const Eigen::VectorXd p = predict(none.model, test_bundles[i]).probabilities;
        const auto row = static_cast<Eigen::Index>(i);
        r.max_prob_diff = std::max(r.max_prob_diff, (p.transpose() - head_probs.row(row)).cwiseAbs().maxCoeff());
    }
    return r;
}

std::vector<FusionRun> g_fusion_runs;

Outcome fusion_gain(const SentimentLexicon& lexicon) {
    Checker c;
    double text = 0.0;
    double full = 0.0;
    std::string per_seed;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        g_fusion_runs.push_back(fusion_run(seed, lexicon));
        const auto& r = g_fusion_runs.back();
        text += r.text_only / 5.0;
        full += r.full / 5.0;
        per_seed += (per_seed.empty() ? "" : " ") + fmt(r.text_only, 3) + "->" + fmt(r.full, 3);
    }
    c.expect(full >= text + 0.02, "mean gain " + fmt(full - text) + " below 0.02");
    return c.outcome("text-only " + fmt(text) + " vs full mask " + fmt(full) + ", gain " + fmt(full - text) + " [" +
                     per_seed + "]");
}

Outcome fusion_reduction() {
    Checker c;
    double worst = 0.0;
    for (const auto& r : g_fusion_runs) {
        const double d = std::max(std::abs(r.head_macro - r.none_macro), std::abs(r.head_weighted - r.none_weighted));
        worst = std::max(worst, d);
        c.expect(d <= 1e-6, "metrics differ by " + sci(d));
        c.expect(r.max_prob_diff <= 1e-6, "probabilities differ by " + sci(r.max_prob_diff));
    }
    c.expect(!g_fusion_runs.empty(), "no fusion runs");
    double prob = 0.0;
    for (const auto& r : g_fusion_runs) prob = std::max(prob, r.max_prob_diff);
    return c.outcome(std::to_string(g_fusion_runs.size()) + " models, max metric diff " + sci(worst) +
                     ", max probability diff " + sci(prob));
}

// ---------------------------------------------------------------------------
// 9. Similarity properties

UserRecord random_user(Rng& rng, const std::string& id, std::size_t population) {
    UserRecord u;
    u.user_id = id;
    auto draw = [&](std::size_t max_n, const std::string& prefix, std::size_t range) {
        std::vector<std::string> out;
        const std::size_t n = rng.below(max_n + 1);
        for (std::size_t i = 0; i < n; ++i) out.push_back(prefix + std::to_string(rng.below(range)));
        return out;
    };
    for (auto& s : draw(6, "acct", 15)) u.following.insert(s);
    for (auto& s : draw(4, "acct", 15)) u.followers.insert(s);
    for (auto& s : draw(4, "p", population)) ++u.mentioned[s];
    for (auto& s : draw(3, "p", population)) ++u.retweeted[s];
    for (auto& s : draw(3, "tw", 40)) ++u.favourited[s];
    for (auto& s : draw(4, "#h", 8)) ++u.hashtags[s];
    for (auto& s : draw(2, "topic", 5)) u.interests.insert(s);
    static const std::vector<std::string> words{"music", "news", "sport", "cats", "politics", "games", "art", "food"};
    const std::size_t n = rng.below(5);
    for (std::size_t i = 0; i < n; ++i) u.profile_text += words[rng.below(words.size())] + " ";
    return u;
}

Outcome similarity_properties() {
    Checker c;
    Rng rng(909);
    std::size_t pairs = 0;
    for (int pool_index = 0; pool_index < 200; ++pool_index) {
        const std::size_t n = 4 + rng.below(30);
        std::vector<UserRecord> users;
        for (std::size_t i = 0; i < n; ++i) users.push_back(random_user(rng, "p" + std::to_string(i), n));
        std::unordered_map<std::string, std::string> authors;
        for (int t = 0; t < 40; ++t) authors.emplace("tw" + std::to_string(t), "p" + std::to_string(rng.below(n)));
        std::vector<const UserRecord*> pool;
        for (const auto& u : users) pool.push_back(&u);
        const auto ctx = SimilarityContext::from_users(pool, authors);
        SimilarityWeights w;
        double total = 0.0;
        for (auto& x : w) total += (x = 0.05 + rng.uniform());
        for (auto& x : w) x /= total;
        double sum = 0.0;
        for (std::size_t i = 0; i + 1 < w.size(); ++i) sum += w[i];
        w.back() = 1.0 - sum;

        const UserRecord& target = users[rng.below(n)];
        std::vector<std::pair<double, std::string>> brute;
        for (const auto& u : users) {
            const auto f = similarity_features(target, u, ctx);
            const auto g = similarity_features(u, target, ctx);
            c.expect(f == g, "asymmetric features");
            const double s = tsim_score(f, w).value;
            c.expect(s >= 0.0 && s <= 1.0, "score out of [0, 1]");
            c.expect(s == tsim_score(g, w).value, "asymmetric score");
            const auto base = f.as_array();
            for (std::size_t i = 0; i < base.size(); ++i) {
                c.expect(base[i] >= 0.0 && base[i] <= 1.0, "component out of [0, 1]");
                auto raised = base;
                raised[i] = std::min(1.0, raised[i] + rng.uniform());
                c.expect(tsim_score(SimilarityFeatures::from_array(raised), w).value >= s, "not monotone");
            }
            ++pairs;
            if (u.user_id != target.user_id) brute.emplace_back(-s, u.user_id);
        }
        std::sort(brute.begin(), brute.end());
        const auto sel = top_k_similar(target, pool, 3, w, ctx);
        const std::size_t k = std::min<std::size_t>(3, n - 1);
        c.expect(sel.neighbors.size() == k, "top-k size");
        for (std::size_t i = 0; i < std::min(k, sel.neighbors.size()); ++i) {
            c.expect(sel.neighbors[i].first == brute[i].second, "pool " + std::to_string(pool_index) + " rank " +
                                                                    std::to_string(i) + " differs from brute force");
        }
    }
    return c.outcome("200 pools, " + std::to_string(pairs) + " scored pairs");
}

// ---------------------------------------------------------------------------
// 10. History profiling

Outcome history_profiling() {
    Checker c;
    std::string summary;
    for (std::uint64_t seed : {10u, 11u, 12u}) {
        const auto p = fixtures::planted_history(seed);
        const auto profile = profile_history(fixtures::planted_classifier(), p.ds, p.window, p.hateful_labels);
        for (const auto& [label, mean] : p.expected) {
            const auto it = profile.groups.find(label);
            c.expect(it != profile.groups.end(), "missing group " + label);
            if (it == profile.groups.end()) continue;
            c.expect(it->second.mean_hateful == mean, "seed " + std::to_string(seed) + " " + label + ": " +
                                                          fmt(it->second.mean_hateful) + " vs planted " + fmt(mean));
            c.expect(it->second.users == p.expected_users.at(label), label + " user count");
        }
        if (seed == 10) {
            for (const auto& [label, mean] : p.expected) summary += (summary.empty() ? "" : ", ") + label + " " + fmt(mean, 2);
        }
    }
    return c.outcome("3 fixtures exact; planted means " + summary);
}

// ---------------------------------------------------------------------------
// 11. End-to-end

std::string type_name(const nlohmann::json& j) { return j.type_name(); }

/// Minimal structural schema: required keys with their JSON types.
void require_keys(Checker& c, const nlohmann::json& j, const std::string& where,
                  const std::vector<std::pair<std::string, nlohmann::json::value_t>>& keys) {
    for (const auto& [key, type] : keys) {
        if (!j.contains(key)) {
            c.expect(false, where + " lacks '" + key + "'");
            continue;
        }
        const auto t = j.at(key).type();
        const bool number = type == nlohmann::json::value_t::number_float &&
                            (t == nlohmann::json::value_t::number_integer ||
                             t == nlohmann::json::value_t::number_unsigned || t == nlohmann::json::value_t::number_float);
        const bool count = type == nlohmann::json::value_t::number_unsigned &&
                           (t == nlohmann::json::value_t::number_unsigned || t == nlohmann::json::value_t::number_integer);
        c.expect(t == type || number || count, where + "." + key + " has type " + type_name(j.at(key)));
    }
}

void check_metrics(Checker& c, const nlohmann::json& m, const std::string& where) {
    using vt = nlohmann::json::value_t;
    require_keys(c, m, where, {{"macro_f1", vt::number_float}, {"weighted_f1", vt::number_float},
                               {"per_class", vt::array}});
    if (m.contains("macro_f1") && m["macro_f1"].is_number()) {
        const double v = m["macro_f1"].get<double>();
        c.expect(v >= 0.0 && v <= 1.0, where + ".macro_f1 out of range");
    }
    if (m.contains("per_class") && m["per_class"].is_array()) {
        for (const auto& pc : m["per_class"]) {
            require_keys(c, pc, where + ".per_class[]", {{"label", vt::string}, {"precision", vt::number_float},
                                                         {"recall", vt::number_float}, {"f1", vt::number_float},
                                                         {"support", vt::number_unsigned}});
        }
    }
}

nlohmann::json read_json(Checker& c, const fs::path& p) {
    std::ifstream in(p);
    if (!in) {
        c.expect(false, "missing " + p.filename().string());
        return nlohmann::json::object();
    }
    try {
        return nlohmann::json::parse(in);
    } catch (const std::exception& ex) {
        c.expect(false, p.filename().string() + " is not JSON: " + ex.what());
        return nlohmann::json::object();
    }
}

Outcome end_to_end() {
    using vt = nlohmann::json::value_t;
    Checker c;
    fixtures::TempDir dir;
    const fs::path ws = dir / "workspace";
    fs::copy(HATEMTL_FIXTURE_WORKSPACE, ws, fs::copy_options::recursive);
    const fs::path out = dir / "out";
    const std::vector<std::vector<std::string>> steps{
        {"ingest"},
        {"train", "--mode", "mtl"},
        {"fuse", "--mask", "all"},
        {"evaluate", "--pipeline", "fusion", "--mask", "all"},
        {"report"},
    };
    std::vector<std::string> tasks;
    for (const auto& step : steps) {
        std::vector<std::string> args{"-c", (ws / "workspace.json").string(), "--out", out.string(), "--run-id", "e2e"};
        args.insert(args.end(), step.begin(), step.end());
        std::ostringstream so;
        std::ostringstream se;
        const int code = run_cli(args, so, se);
        c.expect(code == 0, step[0] + " exited " + std::to_string(code) + ": " + se.str());
        if (code != 0) return c.outcome("stopped at " + step[0]);
    }
    const fs::path run = out / "e2e";

    const auto ingest = read_json(c, run / "ingest.json");
    require_keys(c, ingest, "ingest.json", {{"tasks", vt::object}});
    const auto ingest_tasks = ingest.value("tasks", nlohmann::json::object());
    for (const auto& [task, t] : ingest_tasks.items()) {
        tasks.push_back(task);
        require_keys(c, t, "ingest.json/" + task, {{"records", vt::number_unsigned}, {"users", vt::number_unsigned},
                                                  {"distribution", vt::object}, {"skipped_lines", vt::array}});
    }
    c.expect(tasks.size() == 2, "expected two tasks in the fixture workspace");

    for (const auto& task : tasks) {
        const auto f = read_json(c, run / "fuse" / "all" / (task + ".json"));
        require_keys(c, f, "fuse/all/" + task, {{"task", vt::string}, {"mask", vt::string}, {"metrics", vt::object}});
        if (f.contains("metrics")) check_metrics(c, f["metrics"], "fuse/all/" + task + ".metrics");
        c.expect(fs::exists(run / "fuse" / "all" / (task + ".model.json")), "fusion model for " + task);
    }

    const auto agg = read_json(c, run / "evaluate" / "fusion-all" / "aggregate.json");
    require_keys(c, agg, "aggregate.json", {{"kind", vt::string}, {"pipeline", vt::string}, {"mask", vt::string},
                                            {"folds", vt::number_unsigned}, {"runs", vt::number_unsigned},
                                            {"tasks", vt::object}});
    const std::size_t jobs = agg.value("folds", 0u) * agg.value("runs", 0u);
    for (const auto& task : tasks) {
        const auto t = agg.value("tasks", nlohmann::json::object()).value(task, nlohmann::json::object());
        require_keys(c, t, "aggregate/" + task, {{"mean_macro_f1", vt::number_float}, {"std_macro_f1", vt::number_float},
                                                 {"mean_weighted_f1", vt::number_float},
                                                 {"std_weighted_f1", vt::number_float}, {"entries", vt::array}});
        c.expect(t.value("entries", nlohmann::json::array()).size() == jobs, "aggregate/" + task + " entry count");
        for (const auto& e : t.value("entries", nlohmann::json::array())) {
            require_keys(c, e, "aggregate/" + task + ".entries[]",
                         {{"run", vt::number_unsigned}, {"fold", vt::number_unsigned}, {"metrics", vt::object}});
            if (e.contains("metrics")) check_metrics(c, e["metrics"], "aggregate/" + task + ".entries[].metrics");
        }
    }

    const auto report = read_json(c, run / "report.json");
    require_keys(c, report, "report.json", {{"kind", vt::string}, {"config_hash", vt::string}, {"entries", vt::array},
                                            {"count", vt::number_unsigned}});
    c.expect(report.value("count", 0u) == report.value("entries", nlohmann::json::array()).size(), "report count");
    for (const auto& e : report.value("entries", nlohmann::json::array())) {
        require_keys(c, e, "report.entries[]", {{"path", vt::string}, {"kind", vt::string}, {"content", vt::object}});
    }

    const auto manifest = read_json(c, run / "manifest.json");
    require_keys(c, manifest, "manifest.json", {{"run_id", vt::string}, {"config_hash", vt::string},
                                                {"commands", vt::array}, {"files", vt::array}});
    c.expect(manifest.value("commands", nlohmann::json::array()).size() == steps.size(), "manifest command count");
    for (const auto& f : manifest.value("files", nlohmann::json::array())) {
        c.expect(fs::exists(run / f.get<std::string>()), "manifest lists missing file " + f.get<std::string>());
    }
    return c.outcome("ingest, train(mtl), fuse(all), evaluate(fusion-all, " + std::to_string(jobs) +
                     " jobs) and report exit 0; " + std::to_string(report.value("count", 0u)) + " report entries valid");
}

// ---------------------------------------------------------------------------

struct Criterion {
    int id;
    std::string name;
    double limit_seconds;  // 0: no runtime bound
    std::function<Outcome()> run;
};

}  // namespace

int main() {
    const SentimentLexicon lexicon = SentimentLexicon::load(HATEMTL_LEXICON);
    const std::vector<Criterion> criteria{
        {1, "metric oracle", 1.0, metric_oracle},
        {2, "gradient correctness", 120.0, gradient_correctness},
        {3, "tf-idf brute-force equivalence", 0.0, tfidf_bruteforce},
        {4, "splitter invariants", 0.0, splitter_invariants},
        {5, "mtl transfer fidelity", 0.0, transfer_fidelity},
        {6, "directional mtl gain", 600.0, mtl_gain},
        {7, "directional fusion gain", 600.0, [&] { return fusion_gain(lexicon); }},
        {8, "fusion reduction", 0.0, fusion_reduction},
        {9, "similarity properties", 0.0, similarity_properties},
        {10, "history profiling", 0.0, history_profiling},
        {11, "end-to-end smoke", 900.0, end_to_end},
    };
    int failed = 0;
    for (const auto& cr : criteria) {
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = cr.run();
        } catch (const std::exception& ex) {
            o = {false, std::string("exception: ") + ex.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (cr.limit_seconds > 0.0 && secs >= cr.limit_seconds) {
            o.pass = false;
            o.detail += " | runtime " + fmt(secs, 1) + " s exceeds " + fmt(cr.limit_seconds, 0) + " s";
        }
        failed += o.pass ? 0 : 1;
        std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << cr.id << " (" << cr.name << "): " << o.detail
                  << " [" << fmt(secs, 2) << " s]" << std::endl;
    }
    std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criterion(s) failed") << std::endl;
    return failed == 0 ? 0 : 1;
}
