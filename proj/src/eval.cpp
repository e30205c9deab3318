#include "hatemtl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <unordered_map>

#include "hatemtl/rng.hpp"

namespace hatemtl {

// ---------------------------------------------------------------------------
// Metrics

ConfusionMatrix::ConfusionMatrix(std::vector<std::string> label_set)
    : labels(std::move(label_set)), counts(labels.size(), std::vector<std::size_t>(labels.size(), 0)) {}

std::size_t ConfusionMatrix::total() const {
    std::size_t n = 0;
    for (const auto& row : counts) {
        for (std::size_t c : row) n += c;
    }
    return n;
}

ConfusionMatrix confusion(const std::vector<int>& gold, const std::vector<int>& predicted,
                          const std::vector<std::string>& label_set) {
    if (gold.size() != predicted.size()) {
        throw std::invalid_argument("confusion: " + std::to_string(gold.size()) + " gold labels vs " +
                                    std::to_string(predicted.size()) + " predictions");
    }
    ConfusionMatrix cm(label_set);
    const auto n = static_cast<int>(label_set.size());
    for (std::size_t i = 0; i < gold.size(); ++i) {
        if (gold[i] < 0 || gold[i] >= n || predicted[i] < 0 || predicted[i] >= n) {
            throw std::invalid_argument("confusion: label index out of range at position " + std::to_string(i));
        }
        ++cm.counts[static_cast<std::size_t>(gold[i])][static_cast<std::size_t>(predicted[i])];
    }
    return cm;
}

ConfusionMatrix confusion(const std::vector<std::string>& gold, const std::vector<std::string>& predicted,
                          const std::vector<std::string>& label_set) {
    if (gold.size() != predicted.size()) {
        throw std::invalid_argument("confusion: " + std::to_string(gold.size()) + " gold labels vs " +
                                    std::to_string(predicted.size()) + " predictions");
    }
    auto index = [&](const std::string& l) {
        auto it = std::find(label_set.begin(), label_set.end(), l);
        if (it == label_set.end()) throw std::invalid_argument("confusion: unknown label '" + l + "'");
        return static_cast<int>(it - label_set.begin());
    };
    std::vector<int> g, p;
    for (std::size_t i = 0; i < gold.size(); ++i) {
        g.push_back(index(gold[i]));
        p.push_back(index(predicted[i]));
    }
    return confusion(g, p, label_set);
}

MetricsReport macro_weighted_f1(const ConfusionMatrix& cm) {
    MetricsReport r;
    const std::size_t n = cm.labels.size();
    r.total = cm.total();
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t tp = cm.counts[c][c];
        std::size_t predicted = 0;
        std::size_t support = 0;
        for (std::size_t k = 0; k < n; ++k) {
            predicted += cm.counts[k][c];
            support += cm.counts[c][k];
        }
        ClassMetrics m;
        m.label = cm.labels[c];
        m.support = support;
        m.precision = predicted ? static_cast<double>(tp) / static_cast<double>(predicted) : 0.0;
        m.recall = support ? static_cast<double>(tp) / static_cast<double>(support) : 0.0;
        const double pr = m.precision + m.recall;
        m.f1 = pr > 0.0 ? 2.0 * m.precision * m.recall / pr : 0.0;
        r.per_class.push_back(m);
    }
    if (n > 0) {
        double sum = 0.0;
        double weighted = 0.0;
        for (const auto& m : r.per_class) {
            sum += m.f1;
            weighted += m.f1 * static_cast<double>(m.support);
        }
        r.macro_f1 = sum / static_cast<double>(n);
        r.weighted_f1 = r.total ? weighted / static_cast<double>(r.total) : 0.0;
    }
    return r;
}

double display_round(double value) { return std::round(value * 1e6) / 1e6; }

nlohmann::ordered_json MetricsReport::to_json() const {
    nlohmann::ordered_json j;
    j["macro_f1"] = display_round(macro_f1);
    j["weighted_f1"] = display_round(weighted_f1);
    j["total"] = total;
    auto& classes = j["per_class"] = nlohmann::ordered_json::array();
    nlohmann::ordered_json raw_list = nlohmann::ordered_json::array();
    for (const auto& m : per_class) {
        classes.push_back({{"label", m.label},
                           {"precision", display_round(m.precision)},
                           {"recall", display_round(m.recall)},
                           {"f1", display_round(m.f1)},
                           {"support", m.support}});
        raw_list.push_back({{"label", m.label}, {"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}});
    }
    j["raw"] = {{"macro_f1", macro_f1}, {"weighted_f1", weighted_f1}, {"per_class", raw_list}};
    return j;
}

MetricsReport MetricsReport::from_json(const nlohmann::json& j) {
    MetricsReport r;
    const auto& raw = j.at("raw");
    r.macro_f1 = raw.at("macro_f1").get<double>();
    r.weighted_f1 = raw.at("weighted_f1").get<double>();
    r.total = j.at("total").get<std::size_t>();
    const auto& shown = j.at("per_class");
    const auto& exact = raw.at("per_class");
    if (shown.size() != exact.size()) throw std::runtime_error("metrics report: per-class lists differ");
    for (std::size_t i = 0; i < shown.size(); ++i) {
        ClassMetrics m;
        m.label = shown[i].at("label").get<std::string>();
        m.support = shown[i].at("support").get<std::size_t>();
        m.precision = exact[i].at("precision").get<double>();
        m.recall = exact[i].at("recall").get<double>();
        m.f1 = exact[i].at("f1").get<double>();
        r.per_class.push_back(m);
    }
    return r;
}

// ---------------------------------------------------------------------------
// Aggregation

void RunAggregate::finalize() {
    auto stats = [&](auto field, double& mean, double& sd) {
        mean = 0.0;
        sd = 0.0;
        if (entries.empty()) return;
        const double n = static_cast<double>(entries.size());
        for (const auto& e : entries) mean += field(e.metrics);
        mean /= n;
        for (const auto& e : entries) {
            const double d = field(e.metrics) - mean;
            sd += d * d;
        }
        sd = std::sqrt(sd / n);
    };
    stats([](const MetricsReport& m) { return m.macro_f1; }, mean_macro_f1, std_macro_f1);
    stats([](const MetricsReport& m) { return m.weighted_f1; }, mean_weighted_f1, std_weighted_f1);
}

nlohmann::ordered_json RunAggregate::to_json() const {
    nlohmann::ordered_json j;
    j["task"] = task;
    j["evaluations"] = entries.size();
    j["mean_macro_f1"] = display_round(mean_macro_f1);
    j["std_macro_f1"] = display_round(std_macro_f1);
    j["mean_weighted_f1"] = display_round(mean_weighted_f1);
    j["std_weighted_f1"] = display_round(std_weighted_f1);
    j["raw"] = {{"mean_macro_f1", mean_macro_f1},
                {"std_macro_f1", std_macro_f1},
                {"mean_weighted_f1", mean_weighted_f1},
                {"std_weighted_f1", std_weighted_f1}};
    auto& list = j["entries"] = nlohmann::ordered_json::array();
    for (const auto& e : entries) {
        list.push_back({{"run", e.run}, {"fold", e.fold}, {"metrics", e.metrics.to_json()}});
    }
    return j;
}

RunAggregate RunAggregate::from_json(const nlohmann::json& j) {
    RunAggregate a;
    a.task = j.at("task").get<std::string>();
    for (const auto& e : j.at("entries")) {
        a.entries.push_back({e.at("run").get<std::size_t>(), e.at("fold").get<std::size_t>(),
                             MetricsReport::from_json(e.at("metrics"))});
    }
    a.finalize();
    return a;
}

TaskSplit FoldJob::task_split(std::size_t i) const { return TaskSplit::from_fold(*datasets.at(i), splits.at(i)); }

std::vector<TaskSplit> FoldJob::task_splits() const {
    std::vector<TaskSplit> out;
    for (std::size_t i = 0; i < datasets.size(); ++i) out.push_back(task_split(i));
    return out;
}

nlohmann::json JobResult::to_json() const {
    nlohmann::ordered_json j;
    j["run"] = key.run;
    j["fold"] = key.fold;
    auto& m = j["metrics"] = nlohmann::ordered_json::object();
    for (const auto& [task, report] : metrics) m[task] = report.to_json();
    auto& p = j["predictions"] = nlohmann::ordered_json::object();
    for (const auto& [task, rows] : predictions) {
        auto& list = p[task] = nlohmann::ordered_json::array();
        for (const auto& [id, gold, pred] : rows) list.push_back({id, gold, pred});
    }
    auto& ev = j["events"] = nlohmann::ordered_json::array();
    for (const auto& e : events) ev.push_back(e.to_json());
    return nlohmann::json::parse(j.dump());
}

JobResult JobResult::from_json(const nlohmann::json& j) {
    JobResult r;
    r.key = {j.at("run").get<std::size_t>(), j.at("fold").get<std::size_t>()};
    for (const auto& [task, report] : j.at("metrics").items()) r.metrics[task] = MetricsReport::from_json(report);
    for (const auto& [task, rows] : j.at("predictions").items()) {
        auto& list = r.predictions[task];
        for (const auto& row : rows) {
            list.emplace_back(row.at(0).get<std::string>(), row.at(1).get<std::string>(),
                              row.at(2).get<std::string>());
        }
    }
    for (const auto& e : j.at("events")) r.events.push_back(TrainingEvent::from_json(e));
    return r;
}

std::vector<std::vector<FoldSplit>> make_splits(const std::vector<const Dataset*>& datasets,
                                                const CVOptions& options) {
    std::vector<std::vector<FoldSplit>> out;
    for (const Dataset* ds : datasets) out.push_back(kfold_split(*ds, options.folds, options.val_fraction, options.seed));
    return out;
}

JobResult run_job(const Pipeline& pipeline, const std::vector<const Dataset*>& datasets,
                  const std::vector<std::vector<FoldSplit>>& splits, const CVOptions& options, std::size_t run,
                  std::size_t fold) {
    FoldJob job;
    job.key = {options.distinct_run_seeds ? run : 0, fold};
    job.seed = options.seed;
    job.datasets = datasets;
    for (const auto& s : splits) job.splits.push_back(s.at(fold));

    FoldPredictions preds = pipeline(job);
    JobResult r;
    r.key = {run, fold};
    r.events = std::move(preds.events);
    for (auto& e : r.events) e.run = run;
    for (std::size_t i = 0; i < datasets.size(); ++i) {
        const Dataset& ds = *datasets[i];
        const auto& test_ids = job.splits[i].test_ids;
        auto it = preds.labels.find(ds.task.id);
        if (it == preds.labels.end() || it->second.size() != test_ids.size()) {
            throw std::runtime_error("pipeline returned no predictions for task '" + ds.task.id + "'");
        }
        std::vector<int> gold;
        auto& rows = r.predictions[ds.task.id];
        const auto positions = record_indices(ds, test_ids);
        for (std::size_t k = 0; k < positions.size(); ++k) {
            const auto& rec = ds.records[positions[k]];
            gold.push_back(static_cast<int>(ds.task.label_index(rec.label)));
            rows.emplace_back(rec.tweet_id, rec.label, ds.task.label_set.at(static_cast<std::size_t>(it->second[k])));
        }
        r.metrics[ds.task.id] = macro_weighted_f1(confusion(gold, it->second, ds.task.label_set));
    }
    return r;
}

std::map<std::string, RunAggregate> aggregate(const std::vector<JobResult>& jobs) {
    std::map<std::string, RunAggregate> out;
    for (const auto& job : jobs) {
        for (const auto& [task, report] : job.metrics) {
            auto& a = out[task];
            a.task = task;
            a.entries.push_back({job.key.run, job.key.fold, report});
        }
    }
    for (auto& [task, a] : out) {
        std::sort(a.entries.begin(), a.entries.end(), [](const RunEntry& x, const RunEntry& y) {
            return std::pair(x.run, x.fold) < std::pair(y.run, y.fold);
        });
        a.finalize();
    }
    return out;
}

CVResult cross_validate(const Pipeline& pipeline, const std::vector<const Dataset*>& datasets,
                        const CVOptions& options) {
    if (datasets.empty()) throw std::invalid_argument("cross_validate: no datasets");
    if (options.runs == 0) throw std::invalid_argument("cross_validate: runs must be >= 1");
    const auto splits = make_splits(datasets, options);
    CVResult r;
    for (std::size_t run = 0; run < options.runs; ++run) {
        for (std::size_t fold = 0; fold < options.folds; ++fold) {
            r.jobs.push_back(run_job(pipeline, datasets, splits, options, run, fold));
        }
    }
    r.aggregates = aggregate(r.jobs);
    return r;
}

// ---------------------------------------------------------------------------
// Builtin pipelines

namespace {

std::vector<std::string> test_texts(const Dataset& ds, const std::vector<std::string>& ids) {
    std::vector<std::string> out;
    for (std::size_t i : record_indices(ds, ids)) out.push_back(ds.records[i].text);
    return out;
}

TrainingConfig seeded(TrainingConfig training, const FoldJob& job) {
    training.seed = job.seed;
    return training;
}

TrainResult train_joint(const FoldJob& job, const EncoderConfig& encoder, const TrainingConfig& training) {
    const auto tasks = job.task_splits();
    TrainResult r;
    r.model = init_model(tasks, encoder, training, job.key);
    r.history = train_model(r.model, tasks, training, job.key);
    return r;
}

}  // namespace

Pipeline stl_pipeline(const EncoderConfig& encoder, const TrainingConfig& training) {
    return [encoder, training](const FoldJob& job) {
        FoldPredictions out;
        const TrainingConfig tc = seeded(training, job);
        for (std::size_t i = 0; i < job.datasets.size(); ++i) {
            const Dataset& ds = *job.datasets[i];
            TrainResult r = train_stl(job.task_split(i), encoder, tc, job.key);
            out.labels[ds.task.id] = r.model.predict(ds.task.id, test_texts(ds, job.splits[i].test_ids));
            out.events.insert(out.events.end(), r.history.events.begin(), r.history.events.end());
        }
        return out;
    };
}

Pipeline mtl_pipeline(const EncoderConfig& encoder, const TrainingConfig& training) {
    return [encoder, training](const FoldJob& job) {
        FoldPredictions out;
        TrainResult r = train_joint(job, encoder, seeded(training, job));
        for (std::size_t i = 0; i < job.datasets.size(); ++i) {
            const Dataset& ds = *job.datasets[i];
            out.labels[ds.task.id] = r.model.predict(ds.task.id, test_texts(ds, job.splits[i].test_ids));
        }
        out.events = std::move(r.history.events);
        return out;
    };
}

Pipeline fusion_pipeline(const EncoderConfig& encoder, const TrainingConfig& training,
                         const FusionPipelineOptions& options) {
    return [encoder, training, options](const FoldJob& job) {
        static const SentimentLexicon kEmptyLexicon;
        const SentimentLexicon& lexicon = options.lexicon ? *options.lexicon : kEmptyLexicon;
        const TrainingConfig tc = seeded(training, job);
        FoldPredictions out;
        TrainResult r = train_joint(job, encoder, tc);
        const SharedEncoder shared = transfer_shared(r.model);
        EncoderParams frozen;
        if (options.bundles.frozen_history) {
            frozen = init_encoder_params(shared.config, derive_seed(tc.seed, "init", job.key.run, job.key.fold));
        }
        for (std::size_t i = 0; i < job.datasets.size(); ++i) {
            const Dataset& ds = *job.datasets[i];
            const FoldSplit& split = job.splits[i];
            const NGramVocabulary vocab = build_train_vocab(ds, split.train_ids, options.max_features);
            BundleBuilder builder(ds, shared, vocab, lexicon, options.bundles,
                                  options.bundles.frozen_history ? &frozen : nullptr);
            const auto train_pos = record_indices(ds, split.train_ids);
            const auto train = builder.build(train_pos);
            std::vector<int> labels;
            for (std::size_t p : train_pos) labels.push_back(static_cast<int>(ds.task.label_index(ds.records[p].label)));
            const FusionTrainResult fr =
                train_fusion(train, labels, options.mask, options.fusion, r.model.head(ds.task.id), tc, job.key);
            out.labels[ds.task.id] = predict_labels(fr.model, builder.build(record_indices(ds, split.test_ids)));
        }
        out.events = std::move(r.history.events);
        return out;
    };
}

// ---------------------------------------------------------------------------
// Error analysis and profiling

ErrorCases error_cases(const std::vector<std::string>& gold, const std::vector<std::string>& predicted,
                       const std::vector<std::string>& texts, const std::set<std::string>& positive_labels) {
    if (gold.size() != predicted.size() || gold.size() != texts.size()) {
        throw std::invalid_argument("error_cases: sequences differ in length");
    }
    ErrorCases out;
    for (std::size_t i = 0; i < gold.size(); ++i) {
        const bool gp = positive_labels.count(gold[i]) > 0;
        const bool pp = positive_labels.count(predicted[i]) > 0;
        if (!gp && pp) out.false_positives.push_back({texts[i], gold[i], predicted[i]});
        if (gp && !pp) out.false_negatives.push_back({texts[i], gold[i], predicted[i]});
    }
    return out;
}

void write_error_cases(const std::filesystem::path& path, const ErrorCases& cases) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    auto emit = [&](const char* kind, const std::vector<ErrorCase>& list) {
        for (const auto& c : list) {
            nlohmann::ordered_json j;
            j["kind"] = kind;
            j["text"] = c.text;
            j["gold"] = c.gold;
            j["predicted"] = c.predicted;
            out << j.dump() << '\n';
        }
    };
    emit("false_positive", cases.false_positives);
    emit("false_negative", cases.false_negatives);
}

nlohmann::ordered_json HistoryProfile::to_json() const {
    nlohmann::ordered_json j;
    j["window"] = window;
    auto& g = j["groups"] = nlohmann::ordered_json::object();
    for (const auto& [label, p] : groups) {
        g[label] = {{"users", p.users}, {"mean_hateful", display_round(p.mean_hateful)},
                    {"raw_mean_hateful", p.mean_hateful}};
    }
    return j;
}

HistoryProfile profile_history(const TextClassifier& classify, const Dataset& ds, std::size_t window,
                               const std::set<std::string>& hateful_labels) {
    if (window == 0) throw std::invalid_argument("profile_history: window must be >= 1");
    HistoryProfile profile;
    profile.window = window;
    std::map<std::string, std::set<std::string>> members;
    for (const auto& label : ds.task.label_set) members[label];
    for (const auto& r : ds.records) members[r.label].insert(r.user_id);

    std::unordered_map<std::string, bool> verdicts;
    auto hateful = [&](const std::string& text) {
        auto it = verdicts.find(text);
        if (it == verdicts.end()) it = verdicts.emplace(text, hateful_labels.count(classify(text)) > 0).first;
        return it->second;
    };
    for (const auto& [label, users] : members) {
        GroupProfile g;
        double sum = 0.0;
        for (const auto& uid : users) {
            auto it = ds.users.find(uid);
            if (it == ds.users.end() || it->second.cold()) continue;
            const auto& history = it->second.history;
            const std::size_t n = std::min(window, history.size());
            std::size_t count = 0;
            for (std::size_t i = 0; i < n; ++i) count += hateful(history[i]) ? 1 : 0;
            sum += static_cast<double>(count);
            ++g.users;
        }
        g.mean_hateful = g.users ? sum / static_cast<double>(g.users) : 0.0;
        profile.groups[label] = g;
    }
    return profile;
}

}  // namespace hatemtl
