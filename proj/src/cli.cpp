#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "hatemtl/eval.hpp"
#include "hatemtl/rng.hpp"
#include "hatemtl/workspace.hpp"

namespace hatemtl {

namespace fs = std::filesystem;

namespace {

struct Options {
    std::string config_path;
    std::string run_id;
    std::optional<std::string> out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> runs;
    std::optional<std::size_t> folds;
    std::optional<std::size_t> epochs;
    std::optional<std::size_t> batch_size;
    std::optional<double> learning_rate;
    std::optional<std::string> encoder;
    std::optional<std::size_t> window;
    bool strict = false;

    std::string mode = "mtl";
    std::size_t fold = 0;
    std::string masks = "none,intra,inter,all";
    std::string pipeline = "fusion";
    std::string mask = "all";
    std::size_t parallel_folds = 1;
};

class Command {
public:
    Command(const Options& opt, std::ostream& out, std::ostream& err, const std::string& name)
        : opt_(opt), out_(out), err_(err), name_(name) {
        fs::path path = opt.config_path;
        if (path.empty()) {
            const char* env = std::getenv(kWorkspaceEnv);
            path = fs::path(env && *env ? env : ".") / "workspace.json";
        }
        config_ = WorkspaceConfig::load(path);
        apply_overrides();
        run_id_ = opt.run_id.empty() ? "run-" + config_.config_hash().substr(0, 12) : opt.run_id;
        run_dir_ = config_.resolve(config_.output_dir) / run_id_;
        fs::create_directories(run_dir_);
        manifest_ = RunManifest::load_or_create(run_dir_, config_, run_id_);
    }

    const WorkspaceConfig& config() const { return config_; }
    const fs::path& run_dir() const { return run_dir_; }
    std::ostream& out() { return out_; }
    std::ostream& err() { return err_; }
    const Options& opt() const { return opt_; }

    Workspace& workspace() {
        if (!workspace_) workspace_ = Workspace::open(config_);
        return *workspace_;
    }

    fs::path file(const fs::path& rel) {
        const fs::path p = run_dir_ / rel;
        fs::create_directories(p.parent_path());
        return p;
    }

    void wrote(const fs::path& p) { manifest_.add_file(run_dir_, p); }

    void write_json(const fs::path& rel, const nlohmann::ordered_json& j) {
        const fs::path p = file(rel);
        std::ofstream o(p);
        if (!o) throw std::runtime_error("cannot write " + p.string());
        o << j.dump(2) << '\n';
        wrote(p);
    }

    void finish(int code) {
        manifest_.commands.push_back({{"command", name_}, {"exit_code", code}, {"finished", "recorded"}});
        manifest_.save(run_dir_);
    }

    std::vector<FoldSplit> folds_of(const Dataset& ds) const {
        return kfold_split(ds, config_.evaluation.folds, config_.evaluation.val_fraction, config_.seed);
    }

    fs::path train_dir(const std::string& mode) const {
        return fs::path("train") / (mode + "-" + to_string(config_.encoder.kind));
    }

private:
    void apply_overrides() {
        if (opt_.out_dir) config_.output_dir = fs::absolute(*opt_.out_dir);  // flags are relative to the caller
        if (opt_.seed) config_.seed = config_.training.seed = *opt_.seed;
        if (opt_.runs) config_.training.runs = *opt_.runs;
        if (opt_.folds) config_.evaluation.folds = *opt_.folds;
        if (opt_.epochs) config_.training.epochs = *opt_.epochs;
        if (opt_.batch_size) config_.training.batch_size = *opt_.batch_size;
        if (opt_.learning_rate) config_.training.learning_rate = *opt_.learning_rate;
        if (opt_.encoder) config_.encoder.kind = parse_encoder_kind(*opt_.encoder);
        if (opt_.window) config_.features.history_window = *opt_.window;
        if (opt_.strict) config_.strict = true;
        try {
            config_.training.validate();
        } catch (const std::invalid_argument& ex) {
            throw ConfigError(ex.what());
        }
        if (config_.evaluation.folds < 2) throw ConfigError("folds must be >= 2");
        if (config_.features.history_window == 0) throw ConfigError("window must be >= 1");
    }

    const Options& opt_;
    std::ostream& out_;
    std::ostream& err_;
    std::string name_;
    WorkspaceConfig config_;
    std::string run_id_;
    fs::path run_dir_;
    RunManifest manifest_;
    std::optional<Workspace> workspace_;
};

// ---------------------------------------------------------------------------

void cmd_ingest(Command& c) {
    Workspace& w = c.workspace();
    nlohmann::ordered_json report;
    auto& tasks = report["tasks"] = nlohmann::ordered_json::object();
    for (std::size_t i = 0; i < w.datasets.size(); ++i) {
        const Dataset& ds = w.datasets[i];
        validate_dataset(ds);
        const auto dist = class_distribution(ds);
        std::size_t cold = 0;
        for (const auto& [id, u] : ds.users) cold += u.cold() ? 1 : 0;
        nlohmann::ordered_json t;
        t["records"] = ds.records.size();
        t["users"] = ds.users.size();
        t["cold_users"] = cold;
        auto& d = t["distribution"] = nlohmann::ordered_json::object();
        for (const auto& label : ds.task.label_set) d[label] = dist.at(label);
        auto& skipped = t["skipped_lines"] = nlohmann::ordered_json::array();
        for (const auto& s : w.reports[i].skipped) skipped.push_back({{"line", s.line}, {"message", s.message}});
        tasks[ds.task.id] = t;

        c.out() << "task " << ds.task.id << " (" << ds.records.size() << " records, " << ds.users.size()
                << " users, " << cold << " cold)\n";
        for (const auto& label : ds.task.label_set) {
            c.out() << "  " << std::left << std::setw(16) << label << std::right << std::setw(8) << dist.at(label)
                    << '\n';
        }
        if (!w.reports[i].skipped.empty()) {
            c.out() << "  skipped " << w.reports[i].skipped.size() << " undecodable line(s)\n";
        }
    }
    c.write_json("ingest.json", report);
}

void cmd_split(Command& c) {
    Workspace& w = c.workspace();
    for (const auto& ds : w.datasets) {
        std::vector<std::string> warnings;
        const auto folds = kfold_split(ds, c.config().evaluation.folds, c.config().evaluation.val_fraction,
                                       c.config().seed, &warnings);
        for (const auto& msg : warnings) c.err() << "warning: " << ds.task.id << ": " << msg << '\n';
        nlohmann::ordered_json j;
        j["task"] = ds.task.id;
        auto& list = j["folds"] = nlohmann::ordered_json::array();
        for (const auto& f : folds) {
            list.push_back({{"fold", f.fold_index}, {"train", f.train_ids}, {"val", f.val_ids}, {"test", f.test_ids}});
            c.out() << ds.task.id << " fold " << f.fold_index << ": train " << f.train_ids.size() << ", val "
                    << f.val_ids.size() << ", test " << f.test_ids.size() << '\n';
        }
        c.write_json(fs::path("splits") / (ds.task.id + ".json"), j);
    }
}

void cmd_train(Command& c) {
    Workspace& w = c.workspace();
    const auto& cfg = c.config();
    const std::string mode = c.opt().mode;
    if (mode != "stl" && mode != "mtl") throw ConfigError("mode must be stl or mtl");
    if (c.opt().fold >= cfg.evaluation.folds) throw ConfigError("fold index out of range");
    std::vector<TaskSplit> tasks;
    std::vector<std::vector<FoldSplit>> splits;
    for (const auto& ds : w.datasets) {
        splits.push_back(c.folds_of(ds));
        tasks.push_back(TaskSplit::from_fold(ds, splits.back()[c.opt().fold]));
    }
    const JobKey job{0, c.opt().fold};
    const fs::path dir = c.train_dir(mode);
    std::vector<TrainingEvent> events;
    if (mode == "mtl") {
        if (tasks.size() < 2) throw ConfigError("mtl mode needs at least two tasks");
        TrainResult r = train_mtl(tasks, cfg.encoder, cfg.training, job);
        const fs::path ck = c.file(dir / "model.ckpt");
        Checkpoint checkpoint = r.model.to_checkpoint(cfg.seed);
        checkpoint.extra = {{"mode", mode}, {"fold", c.opt().fold}, {"config_hash", cfg.config_hash()}};
        save_checkpoint(ck, checkpoint);
        c.wrote(ck);
        events = std::move(r.history.events);
        c.out() << "trained mtl " << to_string(cfg.encoder.kind) << " on " << tasks.size() << " tasks -> "
                << ck.string() << '\n';
    } else {
        for (const auto& t : tasks) {
            TrainResult r = train_stl(t, cfg.encoder, cfg.training, job);
            const fs::path ck = c.file(dir / (t.dataset->task.id + ".ckpt"));
            Checkpoint checkpoint = r.model.to_checkpoint(cfg.seed);
            checkpoint.extra = {{"mode", mode}, {"fold", c.opt().fold}, {"config_hash", cfg.config_hash()}};
            save_checkpoint(ck, checkpoint);
            c.wrote(ck);
            events.insert(events.end(), r.history.events.begin(), r.history.events.end());
            c.out() << "trained stl " << to_string(cfg.encoder.kind) << " on " << t.dataset->task.id << " -> "
                    << ck.string() << '\n';
        }
    }
    const fs::path log = c.file(dir / "events.jsonl");
    write_events(log, events);
    c.wrote(log);
}

MTLModel load_mtl(Command& c) {
    const fs::path ck = c.run_dir() / c.train_dir("mtl") / "model.ckpt";
    if (!fs::exists(ck)) throw ConfigError("missing upstream checkpoint " + ck.string() + " (run train --mode mtl)");
    return MTLModel::from_checkpoint(load_checkpoint(ck));
}

std::vector<FeatureBundle> cached_bundles(Command& c, BundleBuilder& builder, const std::string& key,
                                          const std::vector<std::size_t>& positions) {
    const fs::path p = c.file(fs::path("fuse") / "cache" / (key + ".bin"));
    if (fs::exists(p)) {
        auto b = load_bundles(p);
        if (b.size() == positions.size()) {
            c.wrote(p);
            return b;
        }
    }
    auto b = builder.build(positions);
    save_bundles(p, b);
    c.wrote(p);
    return b;
}

void cmd_fuse(Command& c) {
    Workspace& w = c.workspace();
    const auto& cfg = c.config();
    const MTLModel model = load_mtl(c);
    const std::string ck_hash = sha256_file(c.run_dir() / c.train_dir("mtl") / "model.ckpt");
    const SharedEncoder shared = transfer_shared(model);
    EncoderParams frozen;
    if (cfg.features.bundles.frozen_history) {
        frozen = init_encoder_params(shared.config, derive_seed(cfg.seed, "init", 0, c.opt().fold));
    }
    std::vector<FeatureMask> masks;
    {
        std::string spec = c.opt().masks;
        std::size_t start = 0;
        while (start <= spec.size()) {
            std::size_t end = spec.find(',', start);
            if (end == std::string::npos) end = spec.size();
            try {
                masks.push_back(FeatureMask::parse(spec.substr(start, end - start)));
            } catch (const std::invalid_argument& ex) {
                throw ConfigError(ex.what());
            }
            start = end + 1;
        }
    }
    const JobKey job{0, c.opt().fold};
    for (const auto& ds : w.datasets) {
        const FoldSplit split = c.folds_of(ds).at(c.opt().fold);
        const NGramVocabulary vocab = build_train_vocab(ds, split.train_ids, cfg.features.max_features);
        BundleBuilder builder(ds, shared, vocab, w.lexicon, cfg.features.bundles,
                              cfg.features.bundles.frozen_history ? &frozen : nullptr);
        const std::string key_base = sha256_hex(ck_hash + nlohmann::json(cfg.to_json()["features"]).dump() +
                                                ds.task.id + std::to_string(c.opt().fold))
                                         .substr(0, 16);
        const auto train_pos = record_indices(ds, split.train_ids);
        const auto test_pos = record_indices(ds, split.test_ids);
        const auto train = cached_bundles(c, builder, ds.task.id + "-train-" + key_base, train_pos);
        const auto test = cached_bundles(c, builder, ds.task.id + "-test-" + key_base, test_pos);
        if (!builder.selections().empty()) {
            const fs::path np = c.file(fs::path("fuse") / "neighbors" / (ds.task.id + ".jsonl"));
            write_neighbor_selections(np, builder.selections());
            c.wrote(np);
        }
        std::vector<int> train_labels, gold;
        for (std::size_t p : train_pos) train_labels.push_back(static_cast<int>(ds.task.label_index(ds.records[p].label)));
        std::vector<std::string> test_texts;
        for (std::size_t p : test_pos) {
            gold.push_back(static_cast<int>(ds.task.label_index(ds.records[p].label)));
            test_texts.push_back(ds.records[p].text);
        }
        const MetricsReport head_metrics =
            macro_weighted_f1(confusion(gold, model.predict(ds.task.id, test_texts), ds.task.label_set));

        for (const auto& mask : masks) {
            const FusionTrainResult fr =
                train_fusion(train, train_labels, mask, cfg.features.fusion, model.head(ds.task.id), cfg.training, job);
            const MetricsReport m = macro_weighted_f1(confusion(gold, predict_labels(fr.model, test), ds.task.label_set));
            const fs::path dir = fs::path("fuse") / mask.name();
            const fs::path mp = c.file(dir / (ds.task.id + ".model.json"));
            fr.model.save(mp);
            c.wrote(mp);
            nlohmann::ordered_json j;
            j["kind"] = "fusion";
            j["task"] = ds.task.id;
            j["mask"] = mask.name();
            j["fold"] = c.opt().fold;
            j["input_dim"] = fr.model.input_dim();
            j["epoch_loss"] = fr.epoch_loss;
            j["metrics"] = m.to_json();
            j["mtl_head_metrics"] = head_metrics.to_json();
            c.write_json(dir / (ds.task.id + ".json"), j);
            c.out() << "fuse " << ds.task.id << " mask=" << mask.name() << " macro_f1=" << std::fixed
                    << std::setprecision(6) << m.macro_f1 << " weighted_f1=" << m.weighted_f1 << '\n';
        }
    }
}

Pipeline make_pipeline(Command& c) {
    const auto& cfg = c.config();
    const std::string& name = c.opt().pipeline;
    if (name == "stl") return stl_pipeline(cfg.encoder, cfg.training);
    if (name == "mtl") return mtl_pipeline(cfg.encoder, cfg.training);
    if (name == "fusion") {
        FusionPipelineOptions o;
        try {
            o.mask = FeatureMask::parse(c.opt().mask);
        } catch (const std::invalid_argument& ex) {
            throw ConfigError(ex.what());
        }
        o.fusion = cfg.features.fusion;
        o.bundles = cfg.features.bundles;
        o.max_features = cfg.features.max_features;
        o.lexicon = &c.workspace().lexicon;
        return fusion_pipeline(cfg.encoder, cfg.training, o);
    }
    throw ConfigError("pipeline must be stl, mtl or fusion");
}

std::vector<JobResult> run_jobs_parallel(Command& c, const Pipeline& pipeline, const std::vector<const Dataset*>& ds,
                                         const std::vector<std::vector<FoldSplit>>& splits, const CVOptions& cv,
                                         const fs::path& jobs_dir) {
    std::vector<std::pair<std::size_t, std::size_t>> jobs;
    for (std::size_t r = 0; r < cv.runs; ++r) {
        for (std::size_t f = 0; f < cv.folds; ++f) jobs.emplace_back(r, f);
    }
    auto job_path = [&](std::size_t r, std::size_t f) {
        return jobs_dir / ("run" + std::to_string(r) + "-fold" + std::to_string(f) + ".json");
    };
    const std::size_t workers = std::min(c.opt().parallel_folds, jobs.size());
    if (workers <= 1) {
        std::vector<JobResult> out;
        for (const auto& [r, f] : jobs) {
            out.push_back(run_job(pipeline, ds, splits, cv, r, f));
            std::ofstream(job_path(r, f)) << out.back().to_json().dump() << '\n';
        }
        return out;
    }
    std::cout.flush();
    std::cerr.flush();
    c.out().flush();
    std::vector<pid_t> pids;
    for (std::size_t wi = 0; wi < workers; ++wi) {
        const pid_t pid = fork();
        if (pid < 0) throw std::runtime_error("fork failed");
        if (pid == 0) {
            int code = 0;
            try {
                for (std::size_t k = wi; k < jobs.size(); k += workers) {
                    const auto [r, f] = jobs[k];
                    const JobResult res = run_job(pipeline, ds, splits, cv, r, f);
                    std::ofstream(job_path(r, f)) << res.to_json().dump() << '\n';
                }
            } catch (const std::exception& ex) {
                std::cerr << "fold worker failed: " << ex.what() << '\n';
                code = 1;
            }
            std::_Exit(code);
        }
        pids.push_back(pid);
    }
    bool failed = false;
    for (pid_t pid : pids) {
        int status = 0;
        waitpid(pid, &status, 0);
        failed = failed || !WIFEXITED(status) || WEXITSTATUS(status) != 0;
    }
    if (failed) throw std::runtime_error("a fold worker process failed");
    std::vector<JobResult> out;
    for (const auto& [r, f] : jobs) {
        std::ifstream in(job_path(r, f));
        out.push_back(JobResult::from_json(nlohmann::json::parse(in)));
    }
    return out;
}

void cmd_evaluate(Command& c) {
    Workspace& w = c.workspace();
    const auto& cfg = c.config();
    const Pipeline pipeline = make_pipeline(c);
    CVOptions cv;
    cv.folds = cfg.evaluation.folds;
    cv.runs = cfg.training.runs;
    cv.val_fraction = cfg.evaluation.val_fraction;
    cv.seed = cfg.seed;
    const auto datasets = w.pointers();
    const auto splits = make_splits(datasets, cv);
    std::string label = c.opt().pipeline;
    if (label == "fusion") label += "-" + FeatureMask::parse(c.opt().mask).name();
    const fs::path dir = fs::path("evaluate") / label;
    const fs::path jobs_dir = c.run_dir() / dir / "jobs";
    fs::create_directories(jobs_dir);

    const auto jobs = run_jobs_parallel(c, pipeline, datasets, splits, cv, jobs_dir);
    for (const auto& j : jobs) {
        c.wrote(jobs_dir / ("run" + std::to_string(j.key.run) + "-fold" + std::to_string(j.key.fold) + ".json"));
    }
    const auto aggregates = aggregate(jobs);

    std::vector<TrainingEvent> events;
    for (const auto& j : jobs) events.insert(events.end(), j.events.begin(), j.events.end());
    const fs::path log = c.file(dir / "events.jsonl");
    write_events(log, events);
    c.wrote(log);

    nlohmann::ordered_json report;
    report["kind"] = "evaluation";
    report["pipeline"] = c.opt().pipeline;
    if (c.opt().pipeline == "fusion") report["mask"] = FeatureMask::parse(c.opt().mask).name();
    report["encoder"] = to_string(cfg.encoder.kind);
    report["folds"] = cv.folds;
    report["runs"] = cv.runs;
    auto& tasks = report["tasks"] = nlohmann::ordered_json::object();
    for (const auto& [task, agg] : aggregates) {
        tasks[task] = agg.to_json();
        c.out() << "evaluate " << task << " " << label << ": macro_f1 " << std::fixed << std::setprecision(6)
                << agg.mean_macro_f1 << " (sd " << agg.std_macro_f1 << "), weighted_f1 " << agg.mean_weighted_f1
                << " (sd " << agg.std_weighted_f1 << ")\n";
    }
    c.write_json(dir / "aggregate.json", report);

    // Error cases over every test record of the first run.
    for (const Dataset* ds : datasets) {
        std::vector<std::string> gold, predicted, texts;
        for (const auto& j : jobs) {
            if (j.key.run != 0) continue;
            for (const auto& [id, g, p] : j.predictions.at(ds->task.id)) {
                gold.push_back(g);
                predicted.push_back(p);
                texts.push_back(ds->records[ds->index_of(id)].text);
            }
        }
        const auto cases = error_cases(gold, predicted, texts, cfg.hateful_labels(ds->task.id));
        const fs::path ep = c.file(dir / "errors" / (ds->task.id + ".jsonl"));
        write_error_cases(ep, cases);
        c.wrote(ep);
    }
}

void cmd_profile(Command& c) {
    Workspace& w = c.workspace();
    const auto& cfg = c.config();
    const fs::path mtl_ck = c.run_dir() / c.train_dir("mtl") / "model.ckpt";
    std::optional<MTLModel> mtl;
    if (fs::exists(mtl_ck)) mtl = MTLModel::from_checkpoint(load_checkpoint(mtl_ck));
    for (const auto& ds : w.datasets) {
        MTLModel model;
        if (mtl) {
            model = *mtl;
        } else {
            const fs::path stl_ck = c.run_dir() / c.train_dir("stl") / (ds.task.id + ".ckpt");
            if (!fs::exists(stl_ck)) {
                throw ConfigError("no checkpoint for task '" + ds.task.id + "': expected " + mtl_ck.string() +
                                  " or " + stl_ck.string());
            }
            model = MTLModel::from_checkpoint(load_checkpoint(stl_ck));
        }
        const std::string task = ds.task.id;
        const TextClassifier classify = [&model, &task](const std::string& text) {
            const int k = model.predict(task, {text}).front();
            return model.head(task).labels.at(static_cast<std::size_t>(k));
        };
        const auto hateful = cfg.hateful_labels(task);
        if (hateful.empty()) c.err() << "warning: no hateful labels configured for task " << task << '\n';
        const HistoryProfile p = profile_history(classify, ds, cfg.features.history_window, hateful);
        nlohmann::ordered_json j;
        j["kind"] = "history_profile";
        j["task"] = task;
        j["hateful_labels"] = hateful;
        j["profile"] = p.to_json();
        c.write_json(fs::path("profile") / (task + ".json"), j);
        for (const auto& [label, g] : p.groups) {
            c.out() << "profile " << task << " " << label << ": " << g.users << " users, mean hateful history posts "
                    << std::fixed << std::setprecision(3) << g.mean_hateful << " of " << p.window << '\n';
        }
    }
}

void cmd_report(Command& c) {
    std::vector<fs::path> files;
    auto collect = [&](const fs::path& sub, auto keep) {
        const fs::path root = c.run_dir() / sub;
        if (!fs::exists(root)) return;
        for (const auto& e : fs::recursive_directory_iterator(root)) {
            if (e.is_regular_file() && keep(e.path())) files.push_back(e.path());
        }
    };
    if (fs::exists(c.run_dir() / "ingest.json")) files.push_back(c.run_dir() / "ingest.json");
    collect("fuse", [](const fs::path& p) {
        const std::string n = p.filename().string();
        return p.extension() == ".json" && n.find(".model.") == std::string::npos;
    });
    collect("evaluate", [](const fs::path& p) { return p.filename() == "aggregate.json"; });
    collect("profile", [](const fs::path& p) { return p.extension() == ".json"; });
    std::sort(files.begin(), files.end());

    nlohmann::ordered_json report;
    report["kind"] = "summary";
    report["config_hash"] = c.config().config_hash();
    auto& entries = report["entries"] = nlohmann::ordered_json::array();
    for (const auto& f : files) {
        std::ifstream in(f);
        nlohmann::ordered_json content = nlohmann::ordered_json::parse(in);
        nlohmann::ordered_json e;
        e["path"] = fs::relative(f, c.run_dir()).generic_string();
        e["kind"] = content.value("kind", std::string(f.filename() == "ingest.json" ? "ingest" : "unknown"));
        e["content"] = std::move(content);
        entries.push_back(std::move(e));
    }
    report["count"] = entries.size();
    c.write_json("report.json", report);
    c.out() << "report: merged " << entries.size() << " file(s) into " << (c.run_dir() / "report.json").string() << '\n';
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Multi-task hate speech classification toolkit"};
    app.require_subcommand(1);
    Options opt;
    app.add_option("-c,--config", opt.config_path, "Workspace config file (default: $HATEMTL_WORKSPACE/workspace.json)");
    app.add_option("--run-id", opt.run_id, "Output subdirectory (default: derived from the config hash)");
    app.add_option("--out", opt.out_dir, "Override output_dir");
    app.add_option("--seed", opt.seed, "Override the root seed");
    app.add_option("--runs", opt.runs, "Override training.runs");
    app.add_option("--folds", opt.folds, "Override evaluation.folds");
    app.add_option("--epochs", opt.epochs, "Override training.epochs");
    app.add_option("--batch-size", opt.batch_size, "Override training.batch_size");
    app.add_option("--lr", opt.learning_rate, "Override training.learning_rate");
    app.add_option("--encoder", opt.encoder, "Override encoder.kind (transformer, cnn, gru)");
    app.add_option("--window", opt.window, "Override features.history_window");
    app.add_flag("--strict", opt.strict, "Treat undecodable corpus lines as errors");

    auto* ingest = app.add_subcommand("ingest", "Validate inputs and print class distributions");
    auto* split = app.add_subcommand("split", "Write the stratified k-fold splits");
    auto* train = app.add_subcommand("train", "Train a single-task or multi-task model on one fold");
    train->add_option("--mode", opt.mode, "stl or mtl")->check(CLI::IsMember({"stl", "mtl"}));
    train->add_option("--fold", opt.fold, "Fold whose train/val split is used");
    auto* fuse = app.add_subcommand("fuse", "Train fusion layers over the MTL checkpoint");
    fuse->add_option("--mask", opt.masks, "Comma-separated feature masks (none, intra, inter, tb, all, a+b)");
    fuse->add_option("--fold", opt.fold, "Fold used for training and reporting");
    auto* evaluate = app.add_subcommand("evaluate", "Cross-validate a pipeline over runs x folds");
    evaluate->add_option("--pipeline", opt.pipeline, "stl, mtl or fusion")
        ->check(CLI::IsMember({"stl", "mtl", "fusion"}));
    evaluate->add_option("--mask", opt.mask, "Feature mask for the fusion pipeline");
    evaluate->add_option("--parallel-folds", opt.parallel_folds, "Run fold jobs in N worker processes")
        ->check(CLI::PositiveNumber);
    auto* profile = app.add_subcommand("profile", "Profile users' history posts with a trained classifier");
    auto* report = app.add_subcommand("report", "Merge every report of the run into one summary");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 2;
    }

    const std::string name = app.get_subcommands().front()->get_name();
    try {
        Command c(opt, out, err, name);
        int code = 0;
        try {
            if (*ingest) cmd_ingest(c);
            if (*split) cmd_split(c);
            if (*train) cmd_train(c);
            if (*fuse) cmd_fuse(c);
            if (*evaluate) cmd_evaluate(c);
            if (*profile) cmd_profile(c);
            if (*report) cmd_report(c);
        } catch (const ConfigError& ex) {
            err << "error: " << ex.what() << '\n';
            code = 2;
        } catch (const std::exception& ex) {
            err << "error: " << ex.what() << '\n';
            code = 1;
        }
        c.finish(code);
        return code;
    } catch (const ConfigError& ex) {
        err << "error: " << ex.what() << '\n';
        return 2;
    } catch (const std::invalid_argument& ex) {
        err << "error: " << ex.what() << '\n';
        return 2;
    } catch (const std::exception& ex) {
        err << "error: " << ex.what() << '\n';
        return 1;
    }
}

}  // namespace hatemtl
