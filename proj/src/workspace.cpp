#include "hatemtl/workspace.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <openssl/evp.h>

namespace hatemtl {

namespace fs = std::filesystem;

namespace {

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be an object");
    for (const auto& [key, value] : j.items()) {
        bool ok = false;
        for (const char* k : known) ok = ok || key == k;
        if (!ok) throw ConfigError("unknown key '" + key + "' in " + where);
    }
}

std::string utc_now() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream s;
    s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return s.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

WorkspaceConfig WorkspaceConfig::from_json(const nlohmann::json& j, const fs::path& root) {
    WorkspaceConfig c;
    c.root = root;
    try {
        reject_unknown(j, {"tasks", "task_manifest", "datasets", "output_dir", "seed", "strict", "features",
                           "encoder", "training", "evaluation"},
                       "workspace config");
        if (j.contains("task_manifest")) c.task_manifest = j["task_manifest"].get<std::string>();
        if (j.contains("tasks")) {
            for (const auto& t : j["tasks"]) {
                reject_unknown(t, {"id", "labels"}, "tasks entry");
                TaskId id{t.at("id").get<std::string>(), t.at("labels").get<std::vector<std::string>>()};
                id.validate();
                c.tasks.push_back(std::move(id));
            }
        }
        if (c.task_manifest.empty() == c.tasks.empty()) {
            throw ConfigError("exactly one of 'tasks' and 'task_manifest' must be given");
        }
        for (const auto& d : j.at("datasets")) {
            reject_unknown(d, {"task", "corpus", "users"}, "datasets entry");
            c.datasets.push_back({d.at("task").get<std::string>(), d.at("corpus").get<std::string>(),
                                  d.at("users").get<std::string>()});
        }
        if (c.datasets.empty()) throw ConfigError("no datasets configured");
        c.output_dir = j.value("output_dir", c.output_dir.string());
        c.seed = j.value("seed", c.seed);
        c.strict = j.value("strict", c.strict);

        if (j.contains("features")) {
            const auto& f = j["features"];
            reject_unknown(f, {"lexicon", "max_features", "history_window", "m_cap", "intra_batch", "neighbors",
                               "per_user", "similarity_weights", "frozen_history", "sparse_projection",
                               "standardize_dense"},
                           "features");
            auto& fc = c.features;
            fc.lexicon = f.value("lexicon", std::string());
            fc.max_features = f.value("max_features", fc.max_features);
            fc.history_window = f.value("history_window", fc.history_window);
            fc.bundles.m_cap = f.value("m_cap", fc.bundles.m_cap);
            fc.bundles.intra_batch = f.value("intra_batch", fc.bundles.intra_batch);
            fc.bundles.neighbors = f.value("neighbors", fc.bundles.neighbors);
            fc.bundles.per_user = f.value("per_user", fc.bundles.per_user);
            if (f.contains("similarity_weights")) fc.bundles.weights = f["similarity_weights"].get<SimilarityWeights>();
            fc.bundles.frozen_history = f.value("frozen_history", fc.bundles.frozen_history);
            fc.fusion.sparse_projection = f.value("sparse_projection", fc.fusion.sparse_projection);
            fc.fusion.standardize_dense = f.value("standardize_dense", fc.fusion.standardize_dense);
        }
        if (j.contains("encoder")) {
            reject_unknown(j["encoder"], {"kind", "max_length", "embedding_dim", "hidden_dim", "transformer", "cnn",
                                          "gru", "output_dim"},
                           "encoder");
            c.encoder = EncoderConfig::from_json(j["encoder"]);
        }
        if (j.contains("training")) {
            reject_unknown(j["training"], {"learning_rate", "batch_size", "epochs", "adam", "runs", "max_vocab"},
                           "training");
            c.training = TrainingConfig::from_json(j["training"]);
        }
        if (j.contains("evaluation")) {
            const auto& e = j["evaluation"];
            reject_unknown(e, {"folds", "val_fraction", "hateful_labels"}, "evaluation");
            c.evaluation.folds = e.value("folds", c.evaluation.folds);
            c.evaluation.val_fraction = e.value("val_fraction", c.evaluation.val_fraction);
            if (e.contains("hateful_labels")) {
                c.evaluation.hateful_labels =
                    e["hateful_labels"].get<std::map<std::string, std::vector<std::string>>>();
            }
        }
    } catch (const nlohmann::json::exception& ex) {
        throw ConfigError(std::string("malformed workspace config: ") + ex.what());
    } catch (const CorpusError& ex) {
        throw ConfigError(ex.what());
    }
    c.training.seed = c.seed;
    // Encoder validation needs a vocabulary size; any value >= 3 stands in until training.
    EncoderConfig probe = c.encoder;
    probe.vocab_size = 3;
    try {
        probe.validate();
        c.training.validate();
    } catch (const std::invalid_argument& ex) {
        throw ConfigError(ex.what());
    }
    if (c.evaluation.folds < 2) throw ConfigError("evaluation.folds must be >= 2");
    if (!(c.evaluation.val_fraction > 0.0 && c.evaluation.val_fraction < 1.0)) {
        throw ConfigError("evaluation.val_fraction must lie in (0, 1)");
    }
    if (c.features.history_window == 0) throw ConfigError("features.history_window must be >= 1");
    return c;
}

WorkspaceConfig WorkspaceConfig::load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read workspace config " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& ex) {
        throw ConfigError(path.string() + ": " + ex.what());
    }
    fs::path root = path.parent_path();
    if (const char* env = std::getenv(kWorkspaceEnv); env && *env) root = env;
    return from_json(j, root);
}

nlohmann::ordered_json WorkspaceConfig::to_json() const {
    nlohmann::ordered_json j;
    if (!task_manifest.empty()) {
        j["task_manifest"] = task_manifest.string();
    } else {
        auto& list = j["tasks"] = nlohmann::ordered_json::array();
        for (const auto& t : tasks) list.push_back({{"id", t.id}, {"labels", t.label_set}});
    }
    auto& ds = j["datasets"] = nlohmann::ordered_json::array();
    for (const auto& d : datasets) {
        ds.push_back({{"task", d.task}, {"corpus", d.corpus.string()}, {"users", d.users.string()}});
    }
    j["output_dir"] = output_dir.string();
    j["seed"] = seed;
    j["strict"] = strict;
    nlohmann::ordered_json f;
    f["lexicon"] = features.lexicon.string();
    f["max_features"] = features.max_features;
    f["history_window"] = features.history_window;
    f["m_cap"] = features.bundles.m_cap;
    f["intra_batch"] = features.bundles.intra_batch;
    f["neighbors"] = features.bundles.neighbors;
    f["per_user"] = features.bundles.per_user;
    f["similarity_weights"] = features.bundles.weights;
    f["frozen_history"] = features.bundles.frozen_history;
    f["sparse_projection"] = features.fusion.sparse_projection;
    f["standardize_dense"] = features.fusion.standardize_dense;
    j["features"] = f;
    auto enc = encoder.to_json();
    enc.erase("vocab_size");
    j["encoder"] = enc;
    auto tr = training.to_json();
    tr.erase("seed");
    j["training"] = tr;
    j["evaluation"] = {{"folds", evaluation.folds},
                       {"val_fraction", evaluation.val_fraction},
                       {"hateful_labels", evaluation.hateful_labels}};
    return j;
}

std::string WorkspaceConfig::config_hash() const {
    // nlohmann::json keeps object keys sorted, which makes the dump canonical.
    const nlohmann::json canonical = nlohmann::json::parse(to_json().dump());
    return sha256_hex(canonical.dump());
}

fs::path WorkspaceConfig::resolve(const fs::path& p) const {
    if (p.empty() || p.is_absolute()) return p;
    return root / p;
}

void WorkspaceConfig::check_paths() const {
    auto need = [&](const fs::path& p, const std::string& what) {
        const fs::path r = resolve(p);
        if (!fs::exists(r)) throw ConfigError(what + " not found: " + r.string());
    };
    if (!task_manifest.empty()) need(task_manifest, "task manifest");
    for (const auto& d : datasets) {
        need(d.corpus, "corpus file");
        need(d.users, "users file");
    }
    if (!features.lexicon.empty()) need(features.lexicon, "lexicon file");
}

std::vector<TaskId> WorkspaceConfig::task_list() const {
    if (task_manifest.empty()) return tasks;
    try {
        return load_task_manifest(resolve(task_manifest));
    } catch (const CorpusError& ex) {
        throw ConfigError(ex.what());
    }
}

std::set<std::string> WorkspaceConfig::hateful_labels(const std::string& task) const {
    auto it = evaluation.hateful_labels.find(task);
    if (it == evaluation.hateful_labels.end()) return {};
    return {it->second.begin(), it->second.end()};
}

// ---------------------------------------------------------------------------
// Hashing

std::string sha256_hex(std::string_view data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("SHA-256 failed");
    }
    std::ostringstream s;
    for (unsigned int i = 0; i < len; ++i) s << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
    return s.str();
}

std::string sha256_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream s;
    s << in.rdbuf();
    return sha256_hex(s.str());
}

// ---------------------------------------------------------------------------
// Run manifest

RunManifest RunManifest::load_or_create(const fs::path& run_dir, const WorkspaceConfig& config,
                                        const std::string& run_id) {
    RunManifest m;
    const fs::path path = run_dir / "manifest.json";
    if (fs::exists(path)) {
        std::ifstream in(path);
        const auto j = nlohmann::json::parse(in);
        m.created = j.value("created", std::string());
        if (j.contains("commands")) m.commands = j["commands"].get<std::vector<nlohmann::json>>();
        if (j.contains("files")) {
            for (const auto& f : j["files"]) m.files.insert(f.get<std::string>());
        }
    }
    m.run_id = run_id;
    m.config_hash = config.config_hash();
    m.config = nlohmann::json::parse(config.to_json().dump());
    m.seed = config.seed;
    if (m.created.empty()) m.created = utc_now();
    return m;
}

void RunManifest::add_file(const fs::path& run_dir, const fs::path& file) {
    files.insert(fs::relative(file, run_dir).generic_string());
}

nlohmann::ordered_json RunManifest::to_json() const {
    nlohmann::ordered_json j;
    j["run_id"] = run_id;
    j["config_hash"] = config_hash;
    j["versions"] = {{"hatemtl", kArtifactVersion}, {"checkpoint_format", 1}, {"bundle_format", 1}};
    j["created"] = created;
    j["updated"] = updated;
    j["seeds"] = {{"root", seed},
                  {"scheme", "derive_seed(root, purpose, run, fold); purposes: split, split-val, init, "
                             "init/head/<task>, shuffle, fusion-init, fusion-shuffle"}};
    j["config"] = config;
    j["commands"] = commands;
    j["files"] = files;
    return j;
}

void RunManifest::save(const fs::path& run_dir) {
    updated = utc_now();
    fs::create_directories(run_dir);
    files.insert("manifest.json");
    std::ofstream out(run_dir / "manifest.json");
    if (!out) throw std::runtime_error("cannot write " + (run_dir / "manifest.json").string());
    out << to_json().dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Workspace

Workspace Workspace::open(const WorkspaceConfig& config) {
    config.check_paths();
    Workspace w;
    w.config = config;
    const auto tasks = config.task_list();
    LoadOptions options;
    options.strict = config.strict;
    for (const auto& spec : config.datasets) {
        auto it = std::find_if(tasks.begin(), tasks.end(), [&](const TaskId& t) { return t.id == spec.task; });
        if (it == tasks.end()) throw ConfigError("dataset refers to undeclared task '" + spec.task + "'");
        for (const auto& d : w.datasets) {
            if (d.task.id == spec.task) throw ConfigError("task '" + spec.task + "' has two datasets");
        }
        LoadReport report;
        try {
            w.datasets.push_back(load_dataset(config.resolve(spec.corpus), config.resolve(spec.users), *it, options,
                                              &report));
        } catch (const CorpusError& ex) {
            throw ConfigError(ex.what());
        }
        w.reports.push_back(std::move(report));
    }
    if (!config.features.lexicon.empty()) w.lexicon = SentimentLexicon::load(config.resolve(config.features.lexicon));
    return w;
}

std::vector<const Dataset*> Workspace::pointers() const {
    std::vector<const Dataset*> out;
    for (const auto& d : datasets) out.push_back(&d);
    return out;
}

const Dataset& Workspace::dataset(const std::string& task) const {
    for (const auto& d : datasets) {
        if (d.task.id == task) return d;
    }
    throw ConfigError("no dataset for task '" + task + "'");
}

}  // namespace hatemtl
