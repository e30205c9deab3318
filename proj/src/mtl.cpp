#include "hatemtl/mtl.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

#include "hatemtl/eval.hpp"
#include "hatemtl/fusion.hpp"
#include "hatemtl/rng.hpp"

namespace hatemtl {

void TrainingConfig::validate() const {
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
    if (batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
    if (runs == 0) throw std::invalid_argument("runs must be >= 1");
    if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
        throw std::invalid_argument("Adam betas must lie in [0, 1)");
    }
    if (!(adam.epsilon > 0.0)) throw std::invalid_argument("Adam epsilon must be positive");
}

nlohmann::ordered_json TrainingConfig::to_json() const {
    nlohmann::ordered_json j;
    j["learning_rate"] = learning_rate;
    j["batch_size"] = batch_size;
    j["epochs"] = epochs;
    j["adam"] = {{"beta1", adam.beta1}, {"beta2", adam.beta2}, {"epsilon", adam.epsilon}};
    j["seed"] = seed;
    j["runs"] = runs;
    j["max_vocab"] = max_vocab;
    return j;
}

TrainingConfig TrainingConfig::from_json(const nlohmann::json& j) {
    TrainingConfig c;
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    if (j.contains("adam")) {
        c.adam.beta1 = j["adam"].value("beta1", c.adam.beta1);
        c.adam.beta2 = j["adam"].value("beta2", c.adam.beta2);
        c.adam.epsilon = j["adam"].value("epsilon", c.adam.epsilon);
    }
    c.seed = j.value("seed", c.seed);
    c.runs = j.value("runs", c.runs);
    c.max_vocab = j.value("max_vocab", c.max_vocab);
    return c;
}

AdamState AdamState::for_params(const ParamSet& params) {
    return {params.zeros_like(), params.zeros_like(), 0};
}

void adam_step(ParamSet& params, const ParamSet& grads, AdamState& state, double learning_rate,
               const AdamConfig& config) {
    if (!params.same_shapes(grads) || !params.same_shapes(state.m)) {
        throw ShapeError("adam_step: parameter, gradient and state shapes differ");
    }
    ++state.steps;
    const double t = static_cast<double>(state.steps);
    const double c1 = 1.0 - std::pow(config.beta1, t);
    const double c2 = 1.0 - std::pow(config.beta2, t);
    for (std::size_t i = 0; i < params.tensors().size(); ++i) {
        auto& p = params.tensors()[i].value;
        const auto& g = grads.tensors()[i].value;
        auto& m = state.m.tensors()[i].value;
        auto& v = state.v.tensors()[i].value;
        m = config.beta1 * m + (1.0 - config.beta1) * g;
        v = config.beta2 * v + (1.0 - config.beta2) * g.cwiseProduct(g);
        p.array() -= learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + config.epsilon);
    }
    params.round_to_float();
}

// ---------------------------------------------------------------------------
// MTLModel

const TaskHead& MTLModel::head(const std::string& task) const {
    auto it = heads.find(task);
    if (it == heads.end()) throw std::out_of_range("model has no head for task '" + task + "'");
    return it->second;
}

Eigen::VectorXd MTLModel::encode(std::string_view text) const {
    return encode_text(text, tokenizer, shared, config);
}

ad::Matrix MTLModel::logits(const std::string& task, const std::vector<std::string>& texts) const {
    std::vector<std::vector<int>> ids;
    ids.reserve(texts.size());
    for (const auto& t : texts) ids.push_back(tokenizer.encode(t));
    return predict_logits(ids, shared, config, head(task));
}

std::vector<int> MTLModel::predict(const std::string& task, const std::vector<std::string>& texts) const {
    const ad::Matrix l = logits(task, texts);
    std::vector<int> out(texts.size());
    for (Eigen::Index i = 0; i < l.rows(); ++i) out[static_cast<std::size_t>(i)] = argmax(l.row(i));
    return out;
}

Checkpoint MTLModel::to_checkpoint(std::uint64_t seed) const {
    Checkpoint ck;
    ck.config = config;
    ck.tokenizer = tokenizer;
    ck.encoder = shared;
    ck.seed = seed;
    for (const auto& [name, h] : heads) ck.heads.push_back(h);
    return ck;
}

MTLModel MTLModel::from_checkpoint(const Checkpoint& ck) {
    MTLModel m;
    m.config = ck.config;
    m.tokenizer = ck.tokenizer;
    m.shared = ck.encoder;
    for (const auto& h : ck.heads) m.heads.emplace(h.task, h);
    return m;
}

TaskSplit TaskSplit::from_fold(const Dataset& ds, const FoldSplit& fold) {
    return {&ds, fold.train_ids, fold.val_ids};
}

// ---------------------------------------------------------------------------
// Events

nlohmann::ordered_json TrainingEvent::to_json() const {
    nlohmann::ordered_json j;
    j["run"] = run;
    j["fold"] = fold;
    j["task"] = task;
    j["epoch"] = epoch;
    j["step"] = step;
    j["loss"] = loss;
    j["val_macro_f1"] = val_macro_f1 ? nlohmann::ordered_json(*val_macro_f1) : nlohmann::ordered_json();
    return j;
}

TrainingEvent TrainingEvent::from_json(const nlohmann::json& j) {
    TrainingEvent e;
    e.run = j.at("run").get<std::size_t>();
    e.fold = j.at("fold").get<std::size_t>();
    e.task = j.at("task").get<std::string>();
    e.epoch = j.at("epoch").get<std::size_t>();
    e.step = j.at("step").get<std::size_t>();
    e.loss = j.at("loss").get<double>();
    if (!j.at("val_macro_f1").is_null()) e.val_macro_f1 = j["val_macro_f1"].get<double>();
    return e;
}

void write_events(const std::filesystem::path& path, const std::vector<TrainingEvent>& events) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (const auto& e : events) out << e.to_json().dump() << '\n';
}

std::vector<TrainingEvent> read_events(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::vector<TrainingEvent> out;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) out.push_back(TrainingEvent::from_json(nlohmann::json::parse(line)));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Training

Tokenizer build_task_tokenizer(const std::vector<TaskSplit>& tasks, std::size_t max_vocab,
                               std::size_t max_length) {
    std::vector<std::vector<std::string>> corpus;
    for (const auto& t : tasks) {
        for (std::size_t i : record_indices(*t.dataset, t.train_ids)) {
            corpus.push_back(Tokenizer::split(t.dataset->records[i].text));
        }
    }
    return Tokenizer::build(corpus, max_vocab, max_length);
}

namespace {

void check_tasks(const std::vector<TaskSplit>& tasks) {
    if (tasks.empty()) throw std::invalid_argument("no tasks to train");
    std::set<std::string> names;
    for (const auto& t : tasks) {
        if (!t.dataset) throw std::invalid_argument("task split without dataset");
        if (t.train_ids.empty()) {
            throw std::invalid_argument("empty training split for task '" + t.dataset->task.id + "'");
        }
        if (!names.insert(t.dataset->task.id).second) {
            throw std::invalid_argument("task '" + t.dataset->task.id + "' given twice");
        }
    }
}

std::string head_purpose(const std::string& task) { return "init/head/" + task; }

struct TaskStream {
    const TaskSplit* split = nullptr;
    std::string task;
    std::vector<std::vector<int>> ids;
    std::vector<int> labels;
    std::vector<std::size_t> order;
    std::size_t cursor = 0;
    AdamState head_state;
    double epoch_loss = 0.0;
    std::size_t epoch_steps = 0;

    std::size_t batches(std::size_t batch_size) const { return (ids.size() + batch_size - 1) / batch_size; }

    LabeledBatch next(std::size_t batch_size, Rng& rng) {
        if (cursor == 0) {
            order.resize(ids.size());
            for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
            rng.shuffle(order);
        }
        LabeledBatch b;
        const std::size_t end = std::min(order.size(), cursor + batch_size);
        for (std::size_t i = cursor; i < end; ++i) {
            b.ids.push_back(ids[order[i]]);
            b.labels.push_back(labels[order[i]]);
        }
        cursor = end == order.size() ? 0 : end;
        return b;
    }
};

}  // namespace

MTLModel init_model(const std::vector<TaskSplit>& tasks, EncoderConfig encoder,
                    const TrainingConfig& training, JobKey job) {
    check_tasks(tasks);
    training.validate();
    MTLModel model;
    model.tokenizer = build_task_tokenizer(tasks, training.max_vocab,
                                           static_cast<std::size_t>(encoder.max_length));
    encoder.vocab_size = static_cast<int>(model.tokenizer.size());
    model.config = encoder;
    model.shared = init_encoder_params(encoder, derive_seed(training.seed, "init", job.run, job.fold));
    for (const auto& t : tasks) {
        const auto& task = t.dataset->task;
        model.heads.emplace(task.id, init_head(task.id, task.label_set, encoder.output_dim,
                                               derive_seed(training.seed, head_purpose(task.id),
                                                           job.run, job.fold)));
    }
    return model;
}

double evaluate_macro_f1(const MTLModel& model, const Dataset& ds, const std::vector<std::string>& ids) {
    if (ids.empty()) return 0.0;
    std::vector<std::string> texts;
    std::vector<int> gold;
    for (std::size_t i : record_indices(ds, ids)) {
        texts.push_back(ds.records[i].text);
        gold.push_back(static_cast<int>(ds.task.label_index(ds.records[i].label)));
    }
    const auto predicted = model.predict(ds.task.id, texts);
    return macro_weighted_f1(confusion(gold, predicted, ds.task.label_set)).macro_f1;
}

TrainingHistory train_model(MTLModel& model, const std::vector<TaskSplit>& tasks,
                            const TrainingConfig& training, JobKey job) {
    check_tasks(tasks);
    training.validate();
    check_shapes(model.shared, model.config);

    std::vector<TaskStream> streams(tasks.size());
    for (std::size_t t = 0; t < tasks.size(); ++t) {
        auto& s = streams[t];
        s.split = &tasks[t];
        const Dataset& ds = *tasks[t].dataset;
        s.task = ds.task.id;
        for (std::size_t i : record_indices(ds, tasks[t].train_ids)) {
            s.ids.push_back(model.tokenizer.encode(ds.records[i].text));
            s.labels.push_back(static_cast<int>(ds.task.label_index(ds.records[i].label)));
        }
        s.head_state = AdamState::for_params(model.head(s.task).params);
    }
    AdamState shared_state = AdamState::for_params(model.shared);
    Rng rng(derive_seed(training.seed, "shuffle", job.run, job.fold));

    std::size_t largest = 0;
    for (const auto& s : streams) largest = std::max(largest, s.batches(training.batch_size));

    TrainingHistory history;
    std::size_t step = 0;
    for (std::size_t epoch = 1; epoch <= training.epochs; ++epoch) {
        for (auto& s : streams) {
            s.epoch_loss = 0.0;
            s.epoch_steps = 0;
        }
        for (std::size_t b = 0; b < largest; ++b) {
            for (auto& s : streams) {
                const LabeledBatch batch = s.next(training.batch_size, rng);
                TaskHead& head = model.heads.at(s.task);
                const GradientResult g = gradient(batch, model.shared, model.config, head);
                adam_step(model.shared, g.encoder, shared_state, training.learning_rate, training.adam);
                adam_step(head.params, g.head, s.head_state, training.learning_rate, training.adam);
                s.epoch_loss += g.loss;
                ++s.epoch_steps;
                ++step;
                ++history.steps[s.task];
            }
        }
        for (auto& s : streams) {
            TrainingEvent e;
            e.run = job.run;
            e.fold = job.fold;
            e.task = s.task;
            e.epoch = epoch;
            e.step = step;
            e.loss = s.epoch_steps ? s.epoch_loss / static_cast<double>(s.epoch_steps) : 0.0;
            if (!s.split->val_ids.empty()) {
                e.val_macro_f1 = evaluate_macro_f1(model, *s.split->dataset, s.split->val_ids);
                history.val_macro_f1[s.task].push_back(*e.val_macro_f1);
            }
            history.epoch_loss[s.task].push_back(e.loss);
            history.events.push_back(std::move(e));
        }
    }
    return history;
}

TrainResult train_stl(const TaskSplit& task, const EncoderConfig& encoder, const TrainingConfig& training,
                      JobKey job) {
    TrainResult r;
    r.model = init_model({task}, encoder, training, job);
    r.history = train_model(r.model, {task}, training, job);
    return r;
}

TrainResult train_mtl(const std::vector<TaskSplit>& tasks, const EncoderConfig& encoder,
                      const TrainingConfig& training, JobKey job) {
    if (tasks.size() < 2) throw std::invalid_argument("multi-task training needs at least two tasks");
    TrainResult r;
    r.model = init_model(tasks, encoder, training, job);
    r.history = train_model(r.model, tasks, training, job);
    return r;
}

Eigen::VectorXd SharedEncoder::encode(std::string_view text) const {
    return encode_text(text, tokenizer, params, config);
}

SharedEncoder transfer_shared(const MTLModel& model) {
    return {model.config, model.tokenizer, model.shared};
}

}  // namespace hatemtl
