#include "hatemtl/encoder.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "hatemtl/rng.hpp"
#include "hatemtl/textfeat.hpp"

namespace hatemtl {

using ad::Matrix;
using ad::Tape;
using ad::Var;

// ---------------------------------------------------------------------------
// Tokenizer

Tokenizer Tokenizer::build(const std::vector<std::vector<std::string>>& corpus,
                           std::size_t max_vocab, std::size_t max_length) {
    if (corpus.empty()) throw std::invalid_argument("Tokenizer::build: empty corpus");
    if (max_length < 1) throw std::invalid_argument("Tokenizer::build: max_length must be >= 1");
    std::unordered_map<std::string, std::size_t> freq;
    for (const auto& doc : corpus) {
        for (const auto& tok : doc) ++freq[tok];
    }
    std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    if (ranked.size() > max_vocab) ranked.resize(max_vocab);

    Tokenizer t;
    t.max_length_ = max_length;
    t.vocab_ = {"[PAD]", "[UNK]", "[START]"};
    for (auto& [tok, n] : ranked) t.vocab_.push_back(std::move(tok));
    t.rebuild_index();
    return t;
}

std::vector<std::string> Tokenizer::split(std::string_view text) {
    std::vector<std::string> out;
    for (const auto& tok : tokenize(text)) out.push_back(to_lower(tok));
    return out;
}

void Tokenizer::rebuild_index() {
    index_.clear();
    // Specials are not reachable from text.
    for (std::size_t i = 3; i < vocab_.size(); ++i) index_.emplace(vocab_[i], static_cast<int>(i));
}

int Tokenizer::id_of(std::string_view token) const {
    auto it = index_.find(std::string(token));
    return it == index_.end() ? kUnknown : it->second;
}

std::vector<int> Tokenizer::encode_tokens(const std::vector<std::string>& tokens) const {
    std::vector<int> ids(max_length_, kPad);
    ids[0] = kStart;
    for (std::size_t i = 0; i < tokens.size() && i + 1 < max_length_; ++i) {
        ids[i + 1] = id_of(tokens[i]);
    }
    return ids;
}

std::vector<int> Tokenizer::encode(std::string_view text) const { return encode_tokens(split(text)); }

nlohmann::json Tokenizer::to_json() const {
    return {{"max_length", max_length_}, {"vocabulary", vocab_}};
}

Tokenizer Tokenizer::from_json(const nlohmann::json& j) {
    Tokenizer t;
    t.max_length_ = j.at("max_length").get<std::size_t>();
    t.vocab_ = j.at("vocabulary").get<std::vector<std::string>>();
    if (t.vocab_.size() < 3) throw std::runtime_error("tokenizer vocabulary lacks special ids");
    t.rebuild_index();
    return t;
}

std::size_t active_length(std::span<const int> ids) {
    std::size_t n = 0;
    while (n < ids.size() && ids[n] != Tokenizer::kPad) ++n;
    return n;
}

// ---------------------------------------------------------------------------
// Config

std::string to_string(EncoderKind kind) {
    switch (kind) {
        case EncoderKind::transformer: return "transformer";
        case EncoderKind::cnn: return "cnn";
        case EncoderKind::gru: return "gru";
    }
    return "unknown";
}

EncoderKind parse_encoder_kind(std::string_view name) {
    if (name == "transformer") return EncoderKind::transformer;
    if (name == "cnn") return EncoderKind::cnn;
    if (name == "gru") return EncoderKind::gru;
    throw std::invalid_argument("unknown encoder kind '" + std::string(name) + "'");
}

void EncoderConfig::validate() const {
    auto require = [](bool ok, const char* what) {
        if (!ok) throw std::invalid_argument(std::string("EncoderConfig: ") + what);
    };
    require(vocab_size >= 3, "vocab_size must include the special ids");
    require(max_length >= 1, "max_length must be >= 1");
    require(embedding_dim >= 1 && output_dim >= 1, "dimensions must be positive");
    switch (kind) {
        case EncoderKind::transformer:
            require(transformer.layers >= 1 && transformer.heads >= 1, "layers/heads must be >= 1");
            require(embedding_dim % transformer.heads == 0, "embedding_dim must divide by heads");
            require(hidden_dim >= 1, "hidden_dim must be >= 1");
            break;
        case EncoderKind::cnn:
            require(cnn.num_filters >= 1 && !cnn.kernel_widths.empty(), "cnn needs filters and widths");
            for (int w : cnn.kernel_widths) require(w >= 1, "kernel widths must be >= 1");
            break;
        case EncoderKind::gru:
            require(gru.hidden_nodes >= 1, "gru hidden_nodes must be >= 1");
            break;
    }
}

int EncoderConfig::pooled_dim() const {
    switch (kind) {
        case EncoderKind::transformer: return embedding_dim;
        case EncoderKind::cnn: return cnn.num_filters * static_cast<int>(cnn.kernel_widths.size());
        case EncoderKind::gru: return gru.hidden_nodes;
    }
    return 0;
}

nlohmann::ordered_json EncoderConfig::to_json() const {
    nlohmann::ordered_json j;
    j["kind"] = to_string(kind);
    j["vocab_size"] = vocab_size;
    j["max_length"] = max_length;
    j["embedding_dim"] = embedding_dim;
    j["hidden_dim"] = hidden_dim;
    j["transformer"] = {{"layers", transformer.layers}, {"heads", transformer.heads}};
    j["cnn"] = {{"num_filters", cnn.num_filters}, {"kernel_widths", cnn.kernel_widths}};
    j["gru"] = {{"hidden_nodes", gru.hidden_nodes}};
    j["output_dim"] = output_dim;
    return j;
}

EncoderConfig EncoderConfig::from_json(const nlohmann::json& j) {
    EncoderConfig c;
    c.kind = parse_encoder_kind(j.value("kind", std::string("transformer")));
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.max_length = j.value("max_length", c.max_length);
    c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
    c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
    if (j.contains("transformer")) {
        c.transformer.layers = j["transformer"].value("layers", c.transformer.layers);
        c.transformer.heads = j["transformer"].value("heads", c.transformer.heads);
    }
    if (j.contains("cnn")) {
        c.cnn.num_filters = j["cnn"].value("num_filters", c.cnn.num_filters);
        c.cnn.kernel_widths = j["cnn"].value("kernel_widths", c.cnn.kernel_widths);
    }
    if (j.contains("gru")) c.gru.hidden_nodes = j["gru"].value("hidden_nodes", c.gru.hidden_nodes);
    c.output_dim = j.value("output_dim", c.output_dim);
    return c;
}

// ---------------------------------------------------------------------------
// ParamSet

Matrix& ParamSet::add(std::string name, Eigen::Index rows, Eigen::Index cols) {
    if (index_.count(name)) throw std::invalid_argument("ParamSet: duplicate tensor " + name);
    index_.emplace(name, tensors_.size());
    tensors_.push_back({std::move(name), Matrix::Zero(rows, cols)});
    return tensors_.back().value;
}

Matrix& ParamSet::at(std::string_view name) {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw ShapeError("missing tensor '" + std::string(name) + "'");
    return tensors_[it->second].value;
}

const Matrix& ParamSet::at(std::string_view name) const {
    return const_cast<ParamSet*>(this)->at(name);
}

bool ParamSet::contains(std::string_view name) const { return index_.count(std::string(name)) > 0; }

std::size_t ParamSet::flat_size() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += static_cast<std::size_t>(t.value.size());
    return n;
}

double& ParamSet::flat(std::size_t i) {
    for (auto& t : tensors_) {
        const auto n = static_cast<std::size_t>(t.value.size());
        if (i < n) return t.value.data()[i];
        i -= n;
    }
    throw std::out_of_range("ParamSet::flat: index out of range");
}

double ParamSet::flat(std::size_t i) const { return const_cast<ParamSet*>(this)->flat(i); }

ParamSet ParamSet::zeros_like() const {
    ParamSet out;
    for (const auto& t : tensors_) out.add(t.name, t.value.rows(), t.value.cols());
    return out;
}

void ParamSet::set_zero() {
    for (auto& t : tensors_) t.value.setZero();
}

bool ParamSet::all_finite() const {
    return std::all_of(tensors_.begin(), tensors_.end(),
                       [](const NamedTensor& t) { return t.value.allFinite(); });
}

bool ParamSet::same_shapes(const ParamSet& other) const {
    if (tensors_.size() != other.tensors_.size()) return false;
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
        const auto& a = tensors_[i];
        const auto& b = other.tensors_[i];
        if (a.name != b.name || a.value.rows() != b.value.rows() || a.value.cols() != b.value.cols()) {
            return false;
        }
    }
    return true;
}

void ParamSet::round_to_float() {
    for (auto& t : tensors_) {
        for (Eigen::Index i = 0; i < t.value.size(); ++i) {
            t.value.data()[i] = static_cast<double>(static_cast<float>(t.value.data()[i]));
        }
    }
}

bool ParamSet::operator==(const ParamSet& other) const {
    if (!same_shapes(other)) return false;
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
        if (tensors_[i].value != other.tensors_[i].value) return false;
    }
    return true;
}

namespace {

struct TensorSpec {
    std::string name;
    Eigen::Index rows;
    Eigen::Index cols;
    enum class Init { embedding, glorot, zero, one } init;
};

std::vector<TensorSpec> encoder_layout(const EncoderConfig& c) {
    using I = TensorSpec::Init;
    const Eigen::Index e = c.embedding_dim;
    std::vector<TensorSpec> specs{{"embed/token", c.vocab_size, e, I::embedding}};
    auto dense = [&](const std::string& name, Eigen::Index in, Eigen::Index out) {
        specs.push_back({name + "/weight", in, out, I::glorot});
        specs.push_back({name + "/bias", 1, out, I::zero});
    };
    switch (c.kind) {
        case EncoderKind::transformer:
            specs.push_back({"embed/position", c.max_length, e, I::embedding});
            for (int l = 0; l < c.transformer.layers; ++l) {
                const std::string p = "layer" + std::to_string(l);
                dense(p + "/attn/query", e, e);
                dense(p + "/attn/key", e, e);
                dense(p + "/attn/value", e, e);
                dense(p + "/attn/out", e, e);
                specs.push_back({p + "/norm1/gain", 1, e, I::one});
                specs.push_back({p + "/norm1/bias", 1, e, I::zero});
                dense(p + "/ffn/in", e, c.hidden_dim);
                dense(p + "/ffn/out", c.hidden_dim, e);
                specs.push_back({p + "/norm2/gain", 1, e, I::one});
                specs.push_back({p + "/norm2/bias", 1, e, I::zero});
            }
            break;
        case EncoderKind::cnn:
            for (int w : c.cnn.kernel_widths) {
                dense("conv" + std::to_string(w), w * e, c.cnn.num_filters);
            }
            break;
        case EncoderKind::gru: {
            const Eigen::Index h = c.gru.hidden_nodes;
            for (const char* gate : {"update", "reset", "candidate"}) {
                const std::string p = std::string("gru/") + gate;
                specs.push_back({p + "/input", e, h, I::glorot});
                specs.push_back({p + "/recurrent", h, h, I::glorot});
                specs.push_back({p + "/bias", 1, h, I::zero});
            }
            break;
        }
    }
    dense("proj", c.pooled_dim(), c.output_dim);
    return specs;
}

void fill(Matrix& m, TensorSpec::Init init, Rng& rng) {
    using I = TensorSpec::Init;
    switch (init) {
        case I::zero: m.setZero(); break;
        case I::one: m.setOnes(); break;
        case I::embedding:
            for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-0.05, 0.05);
            break;
        case I::glorot: {
            const double limit = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
            for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-limit, limit);
            break;
        }
    }
}

}  // namespace

EncoderParams init_encoder_params(const EncoderConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(seed);
    EncoderParams p;
    for (const auto& spec : encoder_layout(config)) {
        fill(p.add(spec.name, spec.rows, spec.cols), spec.init, rng);
    }
    p.at("embed/token").row(Tokenizer::kPad).setZero();
    p.round_to_float();
    return p;
}

void check_shapes(const EncoderParams& params, const EncoderConfig& config) {
    const auto layout = encoder_layout(config);
    if (layout.size() != params.tensors().size()) {
        throw ShapeError("expected " + std::to_string(layout.size()) + " encoder tensors, found " +
                         std::to_string(params.tensors().size()));
    }
    for (std::size_t i = 0; i < layout.size(); ++i) {
        const auto& t = params.tensors()[i];
        if (t.name != layout[i].name || t.value.rows() != layout[i].rows ||
            t.value.cols() != layout[i].cols) {
            throw ShapeError("tensor '" + t.name + "' is " + std::to_string(t.value.rows()) + "x" +
                             std::to_string(t.value.cols()) + ", expected '" + layout[i].name +
                             "' " + std::to_string(layout[i].rows) + "x" +
                             std::to_string(layout[i].cols));
        }
    }
}

TaskHead init_head(const std::string& task, const std::vector<std::string>& labels, int input_dim,
                   std::uint64_t seed) {
    if (labels.empty()) throw std::invalid_argument("init_head: no labels");
    TaskHead h;
    h.task = task;
    h.labels = labels;
    Rng rng(seed);
    fill(h.params.add("weight", input_dim, static_cast<Eigen::Index>(labels.size())),
         TensorSpec::Init::glorot, rng);
    h.params.add("bias", 1, static_cast<Eigen::Index>(labels.size()));
    h.params.round_to_float();
    return h;
}

// ---------------------------------------------------------------------------
// Forward

BoundParams::BoundParams(Tape& tape, const ParamSet& params, ParamSet* grads) {
    if (grads && !grads->same_shapes(params)) throw ShapeError("gradient buffer shape mismatch");
    for (std::size_t i = 0; i < params.tensors().size(); ++i) {
        const auto& t = params.tensors()[i];
        Matrix* g = grads ? &grads->tensors()[i].value : nullptr;
        vars_.emplace(t.name, tape.param(t.value, g));
    }
}

Var BoundParams::operator()(std::string_view name) const {
    auto it = vars_.find(std::string(name));
    if (it == vars_.end()) throw ShapeError("unbound tensor '" + std::string(name) + "'");
    return it->second;
}

namespace {

Var dense(Tape& t, const BoundParams& p, const std::string& name, Var x) {
    return ad::add_row(t, ad::matmul(t, x, p(name + "/weight")), p(name + "/bias"));
}

Var transformer_pool(Tape& t, const BoundParams& p, const EncoderConfig& c, Var x, Eigen::Index n) {
    x = ad::add(t, x, ad::slice_rows(t, p("embed/position"), 0, n));
    const int heads = c.transformer.heads;
    const Eigen::Index dh = c.embedding_dim / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int l = 0; l < c.transformer.layers; ++l) {
        const std::string pre = "layer" + std::to_string(l);
        const Var q = dense(t, p, pre + "/attn/query", x);
        const Var k = dense(t, p, pre + "/attn/key", x);
        const Var v = dense(t, p, pre + "/attn/value", x);
        std::vector<Var> outs;
        outs.reserve(static_cast<std::size_t>(heads));
        for (int h = 0; h < heads; ++h) {
            const Var qh = ad::slice_cols(t, q, h * dh, dh);
            const Var kh = ad::slice_cols(t, k, h * dh, dh);
            const Var vh = ad::slice_cols(t, v, h * dh, dh);
            const Var att = ad::softmax_rows(t, ad::scale(t, ad::matmul_bt(t, qh, kh), inv_sqrt));
            outs.push_back(ad::matmul(t, att, vh));
        }
        const Var merged = heads == 1 ? outs[0] : ad::concat_cols(t, outs);
        const Var attn = dense(t, p, pre + "/attn/out", merged);
        x = ad::layer_norm(t, ad::add(t, x, attn), p(pre + "/norm1/gain"), p(pre + "/norm1/bias"));
        const Var ff = dense(t, p, pre + "/ffn/out", ad::relu(t, dense(t, p, pre + "/ffn/in", x)));
        x = ad::layer_norm(t, ad::add(t, x, ff), p(pre + "/norm2/gain"), p(pre + "/norm2/bias"));
    }
    return ad::mean_rows(t, x);
}

Var cnn_pool(Tape& t, const BoundParams& p, const EncoderConfig& c, Var x, Eigen::Index n) {
    std::vector<Var> pooled;
    for (int w : c.cnn.kernel_widths) {
        Var in = x;
        // Sequences shorter than the kernel are zero-padded to one full window.
        if (n < w) in = ad::concat_rows(t, {x, t.constant(Matrix::Zero(w - n, c.embedding_dim))});
        const Var windows = ad::unfold_rows(t, in, w);
        const Var maps = ad::relu(t, dense(t, p, "conv" + std::to_string(w), windows));
        pooled.push_back(ad::max_rows(t, maps));
    }
    return pooled.size() == 1 ? pooled[0] : ad::concat_cols(t, pooled);
}

Var gru_pool(Tape& t, const BoundParams& p, const EncoderConfig& c, Var x, Eigen::Index n) {
    const Eigen::Index hdim = c.gru.hidden_nodes;
    auto projected = [&](const char* gate) {
        const std::string pre = std::string("gru/") + gate;
        return ad::add_row(t, ad::matmul(t, x, p(pre + "/input")), p(pre + "/bias"));
    };
    const Var xz = projected("update");
    const Var xr = projected("reset");
    const Var xn = projected("candidate");
    const Var uz = p("gru/update/recurrent");
    const Var ur = p("gru/reset/recurrent");
    const Var un = p("gru/candidate/recurrent");
    Var h = t.constant(Matrix::Zero(1, hdim));
    for (Eigen::Index s = 0; s < n; ++s) {
        const Var z = ad::sigmoid(t, ad::add(t, ad::slice_rows(t, xz, s, 1), ad::matmul(t, h, uz)));
        const Var r = ad::sigmoid(t, ad::add(t, ad::slice_rows(t, xr, s, 1), ad::matmul(t, h, ur)));
        const Var cand = ad::tanh(
            t, ad::add(t, ad::slice_rows(t, xn, s, 1), ad::matmul(t, ad::hadamard(t, r, h), un)));
        // h' = (1 - z) * cand + z * h
        h = ad::add(t, cand, ad::hadamard(t, z, ad::sub(t, h, cand)));
    }
    return h;
}

}  // namespace

Var pooled_graph(Tape& tape, const BoundParams& params, const EncoderConfig& config,
                 std::span<const int> ids) {
    std::size_t n = active_length(ids);
    std::vector<int> tokens(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n));
    if (tokens.empty()) tokens.push_back(Tokenizer::kStart);
    if (tokens.size() > static_cast<std::size_t>(config.max_length)) {
        tokens.resize(static_cast<std::size_t>(config.max_length));
    }
    const auto len = static_cast<Eigen::Index>(tokens.size());
    const Var x = ad::gather_rows(tape, params("embed/token"), std::move(tokens));
    switch (config.kind) {
        case EncoderKind::transformer: return transformer_pool(tape, params, config, x, len);
        case EncoderKind::cnn: return cnn_pool(tape, params, config, x, len);
        case EncoderKind::gru: return gru_pool(tape, params, config, x, len);
    }
    throw std::logic_error("unreachable encoder kind");
}

Var encode_graph(Tape& tape, const BoundParams& params, const EncoderConfig& config,
                 std::span<const int> ids) {
    return ad::relu(tape, dense(tape, params, "proj", pooled_graph(tape, params, config, ids)));
}

Eigen::VectorXd encode_ids(std::span<const int> ids, const EncoderParams& params,
                           const EncoderConfig& config) {
    Tape tape;
    const BoundParams bound(tape, params);
    const Var out = encode_graph(tape, bound, config, ids);
    return tape.value(out).row(0).transpose();
}

Eigen::VectorXd encode_text(std::string_view text, const Tokenizer& tokenizer,
                            const EncoderParams& params, const EncoderConfig& config) {
    const auto ids = tokenizer.encode(text);
    return encode_ids(ids, params, config);
}

Eigen::VectorXd intra_user_representation(const std::vector<std::string>& history,
                                          std::size_t m_cap, std::size_t batch,
                                          const EncodeFn& encode, Eigen::Index dim) {
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(dim);
    const std::size_t n = std::min(m_cap, history.size());
    if (n == 0) return sum;
    if (batch == 0) batch = n;
    for (std::size_t start = 0; start < n; start += batch) {
        const std::size_t end = std::min(n, start + batch);
        for (std::size_t i = start; i < end; ++i) sum += encode(history[i]);
    }
    return sum / static_cast<double>(n);
}

Eigen::VectorXd inter_user_representation(const std::vector<std::string>& tweets,
                                          const EncodeFn& encode, Eigen::Index dim) {
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(dim);
    if (tweets.empty()) return sum;
    for (const auto& t : tweets) sum += encode(t);
    return sum / static_cast<double>(tweets.size());
}

LabeledBatch make_batch(const std::vector<std::string>& texts, const std::vector<int>& labels,
                        const Tokenizer& tokenizer) {
    if (texts.size() != labels.size()) throw std::invalid_argument("make_batch: size mismatch");
    LabeledBatch b;
    b.labels = labels;
    for (const auto& t : texts) b.ids.push_back(tokenizer.encode(t));
    return b;
}

namespace {

Var batch_logits(Tape& tape, const BoundParams& enc, const BoundParams& head,
                 const EncoderConfig& config, const std::vector<std::vector<int>>& ids) {
    std::vector<Var> reps;
    reps.reserve(ids.size());
    for (const auto& seq : ids) reps.push_back(encode_graph(tape, enc, config, seq));
    const Var stacked = reps.size() == 1 ? reps[0] : ad::concat_rows(tape, reps);
    return ad::add_row(tape, ad::matmul(tape, stacked, head("weight")), head("bias"));
}

void check_labels(const LabeledBatch& batch, const TaskHead& head) {
    if (batch.ids.size() != batch.labels.size() || batch.labels.empty()) {
        throw std::invalid_argument("batch is empty or misaligned");
    }
    for (int l : batch.labels) {
        if (l < 0 || static_cast<std::size_t>(l) >= head.num_classes()) {
            throw std::out_of_range("label " + std::to_string(l) + " out of range for head '" +
                                    head.task + "'");
        }
    }
}

}  // namespace

ForwardResult forward_with_loss(const LabeledBatch& batch, const EncoderParams& params,
                                const EncoderConfig& config, const TaskHead& head) {
    check_labels(batch, head);
    Tape tape;
    const BoundParams enc(tape, params);
    const BoundParams hp(tape, head.params);
    const Var logits = batch_logits(tape, enc, hp, config, batch.ids);
    const Var loss = ad::softmax_cross_entropy(tape, logits, batch.labels);
    return {tape.value(loss)(0, 0), tape.value(logits)};
}

GradientResult gradient(const LabeledBatch& batch, const EncoderParams& params,
                        const EncoderConfig& config, const TaskHead& head) {
    check_labels(batch, head);
    GradientResult r;
    r.encoder = params.zeros_like();
    r.head = head.params.zeros_like();
    Tape tape;
    const BoundParams enc(tape, params, &r.encoder);
    const BoundParams hp(tape, head.params, &r.head);
    const Var logits = batch_logits(tape, enc, hp, config, batch.ids);
    const Var loss = ad::softmax_cross_entropy(tape, logits, batch.labels);
    tape.backward(loss);
    r.loss = tape.value(loss)(0, 0);
    r.logits = tape.value(logits);
    return r;
}

Matrix predict_logits(const std::vector<std::vector<int>>& ids, const EncoderParams& params,
                      const EncoderConfig& config, const TaskHead& head) {
    Matrix out(static_cast<Eigen::Index>(ids.size()), static_cast<Eigen::Index>(head.num_classes()));
    for (std::size_t i = 0; i < ids.size(); ++i) {
        Tape tape;
        const BoundParams enc(tape, params);
        const BoundParams hp(tape, head.params);
        const Var logits = batch_logits(tape, enc, hp, config, {ids[i]});
        out.row(static_cast<Eigen::Index>(i)) = tape.value(logits).row(0);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

constexpr char kMagic[8] = {'H', 'M', 'T', 'L', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_le(std::istream& in, int bytes) {
    unsigned char b[8] = {};
    in.read(reinterpret_cast<char*>(b), bytes);
    if (!in) throw std::runtime_error("checkpoint truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

void write_tensor(std::ostream& out, const Matrix& m) {
    // Row-major float32, little-endian.
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            write_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(m(r, c))));
        }
    }
}

void read_tensor(std::istream& in, Matrix& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            m(r, c) = static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(read_le(in, 4))));
        }
    }
}

nlohmann::json read_manifest(std::istream& in, const std::filesystem::path& path) {
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0) {
        throw std::runtime_error(path.string() + ": not a checkpoint file");
    }
    const auto version = static_cast<std::uint32_t>(read_le(in, 4));
    if (version != kVersion) {
        throw std::runtime_error(path.string() + ": unsupported checkpoint version " +
                                 std::to_string(version));
    }
    const std::uint64_t len = read_le(in, 8);
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (!in) throw std::runtime_error(path.string() + ": checkpoint truncated");
    return nlohmann::json::parse(text);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    check_shapes(ck.encoder, ck.config);
    nlohmann::ordered_json manifest;
    manifest["format"] = "hatemtl-checkpoint";
    manifest["version"] = kVersion;
    manifest["seed"] = ck.seed;
    manifest["config"] = ck.config.to_json();
    manifest["tokenizer"] = ck.tokenizer.to_json();
    auto& table = manifest["tensors"] = nlohmann::ordered_json::array();
    std::uint64_t offset = 0;
    auto add_entry = [&](const std::string& name, const Matrix& m) {
        table.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}, {"offset", offset}});
        offset += static_cast<std::uint64_t>(m.size()) * 4;
    };
    for (const auto& t : ck.encoder.tensors()) add_entry("encoder/" + t.name, t.value);
    auto& heads = manifest["heads"] = nlohmann::ordered_json::array();
    for (const auto& h : ck.heads) {
        heads.push_back({{"task", h.task}, {"labels", h.labels}});
        for (const auto& t : h.params.tensors()) add_entry("head/" + h.task + "/" + t.name, t.value);
    }
    manifest["extra"] = ck.extra;

    const std::string text = manifest.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(kMagic, 8);
    write_u32(out, kVersion);
    write_u64(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& t : ck.encoder.tensors()) write_tensor(out, t.value);
    for (const auto& h : ck.heads) {
        for (const auto& t : h.params.tensors()) write_tensor(out, t.value);
    }
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

nlohmann::json read_checkpoint_manifest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return read_manifest(in, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    const nlohmann::json manifest = read_manifest(in, path);

    Checkpoint ck;
    ck.seed = manifest.at("seed").get<std::uint64_t>();
    ck.config = EncoderConfig::from_json(manifest.at("config"));
    ck.config.validate();
    ck.tokenizer = Tokenizer::from_json(manifest.at("tokenizer"));
    if (manifest.contains("extra")) ck.extra = manifest["extra"];

    // Expected layout: encoder tensors from the config, then each head.
    ck.encoder = init_encoder_params(ck.config, 0);
    for (const auto& h : manifest.at("heads")) {
        TaskHead head;
        head.task = h.at("task").get<std::string>();
        head.labels = h.at("labels").get<std::vector<std::string>>();
        head.params.add("weight", ck.config.output_dim, static_cast<Eigen::Index>(head.labels.size()));
        head.params.add("bias", 1, static_cast<Eigen::Index>(head.labels.size()));
        ck.heads.push_back(std::move(head));
    }
    std::vector<std::pair<std::string, Matrix*>> expected;
    for (auto& t : ck.encoder.tensors()) expected.emplace_back("encoder/" + t.name, &t.value);
    for (auto& h : ck.heads) {
        for (auto& t : h.params.tensors()) expected.emplace_back("head/" + h.task + "/" + t.name, &t.value);
    }
    const auto& table = manifest.at("tensors");
    if (table.size() != expected.size()) {
        throw ShapeError(path.string() + ": shape table has " + std::to_string(table.size()) +
                         " tensors, config implies " + std::to_string(expected.size()));
    }
    for (std::size_t i = 0; i < expected.size(); ++i) {
        const auto& entry = table[i];
        const auto name = entry.at("name").get<std::string>();
        const auto rows = entry.at("rows").get<Eigen::Index>();
        const auto cols = entry.at("cols").get<Eigen::Index>();
        if (name != expected[i].first || rows != expected[i].second->rows() ||
            cols != expected[i].second->cols()) {
            throw ShapeError(path.string() + ": tensor '" + name + "' (" + std::to_string(rows) +
                             "x" + std::to_string(cols) + ") does not match expected '" +
                             expected[i].first + "' (" + std::to_string(expected[i].second->rows()) +
                             "x" + std::to_string(expected[i].second->cols()) + ")");
        }
    }
    for (auto& [name, m] : expected) read_tensor(in, *m);
    if (in.peek() != std::char_traits<char>::eof()) {
        throw std::runtime_error(path.string() + ": trailing bytes after tensor data");
    }
    if (!ck.encoder.all_finite()) throw std::runtime_error(path.string() + ": non-finite parameters");
    return ck;
}

std::size_t load_embeddings(const std::filesystem::path& path, const Tokenizer& tokenizer,
                            EncoderParams& params, const EncoderConfig& config) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    Matrix& table = params.at("embed/token");
    std::size_t set = 0;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string token;
        ls >> token;
        std::vector<double> values;
        double v;
        while (ls >> v) values.push_back(v);
        if (!ls.eof()) {
            throw std::runtime_error(path.string() + ": line " + std::to_string(line_no) +
                                     ": malformed number");
        }
        if (values.size() != static_cast<std::size_t>(config.embedding_dim)) {
            throw ShapeError(path.string() + ": line " + std::to_string(line_no) + " has " +
                             std::to_string(values.size()) + " values, expected " +
                             std::to_string(config.embedding_dim));
        }
        const int id = tokenizer.id_of(token);
        if (id == Tokenizer::kUnknown) continue;
        for (std::size_t c = 0; c < values.size(); ++c) {
            table(id, static_cast<Eigen::Index>(c)) = static_cast<double>(static_cast<float>(values[c]));
        }
        ++set;
    }
    return set;
}

}  // namespace hatemtl
