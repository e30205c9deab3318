#include "hatemtl/fusion.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "hatemtl/rng.hpp"

namespace hatemtl {

using ad::Matrix;
using ad::Tape;
using ad::Var;

// ---------------------------------------------------------------------------
// Masks and concatenation

FeatureMask FeatureMask::parse(std::string_view text) {
    if (text == "none") return none();
    if (text == "all") return all();
    FeatureMask m;
    std::size_t start = 0;
    while (start <= text.size()) {
        std::size_t end = text.find_first_of("+,", start);
        if (end == std::string_view::npos) end = text.size();
        const auto part = text.substr(start, end - start);
        if (part == "intra") {
            m.intra = true;
        } else if (part == "inter") {
            m.inter = true;
        } else if (part == "tb") {
            m.tb = true;
        } else {
            throw std::invalid_argument("unknown feature block '" + std::string(part) + "'");
        }
        start = end + 1;
    }
    return m;
}

std::string FeatureMask::name() const {
    if (!any()) return "none";
    if (intra && inter && tb) return "all";
    std::string out;
    auto add = [&](bool on, const char* n) {
        if (!on) return;
        if (!out.empty()) out += '+';
        out += n;
    };
    add(intra, "intra");
    add(inter, "inter");
    add(tb, "tb");
    return out;
}

BlockDims BlockDims::of(const FeatureBundle& b) {
    BlockDims d;
    d.t = static_cast<std::size_t>(b.t.size());
    d.intra = static_cast<std::size_t>(b.f_intra.size());
    d.inter = static_cast<std::size_t>(b.f_inter.size());
    d.sparse = b.sparse_dim;
    return d;
}

std::vector<std::size_t> BlockDims::widths(const FeatureMask& mask) const {
    std::vector<std::size_t> w{t};
    if (mask.intra) w.push_back(intra);
    if (mask.inter) w.push_back(inter);
    if (mask.tb) {
        w.push_back(dense);
        w.push_back(sparse);
    }
    return w;
}

std::size_t BlockDims::total(const FeatureMask& mask) const {
    std::size_t n = 0;
    for (std::size_t w : widths(mask)) n += w;
    return n;
}

Eigen::VectorXd fuse(const FeatureBundle& b, const FeatureMask& mask) {
    const BlockDims dims = BlockDims::of(b);
    for (const auto& [idx, value] : b.f_tb.sparse) {
        if (idx >= b.sparse_dim) throw ShapeError("sparse index beyond the declared vocabulary");
        (void)value;
    }
    Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dims.total(mask)));
    Eigen::Index at = 0;
    auto put = [&](const Eigen::VectorXd& v) {
        out.segment(at, v.size()) = v;
        at += v.size();
    };
    put(b.t);
    if (mask.intra) put(b.f_intra);
    if (mask.inter) put(b.f_inter);
    if (mask.tb) {
        for (std::size_t i = 0; i < b.f_tb.dense.size(); ++i) out(at + static_cast<Eigen::Index>(i)) = b.f_tb.dense[i];
        at += static_cast<Eigen::Index>(b.f_tb.dense.size());
        for (const auto& [idx, value] : b.f_tb.sparse) out(at + idx) = value;
    }
    return out;
}

std::vector<Eigen::VectorXd> split_fused(const Eigen::VectorXd& fused, const BlockDims& dims,
                                         const FeatureMask& mask) {
    if (static_cast<std::size_t>(fused.size()) != dims.total(mask)) {
        throw ShapeError("fused vector has " + std::to_string(fused.size()) + " values, expected " +
                         std::to_string(dims.total(mask)));
    }
    std::vector<Eigen::VectorXd> out;
    Eigen::Index at = 0;
    for (std::size_t w : dims.widths(mask)) {
        out.push_back(fused.segment(at, static_cast<Eigen::Index>(w)));
        at += static_cast<Eigen::Index>(w);
    }
    return out;
}

nlohmann::ordered_json FusionConfig::to_json() const {
    return {{"sparse_projection", sparse_projection}, {"standardize_dense", standardize_dense}};
}

FusionConfig FusionConfig::from_json(const nlohmann::json& j) {
    FusionConfig c;
    c.sparse_projection = j.value("sparse_projection", c.sparse_projection);
    c.standardize_dense = j.value("standardize_dense", c.standardize_dense);
    return c;
}

// ---------------------------------------------------------------------------
// FusionModel

FusionModel::FusionModel(const FeatureMask& mask, const BlockDims& dims, const FusionConfig& config,
                         const TaskHead& head, std::uint64_t seed)
    : mask_(mask), dims_(dims), config_(config), labels_(head.labels), task_(head.task) {
    const Matrix& hw = head.params.at("weight");
    if (static_cast<std::size_t>(hw.rows()) != dims.t) {
        throw ShapeError("head input width " + std::to_string(hw.rows()) + " differs from t width " +
                         std::to_string(dims.t));
    }
    const auto classes = static_cast<Eigen::Index>(labels_.size());
    if (mask_.tb && config_.sparse_projection > 0) {
        Matrix& p = params_.add("tb/projection", static_cast<Eigen::Index>(dims.sparse),
                                static_cast<Eigen::Index>(config_.sparse_projection));
        Rng rng(seed);
        const double limit = std::sqrt(6.0 / static_cast<double>(p.rows() + p.cols()));
        for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = rng.uniform(-limit, limit);
    }
    Matrix& w = params_.add("weight", static_cast<Eigen::Index>(input_dim()), classes);
    w.topRows(hw.rows()) = hw;
    params_.add("bias", 1, classes) = head.params.at("bias");
    params_.round_to_float();
}

std::size_t FusionModel::input_dim() const {
    std::size_t n = dims_.t;
    if (mask_.intra) n += dims_.intra;
    if (mask_.inter) n += dims_.inter;
    if (mask_.tb) n += dims_.dense + (config_.sparse_projection > 0 ? config_.sparse_projection : dims_.sparse);
    return n;
}

void FusionModel::set_dense_stats(const std::array<double, TweetFeatureVector::kDenseSize>& mean,
                                  const std::array<double, TweetFeatureVector::kDenseSize>& scale) {
    for (double s : scale) {
        if (!(s > 0.0)) throw std::invalid_argument("dense feature scale must be positive");
    }
    mean_ = mean;
    scale_ = scale;
}

void FusionModel::check(const FeatureBundle& b) const {
    const BlockDims d = BlockDims::of(b);
    auto bad = [&](const char* block, std::size_t got, std::size_t want) {
        throw ShapeError(std::string("bundle ") + b.tweet_id + ": " + block + " has width " +
                         std::to_string(got) + ", model expects " + std::to_string(want));
    };
    if (d.t != dims_.t) bad("t", d.t, dims_.t);
    if (mask_.intra && d.intra != dims_.intra) bad("f_intra", d.intra, dims_.intra);
    if (mask_.inter && d.inter != dims_.inter) bad("f_inter", d.inter, dims_.inter);
    if (mask_.tb) {
        if (d.sparse != dims_.sparse) bad("f_tb sparse", d.sparse, dims_.sparse);
        for (const auto& [idx, v] : b.f_tb.sparse) {
            if (idx >= dims_.sparse) bad("f_tb sparse index", idx, dims_.sparse);
            (void)v;
        }
    }
}

Eigen::RowVectorXd FusionModel::dense_input(const FeatureBundle& b) const {
    std::size_t width = dims_.t + (mask_.intra ? dims_.intra : 0) + (mask_.inter ? dims_.inter : 0) +
                        (mask_.tb ? dims_.dense : 0);
    Eigen::RowVectorXd x(static_cast<Eigen::Index>(width));
    Eigen::Index at = 0;
    auto put = [&](const Eigen::VectorXd& v) {
        x.segment(at, v.size()) = v.transpose();
        at += v.size();
    };
    put(b.t);
    if (mask_.intra) put(b.f_intra);
    if (mask_.inter) put(b.f_inter);
    if (mask_.tb) {
        for (std::size_t i = 0; i < dims_.dense; ++i) x(at++) = (b.f_tb.dense[i] - mean_[i]) / scale_[i];
    }
    return x;
}

namespace {

/// rows(S) * P for sparse rows S; the gradient scatters into the touched rows of P.
Var sparse_project(Tape& t, std::vector<SparseVector> rows, Var projection) {
    const Matrix& p = t.value(projection);
    Matrix out = Matrix::Zero(static_cast<Eigen::Index>(rows.size()), p.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (const auto& [idx, v] : rows[r]) out.row(static_cast<Eigen::Index>(r)) += v * p.row(idx);
    }
    return t.record(std::move(out), {projection},
                    [projection, rows = std::move(rows)](Tape& t, const Matrix& g, const Matrix&) {
                        Matrix& dp = t.grad_storage(projection);
                        for (std::size_t r = 0; r < rows.size(); ++r) {
                            for (const auto& [idx, v] : rows[r]) {
                                dp.row(idx) += v * g.row(static_cast<Eigen::Index>(r));
                            }
                        }
                    });
}

}  // namespace

Var FusionModel::logits_graph(Tape& tape, const std::vector<const FeatureBundle*>& bundles,
                              ParamSet* grads) const {
    if (bundles.empty()) throw std::invalid_argument("no bundles");
    const BoundParams p(tape, params_, grads);
    Matrix dense(static_cast<Eigen::Index>(bundles.size()), 0);
    for (std::size_t i = 0; i < bundles.size(); ++i) {
        check(*bundles[i]);
        const Eigen::RowVectorXd row = dense_input(*bundles[i]);
        if (i == 0) dense.resize(dense.rows(), row.size());
        dense.row(static_cast<Eigen::Index>(i)) = row;
    }
    Var x = tape.constant(std::move(dense));
    if (mask_.tb) {
        Var sparse;
        if (config_.sparse_projection > 0) {
            std::vector<SparseVector> rows;
            rows.reserve(bundles.size());
            for (const auto* b : bundles) rows.push_back(b->f_tb.sparse);
            sparse = sparse_project(tape, std::move(rows), p("tb/projection"));
        } else {
            Matrix raw = Matrix::Zero(static_cast<Eigen::Index>(bundles.size()),
                                      static_cast<Eigen::Index>(dims_.sparse));
            for (std::size_t i = 0; i < bundles.size(); ++i) {
                for (const auto& [idx, v] : bundles[i]->f_tb.sparse) raw(static_cast<Eigen::Index>(i), idx) = v;
            }
            sparse = tape.constant(std::move(raw));
        }
        x = ad::concat_cols(tape, {x, sparse});
    }
    return ad::add_row(tape, ad::matmul(tape, x, p("weight")), p("bias"));
}

Matrix FusionModel::logits(const std::vector<const FeatureBundle*>& bundles) const {
    Tape tape;
    const Var out = logits_graph(tape, bundles, nullptr);
    return tape.value(out);
}

namespace {

nlohmann::json matrix_json(const Matrix& m) {
    std::vector<double> flat(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0, k = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) flat[static_cast<std::size_t>(k++)] = m(r, c);
    }
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"values", flat}};
}

}  // namespace

nlohmann::json FusionModel::to_json() const {
    nlohmann::ordered_json j;
    j["task"] = task_;
    j["labels"] = labels_;
    j["mask"] = mask_.name();
    j["dims"] = {{"t", dims_.t}, {"intra", dims_.intra}, {"inter", dims_.inter},
                 {"dense", dims_.dense}, {"sparse", dims_.sparse}};
    j["config"] = config_.to_json();
    j["dense_mean"] = mean_;
    j["dense_scale"] = scale_;
    auto& tensors = j["tensors"] = nlohmann::ordered_json::array();
    for (const auto& t : params_.tensors()) {
        nlohmann::ordered_json e;
        e["name"] = t.name;
        e.update(nlohmann::ordered_json(matrix_json(t.value)));
        tensors.push_back(std::move(e));
    }
    return nlohmann::json::parse(j.dump());
}

FusionModel FusionModel::from_json(const nlohmann::json& j) {
    FusionModel m;
    m.task_ = j.at("task").get<std::string>();
    m.labels_ = j.at("labels").get<std::vector<std::string>>();
    m.mask_ = FeatureMask::parse(j.at("mask").get<std::string>());
    const auto& d = j.at("dims");
    m.dims_ = {d.at("t").get<std::size_t>(), d.at("intra").get<std::size_t>(), d.at("inter").get<std::size_t>(),
               d.at("dense").get<std::size_t>(), d.at("sparse").get<std::size_t>()};
    m.config_ = FusionConfig::from_json(j.at("config"));
    m.mean_ = j.at("dense_mean").get<std::array<double, TweetFeatureVector::kDenseSize>>();
    m.scale_ = j.at("dense_scale").get<std::array<double, TweetFeatureVector::kDenseSize>>();
    for (const auto& e : j.at("tensors")) {
        const auto rows = e.at("rows").get<Eigen::Index>();
        const auto cols = e.at("cols").get<Eigen::Index>();
        const auto values = e.at("values").get<std::vector<double>>();
        if (values.size() != static_cast<std::size_t>(rows * cols)) throw ShapeError("fusion tensor size mismatch");
        Matrix& t = m.params_.add(e.at("name").get<std::string>(), rows, cols);
        for (Eigen::Index r = 0, k = 0; r < rows; ++r) {
            for (Eigen::Index c = 0; c < cols; ++c) t(r, c) = values[static_cast<std::size_t>(k++)];
        }
    }
    const Matrix& w = m.params_.at("weight");
    if (static_cast<std::size_t>(w.rows()) != m.input_dim() ||
        static_cast<std::size_t>(w.cols()) != m.labels_.size()) {
        throw ShapeError("fusion weight shape does not match its block layout");
    }
    return m;
}

void FusionModel::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << to_json().dump() << '\n';
}

FusionModel FusionModel::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return from_json(nlohmann::json::parse(in));
}

// ---------------------------------------------------------------------------
// Training and prediction

int argmax(const Eigen::Ref<const Eigen::RowVectorXd>& values) {
    int best = 0;
    for (Eigen::Index i = 1; i < values.size(); ++i) {
        if (values(i) > values(best)) best = static_cast<int>(i);
    }
    return best;
}

FusionTrainResult train_fusion(const std::vector<FeatureBundle>& bundles, const std::vector<int>& labels,
                               const FeatureMask& mask, const FusionConfig& config, const TaskHead& head,
                               const TrainingConfig& training, JobKey job) {
    if (bundles.empty()) throw std::invalid_argument("train_fusion: empty training split");
    if (bundles.size() != labels.size()) throw std::invalid_argument("train_fusion: bundles and labels differ in size");
    training.validate();
    const BlockDims dims = BlockDims::of(bundles.front());
    for (int l : labels) {
        if (l < 0 || static_cast<std::size_t>(l) >= head.num_classes()) {
            throw std::out_of_range("train_fusion: label out of range");
        }
    }

    FusionTrainResult r;
    r.model = FusionModel(mask, dims, config, head, derive_seed(training.seed, "fusion-init", job.run, job.fold));
    for (const auto& b : bundles) r.model.check(b);
    if (!mask.any()) return r;

    if (mask.tb && config.standardize_dense) {
        std::array<double, TweetFeatureVector::kDenseSize> mean{};
        std::array<double, TweetFeatureVector::kDenseSize> scale{};
        const double n = static_cast<double>(bundles.size());
        for (const auto& b : bundles) {
            for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += b.f_tb.dense[i] / n;
        }
        for (const auto& b : bundles) {
            for (std::size_t i = 0; i < mean.size(); ++i) {
                const double d = b.f_tb.dense[i] - mean[i];
                scale[i] += d * d / n;
            }
        }
        for (double& s : scale) s = s > 0.0 ? std::sqrt(s) : 1.0;
        r.model.set_dense_stats(mean, scale);
    }

    AdamState state = AdamState::for_params(r.model.params());
    Rng rng(derive_seed(training.seed, "fusion-shuffle", job.run, job.fold));
    std::vector<std::size_t> order(bundles.size());
    for (std::size_t epoch = 0; epoch < training.epochs; ++epoch) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng.shuffle(order);
        double total = 0.0;
        std::size_t steps = 0;
        for (std::size_t start = 0; start < order.size(); start += training.batch_size) {
            const std::size_t end = std::min(order.size(), start + training.batch_size);
            std::vector<const FeatureBundle*> batch;
            std::vector<int> batch_labels;
            for (std::size_t i = start; i < end; ++i) {
                batch.push_back(&bundles[order[i]]);
                batch_labels.push_back(labels[order[i]]);
            }
            ParamSet grads = r.model.params().zeros_like();
            Tape tape;
            const Var logits = r.model.logits_graph(tape, batch, &grads);
            const Var loss = ad::softmax_cross_entropy(tape, logits, batch_labels);
            tape.backward(loss);
            adam_step(r.model.params(), grads, state, training.learning_rate, training.adam);
            total += tape.value(loss)(0, 0);
            ++steps;
        }
        r.epoch_loss.push_back(total / static_cast<double>(steps));
    }
    return r;
}

Prediction predict(const FusionModel& model, const FeatureBundle& bundle) {
    const Matrix l = model.logits({&bundle});
    Prediction p;
    p.probabilities = ad::softmax(l).row(0).transpose();
    p.label = argmax(l.row(0));
    return p;
}

std::vector<int> predict_labels(const FusionModel& model, const std::vector<FeatureBundle>& bundles) {
    std::vector<int> out;
    out.reserve(bundles.size());
    for (const auto& b : bundles) out.push_back(predict(model, b).label);
    return out;
}

// ---------------------------------------------------------------------------
// Bundle construction

nlohmann::ordered_json BundleOptions::to_json() const {
    nlohmann::ordered_json j;
    j["m_cap"] = m_cap;
    j["intra_batch"] = intra_batch;
    j["neighbors"] = neighbors;
    j["per_user"] = per_user;
    j["weights"] = weights;
    j["frozen_history"] = frozen_history;
    return j;
}

BundleOptions BundleOptions::from_json(const nlohmann::json& j) {
    BundleOptions o;
    o.m_cap = j.value("m_cap", o.m_cap);
    o.intra_batch = j.value("intra_batch", o.intra_batch);
    o.neighbors = j.value("neighbors", o.neighbors);
    o.per_user = j.value("per_user", o.per_user);
    if (j.contains("weights")) o.weights = j["weights"].get<SimilarityWeights>();
    o.frozen_history = j.value("frozen_history", o.frozen_history);
    return o;
}

BundleBuilder::BundleBuilder(const Dataset& ds, const SharedEncoder& encoder, const NGramVocabulary& vocab,
                             const SentimentLexicon& lexicon, const BundleOptions& options,
                             const EncoderParams* history_params)
    : ds_(ds),
      encoder_(encoder),
      vocab_(vocab),
      lexicon_(lexicon),
      options_(options),
      history_params_(history_params),
      context_(SimilarityContext::from_dataset(ds)) {
    if (options_.m_cap == 0) throw std::invalid_argument("m_cap must be >= 1");
    if (options_.neighbors == 0) throw std::invalid_argument("neighbors must be >= 1");
    if (history_params_) check_shapes(*history_params_, encoder_.config);
    for (const auto& [id, u] : ds_.users) pool_.push_back(&u);
}

const Eigen::VectorXd& BundleBuilder::embed_target(const std::string& text) {
    auto it = target_cache_.find(text);
    if (it == target_cache_.end()) it = target_cache_.emplace(text, encoder_.encode(text)).first;
    return it->second;
}

const Eigen::VectorXd& BundleBuilder::embed_history(const std::string& text) {
    if (!history_params_) return embed_target(text);
    auto it = history_cache_.find(text);
    if (it == history_cache_.end()) {
        it = history_cache_.emplace(text, encode_text(text, encoder_.tokenizer, *history_params_, encoder_.config))
                 .first;
    }
    return it->second;
}

const NeighborSelection& BundleBuilder::neighbors_of(const std::string& user_id) {
    auto it = neighbor_cache_.find(user_id);
    if (it != neighbor_cache_.end()) return it->second;
    auto u = ds_.users.find(user_id);
    if (u == ds_.users.end()) throw CorpusError("no user entry for '" + user_id + "'");
    return neighbor_cache_
        .emplace(user_id, top_k_similar(u->second, pool_, options_.neighbors, options_.weights, context_))
        .first->second;
}

std::vector<NeighborSelection> BundleBuilder::selections() const {
    std::vector<NeighborSelection> out;
    for (const auto& [id, sel] : neighbor_cache_) out.push_back(sel);
    return out;
}

FeatureBundle BundleBuilder::build(const TweetRecord& record) {
    const auto dim = static_cast<Eigen::Index>(encoder_.config.output_dim);
    const EncodeFn history = [this](const std::string& text) { return embed_history(text); };

    FeatureBundle b;
    b.tweet_id = record.tweet_id;
    b.t = embed_target(record.text);
    const UserRecord& user = ds_.user_of(record);
    b.f_intra = intra_user_representation(user.history, options_.m_cap, options_.intra_batch, history, dim);
    const auto tweets =
        select_inter_tweets(record.text, neighbors_of(user.user_id), ds_.users, history, options_.per_user);
    b.f_inter = inter_user_representation(tweets, history, dim);
    b.f_tb = tweet_feature_vector(record.text, vocab_, lexicon_);
    b.sparse_dim = vocab_.size();
    return b;
}

std::vector<FeatureBundle> BundleBuilder::build(const std::vector<std::size_t>& positions) {
    std::vector<FeatureBundle> out;
    out.reserve(positions.size());
    for (std::size_t i : positions) out.push_back(build(ds_.records.at(i)));
    return out;
}

NGramVocabulary build_train_vocab(const Dataset& ds, const std::vector<std::string>& train_ids,
                                  std::size_t max_features) {
    std::vector<std::vector<std::string>> docs;
    for (std::size_t i : record_indices(ds, train_ids)) docs.push_back(normalize_tokens(ds.records[i].text));
    if (docs.empty()) throw std::invalid_argument("build_train_vocab: no training documents");
    return build_ngram_vocab(docs, max_features);
}

// ---------------------------------------------------------------------------
// Bundle cache

namespace {

constexpr char kBundleMagic[8] = {'H', 'M', 'T', 'L', 'B', 'N', 'D', 'L'};
constexpr std::uint32_t kBundleVersion = 1;

void put_bytes(std::ostream& out, std::uint64_t v, int n) {
    char b[8];
    for (int i = 0; i < n; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    out.write(b, n);
}

std::uint64_t get_bytes(std::istream& in, int n) {
    unsigned char b[8] = {};
    in.read(reinterpret_cast<char*>(b), n);
    if (!in) throw std::runtime_error("bundle cache truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

void put_double(std::ostream& out, double d) { put_bytes(out, std::bit_cast<std::uint64_t>(d), 8); }
double get_double(std::istream& in) { return std::bit_cast<double>(get_bytes(in, 8)); }

}  // namespace

void save_bundles(const std::filesystem::path& path, const std::vector<FeatureBundle>& bundles) {
    nlohmann::ordered_json manifest;
    manifest["format"] = "hatemtl-bundles";
    manifest["count"] = bundles.size();
    BlockDims dims;
    if (!bundles.empty()) dims = BlockDims::of(bundles.front());
    for (const auto& b : bundles) {
        if (!(BlockDims::of(b) == dims)) throw ShapeError("bundles with differing block widths");
    }
    manifest["dims"] = {{"t", dims.t}, {"intra", dims.intra}, {"inter", dims.inter},
                        {"dense", dims.dense}, {"sparse", dims.sparse}};
    auto& ids = manifest["tweet_ids"] = nlohmann::ordered_json::array();
    for (const auto& b : bundles) ids.push_back(b.tweet_id);
    const std::string text = manifest.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(kBundleMagic, 8);
    put_bytes(out, kBundleVersion, 4);
    put_bytes(out, text.size(), 8);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& b : bundles) {
        for (const Eigen::VectorXd* v : {&b.t, &b.f_intra, &b.f_inter}) {
            for (Eigen::Index i = 0; i < v->size(); ++i) put_double(out, (*v)(i));
        }
        for (double d : b.f_tb.dense) put_double(out, d);
        put_bytes(out, b.f_tb.sparse.size(), 4);
        for (const auto& [idx, v] : b.f_tb.sparse) {
            put_bytes(out, idx, 4);
            put_double(out, v);
        }
    }
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::vector<FeatureBundle> load_bundles(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kBundleMagic, 8) != 0) {
        throw std::runtime_error(path.string() + ": not a bundle cache");
    }
    if (get_bytes(in, 4) != kBundleVersion) throw std::runtime_error(path.string() + ": unsupported version");
    std::string text(get_bytes(in, 8), '\0');
    in.read(text.data(), static_cast<std::streamsize>(text.size()));
    const auto manifest = nlohmann::json::parse(text);
    const auto& d = manifest.at("dims");
    const auto t = d.at("t").get<Eigen::Index>();
    const auto intra = d.at("intra").get<Eigen::Index>();
    const auto inter = d.at("inter").get<Eigen::Index>();
    const auto sparse = d.at("sparse").get<std::size_t>();

    std::vector<FeatureBundle> out;
    for (const auto& id : manifest.at("tweet_ids")) {
        FeatureBundle b;
        b.tweet_id = id.get<std::string>();
        b.sparse_dim = sparse;
        for (auto [v, n] : {std::pair{&b.t, t}, std::pair{&b.f_intra, intra}, std::pair{&b.f_inter, inter}}) {
            v->resize(n);
            for (Eigen::Index i = 0; i < n; ++i) (*v)(i) = get_double(in);
        }
        for (double& x : b.f_tb.dense) x = get_double(in);
        const auto nnz = get_bytes(in, 4);
        for (std::uint64_t k = 0; k < nnz; ++k) {
            const auto idx = static_cast<std::uint32_t>(get_bytes(in, 4));
            if (idx >= sparse) throw ShapeError(path.string() + ": sparse index out of range");
            b.f_tb.sparse.emplace_back(idx, get_double(in));
        }
        out.push_back(std::move(b));
    }
    if (in.peek() != std::char_traits<char>::eof()) throw std::runtime_error(path.string() + ": trailing bytes");
    return out;
}

}  // namespace hatemtl
