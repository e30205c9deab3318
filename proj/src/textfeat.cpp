#include "hatemtl/textfeat.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "hatemtl/porter.hpp"
#include "hatemtl/utf8.hpp"

namespace hatemtl {

namespace {

bool is_punct(char32_t cp) {
    if (cp < 0x80) return std::ispunct(static_cast<int>(cp)) != 0;
    return cp == 0xA1 || cp == 0xAB || cp == 0xBB || cp == 0xBF || (cp >= 0x2010 && cp <= 0x2027) ||
           (cp >= 0x2030 && cp <= 0x205E) || cp == 0x3001 || cp == 0x3002;
}

bool is_word_cp(char32_t cp) {
    if (cp < 0x80) return std::isalnum(static_cast<int>(cp)) != 0 || cp == '_';
    return !utf8::is_space(cp) && !is_punct(cp) && !is_emoji_codepoint(cp);
}

bool is_upper(char32_t cp) {
    return (cp >= 'A' && cp <= 'Z') || (cp >= 0xC0 && cp <= 0xDE && cp != 0xD7);
}

bool is_lower(char32_t cp) {
    return (cp >= 'a' && cp <= 'z') || (cp >= 0xDF && cp <= 0xFF && cp != 0xF7);
}

std::vector<std::string> split_whitespace(std::string_view text) {
    std::vector<std::string> out;
    std::string current;
    std::size_t pos = 0;
    while (pos < text.size()) {
        const std::size_t start = pos;
        const char32_t cp = utf8::next(text, pos);
        if (utf8::is_space(cp)) {
            if (!current.empty()) out.push_back(std::move(current));
            current.clear();
        } else {
            current.append(text.substr(start, pos - start));
        }
    }
    if (!current.empty()) out.push_back(std::move(current));
    return out;
}

std::string strip_punctuation(std::string_view raw) {
    const std::vector<char32_t> cps = utf8::decode(raw);
    std::size_t b = 0;
    std::size_t e = cps.size();
    while (b < e && is_punct(cps[b]) && cps[b] != '#' && cps[b] != '@') ++b;
    while (e > b && is_punct(cps[e - 1])) --e;
    std::string out;
    for (std::size_t i = b; i < e; ++i) utf8::append(out, cps[i]);
    return out;
}

bool is_prefixed(std::string_view token) {
    return !token.empty() && (token.front() == '#' || token.front() == '@');
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    for (const auto& raw : split_whitespace(text)) {
        std::string t = strip_punctuation(raw);
        if (!t.empty()) out.push_back(std::move(t));
    }
    return out;
}

std::string to_lower(std::string_view text) {
    std::string out(text);
    for (char& c : out) {
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    }
    return out;
}

bool is_hashtag(std::string_view token) {
    if (token.size() < 2 || token.front() != '#') return false;
    std::size_t pos = 1;
    while (pos < token.size()) {
        if (!is_word_cp(utf8::next(token, pos))) return false;
    }
    return true;
}

SentimentLexicon SentimentLexicon::parse(std::string_view content) {
    SentimentLexicon lex;
    std::istringstream in{std::string(content)};
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line.front() == '#') continue;  // comment
        const auto tab = line.find('\t');
        if (tab == std::string::npos) {
            throw std::runtime_error("lexicon line " + std::to_string(line_no) + ": missing tab");
        }
        const std::string head = line.substr(0, tab);
        const std::string tail = line.substr(tab + 1);
        if (head == "!negator") {
            lex.negators.insert(to_lower(tail));
            continue;
        }
        double v;
        try {
            std::size_t used = 0;
            v = std::stod(tail, &used);
            if (used != tail.size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            throw std::runtime_error("lexicon line " + std::to_string(line_no) +
                                     ": bad valence '" + tail + "'");
        }
        if (!(v >= -4.0 && v <= 4.0)) {
            throw std::runtime_error("lexicon line " + std::to_string(line_no) +
                                     ": valence outside [-4, 4]");
        }
        lex.valence[to_lower(head)] = v;
    }
    if (lex.valence.empty()) throw std::runtime_error("lexicon has no valence entries");
    return lex;
}

SentimentLexicon SentimentLexicon::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open lexicon " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
}

double SentimentLexicon::lookup(std::string_view token) const {
    auto it = valence.find(std::string(token));
    return it == valence.end() ? 0.0 : it->second;
}

SurfaceCounts count_surface_features(std::string_view text, const SentimentLexicon& lexicon) {
    SurfaceCounts c;
    std::size_t pos = 0;
    while (pos < text.size()) {
        const char32_t cp = utf8::next(text, pos);
        if (is_upper(cp)) ++c.uppercase_letters;
        if (is_lower(cp)) ++c.lowercase_letters;
        if (is_emoji_codepoint(cp)) ++c.emoticons;
    }
    for (const auto& raw : split_whitespace(text)) {
        if (is_ascii_emoticon(raw)) ++c.emoticons;
    }
    for (const auto& token : tokenize(text)) {
        if (is_hashtag(token)) {
            ++c.hashtags;
            continue;
        }
        if (is_prefixed(token)) continue;
        const double v = lexicon.lookup(to_lower(token));
        if (v > 0) ++c.positive_words;
        if (v < 0) ++c.negative_words;
    }
    return c;
}

double sentiment_score(std::string_view text, const SentimentLexicon& lexicon) {
    std::vector<std::string> words;
    for (const auto& token : tokenize(text)) {
        if (!is_prefixed(token)) words.push_back(to_lower(token));
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < words.size(); ++i) {
        double v = lexicon.lookup(words[i]);
        if (v == 0.0) continue;
        const std::size_t first = i >= kNegationWindow ? i - kNegationWindow : 0;
        for (std::size_t j = first; j < i; ++j) {
            if (lexicon.negators.count(words[j])) {
                v *= kNegationScalar;
                break;
            }
        }
        sum += v;
    }
    if (sum == 0.0) return 0.0;
    return sum / std::sqrt(sum * sum + kSentimentAlpha);
}

std::vector<std::string> normalize_tokens(std::string_view text) {
    std::vector<std::string> out;
    for (const auto& token : tokenize(text)) {
        std::string lower = to_lower(token);
        out.push_back(is_prefixed(lower) ? std::move(lower) : porter_stem(lower));
    }
    return out;
}

std::vector<std::string> extract_ngrams(const std::vector<std::string>& tokens) {
    std::vector<std::string> grams;
    grams.reserve(tokens.size() * 3);
    for (std::size_t n = 1; n <= 3; ++n) {
        for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
            std::string g = tokens[i];
            for (std::size_t j = 1; j < n; ++j) {
                g.push_back(' ');
                g += tokens[i + j];
            }
            grams.push_back(std::move(g));
        }
    }
    return grams;
}

double sparse_norm(const SparseVector& v) {
    double s = 0.0;
    for (const auto& [i, x] : v) s += x * x;
    return std::sqrt(s);
}

double sparse_dot(const SparseVector& a, const SparseVector& b) {
    double s = 0.0;
    std::size_t i = 0;
    std::size_t j = 0;
    while (i < a.size() && j < b.size()) {
        if (a[i].first < b[j].first) {
            ++i;
        } else if (b[j].first < a[i].first) {
            ++j;
        } else {
            s += a[i++].second * b[j++].second;
        }
    }
    return s;
}

std::int64_t NGramVocabulary::index_of(std::string_view gram) const {
    auto it = index_.find(std::string(gram));
    return it == index_.end() ? -1 : static_cast<std::int64_t>(it->second);
}

double NGramVocabulary::idf(std::size_t index) const {
    return std::log((1.0 + static_cast<double>(corpus_size_)) /
                    (1.0 + static_cast<double>(df_[index]))) +
           1.0;
}

void NGramVocabulary::rebuild_index() {
    index_.clear();
    index_.reserve(terms_.size());
    for (std::size_t i = 0; i < terms_.size(); ++i) {
        index_.emplace(terms_[i], static_cast<std::uint32_t>(i));
    }
}

void NGramVocabulary::save(const std::filesystem::path& path) const {
    nlohmann::ordered_json doc;
    doc["corpus_size"] = corpus_size_;
    auto& grams = doc["grams"] = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < terms_.size(); ++i) {
        grams.push_back({{"gram", terms_[i]}, {"index", i}, {"df", df_[i]}});
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << doc.dump(1) << '\n';
}

NGramVocabulary NGramVocabulary::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    const auto doc = nlohmann::json::parse(in);
    NGramVocabulary v;
    v.corpus_size_ = doc.at("corpus_size").get<std::size_t>();
    const auto& grams = doc.at("grams");
    v.terms_.resize(grams.size());
    v.df_.resize(grams.size());
    std::vector<bool> seen(grams.size(), false);
    for (const auto& g : grams) {
        const auto idx = g.at("index").get<std::size_t>();
        if (idx >= grams.size() || seen[idx]) {
            throw std::runtime_error(path.string() + ": gram indices are not contiguous");
        }
        seen[idx] = true;
        v.terms_[idx] = g.at("gram").get<std::string>();
        v.df_[idx] = g.at("df").get<std::size_t>();
        if (v.df_[idx] > v.corpus_size_) {
            throw std::runtime_error(path.string() + ": document frequency exceeds corpus size");
        }
    }
    v.rebuild_index();
    return v;
}

NGramVocabulary build_ngram_vocab(const std::vector<std::vector<std::string>>& corpus,
                                  std::size_t max_features) {
    if (corpus.empty()) throw std::invalid_argument("build_ngram_vocab: empty corpus");
    std::unordered_map<std::string, std::size_t> df;
    for (const auto& doc : corpus) {
        auto grams = extract_ngrams(doc);
        std::sort(grams.begin(), grams.end());
        grams.erase(std::unique(grams.begin(), grams.end()), grams.end());
        for (auto& g : grams) ++df[std::move(g)];
    }
    std::vector<std::pair<std::string, std::size_t>> ranked(df.begin(), df.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    if (ranked.size() > max_features) ranked.resize(max_features);

    NGramVocabulary v;
    v.corpus_size_ = corpus.size();
    v.terms_.reserve(ranked.size());
    v.df_.reserve(ranked.size());
    for (auto& [g, n] : ranked) {
        v.terms_.push_back(std::move(g));
        v.df_.push_back(n);
    }
    v.rebuild_index();
    return v;
}

SparseVector tfidf_vector(const std::vector<std::string>& tokens, const NGramVocabulary& vocab) {
    std::map<std::uint32_t, double> tf;
    for (const auto& g : extract_ngrams(tokens)) {
        const auto idx = vocab.index_of(g);
        if (idx >= 0) tf[static_cast<std::uint32_t>(idx)] += 1.0;
    }
    SparseVector out;
    out.reserve(tf.size());
    for (const auto& [idx, count] : tf) out.emplace_back(idx, count * vocab.idf(idx));
    const double norm = sparse_norm(out);
    if (norm > 0.0) {
        for (auto& [idx, w] : out) w /= norm;
    }
    return out;
}

TweetFeatureVector tweet_feature_vector(std::string_view text, const NGramVocabulary& vocab,
                                        const SentimentLexicon& lexicon) {
    TweetFeatureVector f;
    const SurfaceCounts c = count_surface_features(text, lexicon);
    f.dense = {static_cast<double>(c.hashtags),          static_cast<double>(c.emoticons),
               static_cast<double>(c.uppercase_letters), static_cast<double>(c.lowercase_letters),
               static_cast<double>(c.positive_words),    static_cast<double>(c.negative_words),
               sentiment_score(text, lexicon)};
    f.sparse = tfidf_vector(normalize_tokens(text), vocab);
    return f;
}

}  // namespace hatemtl
