#include "hatemtl/porter.hpp"

#include <algorithm>
#include <array>
#include <functional>
#include <utility>

namespace hatemtl {

namespace {

class Stemmer {
public:
    explicit Stemmer(std::string word) : w_(std::move(word)) {}

    std::string run() {
        step1a();
        step1b();
        step1c();
        step2();
        step3();
        step4();
        step5a();
        step5b();
        return w_;
    }

private:
    using Condition = bool (Stemmer::*)(std::size_t) const;

    struct Rule {
        std::string_view suffix;
        std::string_view replacement;
        Condition condition;
    };

    bool consonant(std::size_t i) const {
        switch (w_[i]) {
            case 'a': case 'e': case 'i': case 'o': case 'u':
                return false;
            case 'y':
                return i == 0 ? true : !consonant(i - 1);
            default:
                return true;
        }
    }

    // m in [C](VC){m}[V] for the prefix w_[0, len).
    int measure(std::size_t len) const {
        int m = 0;
        std::size_t i = 0;
        while (i < len && consonant(i)) ++i;
        while (i < len) {
            while (i < len && !consonant(i)) ++i;
            if (i >= len) break;
            while (i < len && consonant(i)) ++i;
            ++m;
        }
        return m;
    }

    bool has_vowel(std::size_t len) const {
        for (std::size_t i = 0; i < len; ++i) {
            if (!consonant(i)) return true;
        }
        return false;
    }

    bool double_consonant(std::size_t len) const {
        return len >= 2 && w_[len - 1] == w_[len - 2] && consonant(len - 1);
    }

    // *o: stem ends cvc, where the final c is not w, x or y.
    bool cvc(std::size_t len) const {
        if (len < 3) return false;
        if (!consonant(len - 1) || consonant(len - 2) || !consonant(len - 3)) return false;
        const char c = w_[len - 1];
        return c != 'w' && c != 'x' && c != 'y';
    }

    bool ends_with(std::string_view suffix) const {
        return w_.size() >= suffix.size() &&
               std::string_view(w_).substr(w_.size() - suffix.size()) == suffix;
    }

    bool m_gt0(std::size_t len) const { return measure(len) > 0; }
    bool m_gt1(std::size_t len) const { return measure(len) > 1; }
    bool m_gt1_st(std::size_t len) const {
        return len > 0 && (w_[len - 1] == 's' || w_[len - 1] == 't') && measure(len) > 1;
    }
    bool always(std::size_t) const { return true; }
    bool vowel_in_stem(std::size_t len) const { return has_vowel(len); }

    // The first rule whose suffix matches decides the step; it fires only if its
    // condition holds on the remaining stem. Returns true when a rule fired.
    template <std::size_t N>
    bool apply(const std::array<Rule, N>& rules) {
        for (const Rule& r : rules) {
            if (!ends_with(r.suffix)) continue;
            const std::size_t stem_len = w_.size() - r.suffix.size();
            if (!(this->*r.condition)(stem_len)) return false;
            w_.resize(stem_len);
            w_.append(r.replacement);
            return true;
        }
        return false;
    }

    void step1a() {
        static constexpr std::array<Rule, 4> rules{{
            {"sses", "ss", &Stemmer::always},
            {"ies", "i", &Stemmer::always},
            {"ss", "ss", &Stemmer::always},
            {"s", "", &Stemmer::always},
        }};
        apply(rules);
    }

    void step1b() {
        if (ends_with("eed")) {
            if (m_gt0(w_.size() - 3)) w_.pop_back();
            return;
        }
        bool stripped = false;
        for (std::string_view suffix : {std::string_view("ed"), std::string_view("ing")}) {
            if (ends_with(suffix)) {
                const std::size_t stem_len = w_.size() - suffix.size();
                if (has_vowel(stem_len)) {
                    w_.resize(stem_len);
                    stripped = true;
                }
                break;
            }
        }
        if (!stripped) return;
        if (ends_with("at") || ends_with("bl") || ends_with("iz")) {
            w_.push_back('e');
        } else if (double_consonant(w_.size())) {
            const char c = w_.back();
            if (c != 'l' && c != 's' && c != 'z') w_.pop_back();
        } else if (measure(w_.size()) == 1 && cvc(w_.size())) {
            w_.push_back('e');
        }
    }

    void step1c() {
        static constexpr std::array<Rule, 1> rules{{{"y", "i", &Stemmer::vowel_in_stem}}};
        apply(rules);
    }

    void step2() {
        static constexpr std::array<Rule, 20> rules{{
            {"ational", "ate", &Stemmer::m_gt0}, {"tional", "tion", &Stemmer::m_gt0},
            {"enci", "ence", &Stemmer::m_gt0},   {"anci", "ance", &Stemmer::m_gt0},
            {"izer", "ize", &Stemmer::m_gt0},    {"abli", "able", &Stemmer::m_gt0},
            {"alli", "al", &Stemmer::m_gt0},     {"entli", "ent", &Stemmer::m_gt0},
            {"eli", "e", &Stemmer::m_gt0},       {"ousli", "ous", &Stemmer::m_gt0},
            {"ization", "ize", &Stemmer::m_gt0}, {"ation", "ate", &Stemmer::m_gt0},
            {"ator", "ate", &Stemmer::m_gt0},    {"alism", "al", &Stemmer::m_gt0},
            {"iveness", "ive", &Stemmer::m_gt0}, {"fulness", "ful", &Stemmer::m_gt0},
            {"ousness", "ous", &Stemmer::m_gt0}, {"aliti", "al", &Stemmer::m_gt0},
            {"iviti", "ive", &Stemmer::m_gt0},   {"biliti", "ble", &Stemmer::m_gt0},
        }};
        apply(rules);
    }

    void step3() {
        static constexpr std::array<Rule, 7> rules{{
            {"icate", "ic", &Stemmer::m_gt0}, {"ative", "", &Stemmer::m_gt0},
            {"alize", "al", &Stemmer::m_gt0}, {"iciti", "ic", &Stemmer::m_gt0},
            {"ical", "ic", &Stemmer::m_gt0},  {"ful", "", &Stemmer::m_gt0},
            {"ness", "", &Stemmer::m_gt0},
        }};
        apply(rules);
    }

    void step4() {
        static constexpr std::array<Rule, 19> rules{{
            {"al", "", &Stemmer::m_gt1},    {"ance", "", &Stemmer::m_gt1},
            {"ence", "", &Stemmer::m_gt1},  {"er", "", &Stemmer::m_gt1},
            {"ic", "", &Stemmer::m_gt1},    {"able", "", &Stemmer::m_gt1},
            {"ible", "", &Stemmer::m_gt1},  {"ant", "", &Stemmer::m_gt1},
            {"ement", "", &Stemmer::m_gt1}, {"ment", "", &Stemmer::m_gt1},
            {"ent", "", &Stemmer::m_gt1},   {"ion", "", &Stemmer::m_gt1_st},
            {"ou", "", &Stemmer::m_gt1},    {"ism", "", &Stemmer::m_gt1},
            {"ate", "", &Stemmer::m_gt1},   {"iti", "", &Stemmer::m_gt1},
            {"ous", "", &Stemmer::m_gt1},   {"ive", "", &Stemmer::m_gt1},
            {"ize", "", &Stemmer::m_gt1},
        }};
        apply(rules);
    }

    void step5a() {
        if (!ends_with("e")) return;
        const std::size_t stem_len = w_.size() - 1;
        const int m = measure(stem_len);
        if (m > 1 || (m == 1 && !cvc(stem_len))) w_.pop_back();
    }

    void step5b() {
        if (measure(w_.size()) > 1 && double_consonant(w_.size()) && w_.back() == 'l') {
            w_.pop_back();
        }
    }

    std::string w_;
};

}  // namespace

std::string porter_stem(std::string_view word) {
    if (word.empty()) return {};
    const bool plain = std::all_of(word.begin(), word.end(), [](char c) { return c >= 'a' && c <= 'z'; });
    if (!plain) return std::string(word);
    return Stemmer(std::string(word)).run();
}

}  // namespace hatemtl
