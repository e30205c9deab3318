#include <algorithm>
#include <string_view>
#include <vector>

#include "hatemtl/textfeat.hpp"

namespace hatemtl {

// Emoticon list v1. Matched against whole whitespace-delimited tokens.
const std::vector<std::string_view>& ascii_emoticons() {
    static const std::vector<std::string_view> list = [] {
        std::vector<std::string_view> v{
            ":)",  ":-)",  ":]",   ":-]",  "=)",   "=]",   ":}",   ":-}",  ":o)", ":c)",
            ":D",  ":-D",  "=D",   "xD",   "XD",   "x-D",  "X-D",  ";)",   ";-)", ";]",
            ";D",  "*)",   "*-)",  ":(",   ":-(",  ":[",   ":-[",  "=(",   ":{",  ":-{",
            ":c",  ":-c",  ":'(",  ":'-(", ":')",  ":'-)", ":P",   ":-P",  ":p",  ":-p",
            ";P",  ";p",   "=P",   ":O",   ":-O",  ":o",   ":-o",  ":/",   ":-/", ":\\",
            ":-\\", ":|",  ":-|",  ":S",   ":s",   ":$",   ":*",   ":-*",  "<3",  "</3",
            "^_^", "^^",   "-_-",  "o_O",  "O_o",  "T_T",  ">:(",  ">:)",  "B)",  "8)",
        };
        std::sort(v.begin(), v.end());
        return v;
    }();
    return list;
}

bool is_ascii_emoticon(std::string_view token) {
    const auto& list = ascii_emoticons();
    return std::binary_search(list.begin(), list.end(), token);
}

bool is_emoji_codepoint(char32_t cp) {
    return (cp >= 0x1F600 && cp <= 0x1F64F) || (cp >= 0x1F900 && cp <= 0x1F9FF);
}

}  // namespace hatemtl
