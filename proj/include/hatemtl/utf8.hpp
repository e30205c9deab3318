#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace hatemtl::utf8 {

/// True when `text` is well-formed UTF-8 (no overlongs, no surrogates, <= U+10FFFF).
bool valid(std::string_view text);

/// Decodes one code point at `pos` and advances it. Malformed bytes decode as
/// U+FFFD consuming a single byte.
char32_t next(std::string_view text, std::size_t& pos);

std::vector<char32_t> decode(std::string_view text);

void append(std::string& out, char32_t cp);

bool is_space(char32_t cp);

}  // namespace hatemtl::utf8
