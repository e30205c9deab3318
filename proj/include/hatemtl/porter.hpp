#pragma once

#include <string>
#include <string_view>

namespace hatemtl {

/// Stems a lowercase ASCII word with the original (1980) Porter suffix-stripping
/// rules. No length cutoff is applied, so "is" becomes "i". Words containing
/// anything other than a-z are returned unchanged.
std::string porter_stem(std::string_view word);

}  // namespace hatemtl
