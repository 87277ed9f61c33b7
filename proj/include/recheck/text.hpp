// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace recheck::text
{

/// Splits on ASCII and Unicode (UTF-8 encoded) whitespace.
[[nodiscard]] std::vector<std::string_view> split_whitespace(std::string_view s);

[[nodiscard]] std::string lowercase(std::string_view s);

/// Removes leading and trailing ASCII punctuation.
[[nodiscard]] std::string_view strip_punctuation(std::string_view s);

/// Lowercased, punctuation-stripped, non-empty word tokens.
[[nodiscard]] std::vector<std::string> words(std::string_view s);

[[nodiscard]] std::string_view trim(std::string_view s);

[[nodiscard]] bool is_blank(std::string_view s);

/// Byte ranges [begin, end) of sentences, split after '.', '!' or '?'.
struct Span
{
    std::size_t begin = 0;
    std::size_t end = 0;
};
[[nodiscard]] std::vector<Span> sentence_spans(std::string_view s);

/// Glob match supporting '*' (any run) and '?' (one byte); case-insensitive.
[[nodiscard]] bool glob_match(std::string_view pattern, std::string_view s);

/// Parses "two", "12", ... ; returns -1 for non-numerals.
[[nodiscard]] int parse_numeral(std::string_view word);

} // namespace recheck::text
