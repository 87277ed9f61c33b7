// SPDX-License-Identifier: Apache-2.0
#include <recheck/text.hpp>

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>

namespace recheck::text
{

namespace
{

// Length in bytes of a UTF-8 encoded whitespace code point starting at s[i], or 0.
std::size_t whitespace_len(std::string_view s, std::size_t i)
{
    const auto c = static_cast<unsigned char>(s[i]);
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f')
        return 1;
    auto at = [&](std::size_t k) { return i + k < s.size() ? static_cast<unsigned char>(s[i + k]) : 0u; };
    if (c == 0xC2 && (at(1) == 0x85 || at(1) == 0xA0)) // NEL, NBSP
        return 2;
    if (c == 0xE1 && at(1) == 0x9A && at(2) == 0x80) // OGHAM SPACE MARK
        return 3;
    if (c == 0xE2 && at(1) == 0x80 && ((at(2) >= 0x80 && at(2) <= 0x8A) || at(2) == 0xA8 || at(2) == 0xA9 ||
                                        at(2) == 0xAF))
        return 3;
    if (c == 0xE2 && at(1) == 0x81 && at(2) == 0x9F) // MEDIUM MATHEMATICAL SPACE
        return 3;
    if (c == 0xE3 && at(1) == 0x80 && at(2) == 0x80) // IDEOGRAPHIC SPACE
        return 3;
    return 0;
}

bool is_punct(char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; }

} // namespace

std::vector<std::string_view> split_whitespace(std::string_view s)
{
    std::vector<std::string_view> out;
    std::size_t start = 0;
    std::size_t i = 0;
    while (i < s.size())
    {
        if (auto n = whitespace_len(s, i); n > 0)
        {
            if (i > start)
                out.push_back(s.substr(start, i - start));
            i += n;
            start = i;
        }
        else
            ++i;
    }
    if (start < s.size())
        out.push_back(s.substr(start));
    return out;
}

std::string lowercase(std::string_view s)
{
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

std::string_view strip_punctuation(std::string_view s)
{
    while (!s.empty() && is_punct(s.front()))
        s.remove_prefix(1);
    while (!s.empty() && is_punct(s.back()))
        s.remove_suffix(1);
    return s;
}

std::vector<std::string> words(std::string_view s)
{
    std::vector<std::string> out;
    for (auto tok: split_whitespace(s))
        if (auto w = strip_punctuation(tok); !w.empty())
            out.push_back(lowercase(w));
    return out;
}

std::string_view trim(std::string_view s)
{
    while (!s.empty() && whitespace_len(s, 0) > 0)
        s.remove_prefix(whitespace_len(s, 0));
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back())))
        s.remove_suffix(1);
    return s;
}

bool is_blank(std::string_view s) { return split_whitespace(s).empty(); }

std::vector<Span> sentence_spans(std::string_view s)
{
    std::vector<Span> out;
    std::size_t start = 0;
    auto flush = [&](std::size_t end) {
        auto b = start;
        while (b < end && std::isspace(static_cast<unsigned char>(s[b])))
            ++b;
        auto e = end;
        while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1])))
            --e;
        if (e > b)
            out.push_back({b, e});
    };
    for (std::size_t i = 0; i < s.size(); ++i)
    {
        const char c = s[i];
        if (c != '.' && c != '!' && c != '?')
            continue;
        // Decimal points ("2.5") are not sentence ends.
        if (c == '.' && i > 0 && i + 1 < s.size() && std::isdigit(static_cast<unsigned char>(s[i - 1])) &&
            std::isdigit(static_cast<unsigned char>(s[i + 1])))
            continue;
        std::size_t end = i + 1;
        while (end < s.size() && (s[end] == '.' || s[end] == '!' || s[end] == '?' || s[end] == '"'))
            ++end;
        flush(end);
        start = end;
        i = end - 1;
    }
    flush(s.size());
    return out;
}

bool glob_match(std::string_view pattern, std::string_view s)
{
    auto eq = [](char a, char b) {
        return std::tolower(static_cast<unsigned char>(a)) == std::tolower(static_cast<unsigned char>(b));
    };
    std::size_t p = 0;
    std::size_t i = 0;
    std::size_t star = std::string_view::npos;
    std::size_t mark = 0;
    while (i < s.size())
    {
        if (p < pattern.size() && (pattern[p] == '?' || eq(pattern[p], s[i])))
        {
            ++p;
            ++i;
        }
        else if (p < pattern.size() && pattern[p] == '*')
        {
            star = p++;
            mark = i;
        }
        else if (star != std::string_view::npos)
        {
            p = star + 1;
            i = ++mark;
        }
        else
            return false;
    }
    while (p < pattern.size() && pattern[p] == '*')
        ++p;
    return p == pattern.size();
}

int parse_numeral(std::string_view word)
{
    static constexpr std::array<std::string_view, 21> kNames {
        "zero",    "one",     "two",       "three",    "four",     "five",    "six",
        "seven",   "eight",   "nine",      "ten",      "eleven",   "twelve",  "thirteen",
        "fourteen", "fifteen", "sixteen",  "seventeen", "eighteen", "nineteen", "twenty"};
    for (std::size_t i = 0; i < kNames.size(); ++i)
        if (kNames[i] == word)
            return static_cast<int>(i);
    int value = -1;
    auto [ptr, ec] = std::from_chars(word.data(), word.data() + word.size(), value);
    if (ec != std::errc {} || ptr != word.data() + word.size() || value < 0)
        return -1;
    return value;
}

} // namespace recheck::text
