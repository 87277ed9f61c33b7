// SPDX-License-Identifier: Apache-2.0
#include <recheck/refine.hpp>
#include <recheck/text.hpp>

#include <fmt/format.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

namespace recheck
{

namespace
{

using WordSet = std::set<std::string, std::less<>>;

const WordSet& copulas()
{
    static const WordSet s {"is", "are", "was", "were"};
    return s;
}

const WordSet& determiners()
{
    static const WordSet s {"a", "an", "the", "some", "any", "this", "that", "these", "those", "several", "many", "its"};
    return s;
}

// Words that end a noun phrase.
const WordSet& np_stops()
{
    static const WordSet s {"in",     "on",    "at",     "near",   "next",  "behind", "beside", "under",  "underneath",
                            "above",  "below", "with",   "of",     "to",    "from",   "inside", "by",     "and",
                            "or",     "that",  "which",  "is",     "are",   "was",    "were",   "visible", "here",
                            "there",  "left",  "right",  "front",  "between", "sitting", "standing", "lying",
                            "placed", "located", "parked", "who",  "it",    "but"};
    return s;
}

const WordSet& relation_words()
{
    static const WordSet s {"next", "behind", "beside", "under", "underneath", "above", "below",
                            "left", "right",  "near",   "between", "front", "atop"};
    return s;
}

const WordSet& location_words()
{
    static const WordSet s {"on", "in", "at", "inside", "by", "sitting", "standing", "lying", "placed", "located", "here",
                            "there", "present", "visible", "parked"};
    return s;
}

const WordSet& colors()
{
    static const WordSet s {"black", "white",  "red",  "green", "blue", "yellow", "orange", "purple",
                            "pink",  "brown",  "gray", "grey",  "silver", "gold", "beige",  "tan"};
    return s;
}

const WordSet& sizes()
{
    static const WordSet s {"big", "small", "large", "tiny", "huge", "tall", "short", "long", "little"};
    return s;
}

const WordSet& materials()
{
    static const WordSet s {"wooden", "metal", "metallic", "plastic", "glass", "leather", "stone", "paper"};
    return s;
}

const WordSet& negations()
{
    static const WordSet s {"no",      "not",    "none",  "nothing", "cannot", "can't", "isn't",
                            "aren't",  "don't",  "doesn't", "nor",   "never",  "without", "neither"};
    return s;
}

const WordSet& filler()
{
    static const WordSet s {"a",    "an",   "the",  "is",      "are",    "was",  "were", "it",    "this", "that",
                            "there", "in",  "on",   "of",      "to",     "and",  "or",   "i",     "see",  "visible",
                            "region", "image", "yes", "no",    "with",   "at",   "by",   "its",   "be",   "can",
                            "here",  "shown", "picture", "photo", "appear", "crop", "view", "present", "some", "any"};
    return s;
}

bool in(const WordSet& s, std::string_view w) { return s.find(w) != s.end(); }

struct Word
{
    std::string norm;
    std::size_t begin = 0; // byte range of the raw token in the enclosing text
    std::size_t end = 0;
};

std::vector<Word> located_words(std::string_view s, std::size_t offset = 0)
{
    std::vector<Word> out;
    for (auto raw: text::split_whitespace(s))
    {
        auto stripped = text::strip_punctuation(raw);
        if (stripped.empty())
            continue;
        const auto b = static_cast<std::size_t>(stripped.data() - s.data());
        out.push_back({text::lowercase(stripped), offset + b, offset + b + stripped.size()});
    }
    return out;
}

std::vector<std::string> norms(const std::vector<Word>& ws)
{
    std::vector<std::string> out;
    out.reserve(ws.size());
    for (const auto& w: ws)
        out.push_back(w.norm);
    return out;
}

bool is_yes(std::string_view w) { return w == "yes" || w == "yeah" || w == "yep"; }
bool is_no(std::string_view w) { return w == "no" || w == "nope"; }

// Index of the first non-hedge word when it is a bare yes/no, else npos.
std::size_t polar_index(const std::vector<std::string>& w, const HedgeLexicon& lexicon)
{
    for (std::size_t i = 0; i < w.size(); ++i)
    {
        if (is_yes(w[i]) || is_no(w[i]))
            return i;
        if (!lexicon.contains(w[i]))
            return std::string::npos;
    }
    return std::string::npos;
}

std::string attribute_category(std::string_view value)
{
    if (in(colors(), value))
        return "color";
    if (in(sizes(), value))
        return "size";
    if (in(materials(), value))
        return "material";
    return "state";
}

// Head noun of the phrase starting at j: the last word before a stop word.
std::string np_head(const std::vector<std::string>& w, std::size_t j, const HedgeLexicon& lexicon, std::size_t* stop = nullptr)
{
    while (j < w.size() && (in(determiners(), w[j]) || lexicon.contains(w[j])))
        ++j;
    std::string head;
    while (j < w.size() && !in(np_stops(), w[j]))
    {
        if (!lexicon.contains(w[j]) && text::parse_numeral(w[j]) < 0)
            head = w[j];
        ++j;
    }
    if (stop)
        *stop = j;
    return head;
}

struct Parsed
{
    ClaimKind kind = ClaimKind::other;
    std::string object;
    std::string attribute;
    std::string value;
    bool negated = false;
};

std::string join(const std::vector<std::string>& w, std::size_t from)
{
    std::string out;
    for (std::size_t i = from; i < w.size(); ++i)
    {
        if (!out.empty())
            out += ' ';
        out += w[i];
    }
    return out;
}

Parsed other_about(std::string head)
{
    Parsed p;
    p.object = std::move(head);
    return p;
}

Parsed parse_sentence(const std::vector<std::string>& w, const HedgeLexicon& lexicon)
{
    Parsed p;
    // "there is/are ..."
    for (std::size_t i = 0; i + 1 < w.size(); ++i)
    {
        if (w[i] != "there" || !in(copulas(), w[i + 1]))
            continue;
        std::size_t j = i + 2;
        while (j < w.size() && lexicon.contains(w[j]))
            ++j;
        int count = -1;
        if (j < w.size() && (w[j] == "no" || w[j] == "not"))
        {
            p.negated = true;
            ++j;
            if (j < w.size() && w[j] == "any")
                ++j;
        }
        else if (j < w.size() && text::parse_numeral(w[j]) >= 2)
            count = text::parse_numeral(w[j++]);
        auto head = np_head(w, j, lexicon);
        if (head.empty())
            break;
        p.object = head;
        if (count >= 2)
        {
            p.kind = ClaimKind::count;
            p.value = std::to_string(count);
        }
        else
            p.kind = ClaimKind::existence;
        return p;
    }
    // numeral + noun
    for (std::size_t i = 0; i + 1 < w.size(); ++i)
    {
        const int n = text::parse_numeral(w[i]);
        if (n < 2 || in(np_stops(), w[i + 1]))
            continue;
        auto head = np_head(w, i + 1, lexicon);
        if (head.empty())
            continue;
        p.kind = ClaimKind::count;
        p.object = head;
        p.value = std::to_string(n);
        return p;
    }
    // "a/an/the X is ..."
    if (!w.empty() && in(determiners(), w[0]))
    {
        std::size_t stop = 0;
        auto head = np_head(w, 1, lexicon, &stop);
        if (head.empty())
            return p;
        p.object = head;
        if (stop < w.size() && in(copulas(), w[stop]))
        {
            std::size_t k = stop + 1;
            while (k < w.size() && (lexicon.contains(w[k]) || w[k] == "not" || w[k] == "also"))
            {
                if (w[k] == "not")
                    p.negated = true;
                ++k;
            }
            if (k >= w.size())
                return Parsed {};
            if (in(relation_words(), w[k]) || (w[k] == "in" && k + 1 < w.size() && w[k + 1] == "front"))
            {
                p.kind = ClaimKind::relation;
                p.value = join(w, k);
                return p;
            }
            if (in(location_words(), w[k]))
            {
                p.kind = ClaimKind::existence;
                return p;
            }
            if (in(determiners(), w[k]) || in(copulas(), w[k]))
                return other_about(head);
            p.kind = ClaimKind::attribute;
            p.value = w[k];
            p.attribute = attribute_category(w[k]);
            return p;
        }
        for (std::size_t k = stop; k < w.size(); ++k)
            if (in(relation_words(), w[k]) || (w[k] == "in" && k + 1 < w.size() && w[k + 1] == "front"))
            {
                p.kind = ClaimKind::relation;
                p.value = join(w, k);
                return p;
            }
        return other_about(head);
    }
    return p;
}

std::pair<std::size_t, std::size_t> token_span(const std::vector<std::pair<std::size_t, std::size_t>>& ranges,
                                               std::size_t begin, std::size_t end, std::size_t text_size)
{
    std::size_t first = std::string::npos;
    std::size_t last = 0;
    for (std::size_t i = 0; i < ranges.size(); ++i)
    {
        const auto [b, e] = ranges[i];
        if (b < end && e > begin)
        {
            first = std::min(first, i);
            last = std::max(last, i);
        }
    }
    if (first != std::string::npos)
        return {first, last};
    // Alignment failed: map the byte range proportionally onto the steps.
    const auto n = ranges.size();
    const double scale = text_size == 0 ? 0.0 : static_cast<double>(n) / static_cast<double>(text_size);
    auto lo = std::min(n - 1, static_cast<std::size_t>(std::floor(static_cast<double>(begin) * scale)));
    auto hi = static_cast<std::size_t>(std::ceil(static_cast<double>(end) * scale));
    hi = std::clamp<std::size_t>(hi, lo + 1, n) - 1;
    return {lo, hi};
}

} // namespace

std::string question_object(std::string_view question)
{
    const auto w = text::words(question);
    static const WordSet skip {"a", "an", "any", "the", "some"};
    static const WordSet stop {"in", "on", "at", "visible", "within", "inside", "near", "of", "here", "there", "this",
                               "that", "the", "present", "shown", "to", "from", "anywhere"};
    for (std::size_t i = 0; i + 1 < w.size(); ++i)
    {
        const bool there = w[i] == "there" && ((i > 0 && in(copulas(), w[i - 1])) || in(copulas(), w[i + 1]));
        const bool see = w[i] == "see" || w[i] == "contain" || w[i] == "contains";
        if (!there && !see)
            continue;
        std::size_t j = i + 1;
        if (there && in(copulas(), w[j]))
            ++j;
        while (j < w.size() && in(skip, w[j]))
            ++j;
        std::string object;
        while (j < w.size() && !in(stop, w[j]))
        {
            if (!object.empty())
                object += ' ';
            object += w[j++];
        }
        if (!object.empty())
            return object;
    }
    return {};
}

std::vector<std::pair<std::size_t, std::size_t>> align_tokens(std::string_view text, std::span<const TokenStep> steps)
{
    std::vector<std::pair<std::size_t, std::size_t>> out;
    out.reserve(steps.size());
    std::size_t cursor = 0;
    for (const auto& step: steps)
    {
        std::string_view tok = step.token_text;
        if (tok.empty())
        {
            out.emplace_back(cursor, cursor);
            continue;
        }
        if (text.compare(cursor, tok.size(), tok) == 0)
        {
            out.emplace_back(cursor, cursor + tok.size());
            cursor += tok.size();
            continue;
        }
        auto core = text::trim(tok);
        if (core.empty())
        {
            out.emplace_back(cursor, cursor);
            continue;
        }
        const auto pos = text.find(core, cursor);
        if (pos == std::string_view::npos)
        {
            out.emplace_back(cursor, cursor);
            continue;
        }
        out.emplace_back(pos, pos + core.size());
        cursor = pos + core.size();
    }
    return out;
}

std::vector<Claim> extract_claims(const GenerationOutput& response, std::string_view question)
{
    std::vector<Claim> claims;
    if (response.steps.empty())
        return claims;
    const std::string_view text = response.response_text;
    const auto ranges = align_tokens(text, response.steps);
    const auto sentences = text::sentence_spans(text);
    if (sentences.empty())
        return claims;
    const auto lexicon = HedgeLexicon::builtin();

    const auto all = text::words(text);
    if (sentences.size() == 1 && polar_index(all, lexicon) != std::string::npos)
    {
        const auto pi = polar_index(all, lexicon);
        Claim c;
        c.kind = ClaimKind::existence;
        c.span_start = 0;
        c.span_end = response.steps.size() - 1;
        c.char_begin = sentences.front().begin;
        c.char_end = sentences.front().end;
        c.text = std::string(text.substr(c.char_begin, c.char_end - c.char_begin));
        c.negated = is_no(all[pi]);
        c.object = question_object(question);
        if (c.object.empty())
        {
            const std::vector<std::string> rest(all.begin() + static_cast<std::ptrdiff_t>(pi) + 1, all.end());
            c.object = parse_sentence(rest, lexicon).object;
        }
        claims.push_back(std::move(c));
        return claims;
    }

    for (const auto& s: sentences)
    {
        const auto sentence = text.substr(s.begin, s.end - s.begin);
        const auto p = parse_sentence(text::words(sentence), lexicon);
        Claim c;
        c.kind = p.kind;
        c.object = p.object;
        c.attribute = p.attribute;
        c.value = p.value;
        c.negated = p.negated;
        c.char_begin = s.begin;
        c.char_end = s.end;
        c.text = std::string(sentence);
        std::tie(c.span_start, c.span_end) = token_span(ranges, s.begin, s.end, text.size());
        claims.push_back(std::move(c));
    }
    return claims;
}

VerdictResult classify_verdict(const Claim& claim, std::string_view answer, const HedgeLexicon& lexicon)
{
    const auto w = text::words(answer);
    VerdictResult r;
    r.confidence = 1.0 - hedge_ratio(answer, lexicon);
    if (w.empty())
    {
        r.confidence = 0.0;
        return r;
    }
    const bool hedged = r.confidence < 1.0;
    const bool lead_yes = is_yes(w.front());
    const bool lead_no = is_no(w.front());
    const bool negation = lead_no || std::any_of(w.begin(), w.end(), [](const std::string& x) {
                              return in(negations(), x) || (x.size() > 3 && x.ends_with("n't"));
                          });

    const auto mentions = [&](std::string_view term) {
        if (term.empty())
            return false;
        // Multi-word objects are matched on their head noun.
        const auto space = term.rfind(' ');
        const auto head = space == std::string_view::npos ? term : term.substr(space + 1);
        return std::any_of(w.begin(), w.end(), [&](const std::string& x) {
            return x == head || x == std::string(head) + "s" || x == std::string(head) + "es" ||
                   (head.size() > 1 && head.back() == 's' && x == head.substr(0, head.size() - 1));
        });
    };

    // Verdict on the claim read positively; negated claims flip at the end.
    Verdict v = Verdict::ambiguous;
    switch (claim.kind)
    {
    case ClaimKind::existence:
        if (lead_no)
            v = Verdict::contradicts;
        else if (lead_yes)
            v = Verdict::supports;
        else if (negation)
            v = Verdict::contradicts;
        else if (hedged)
            v = Verdict::ambiguous;
        else if (mentions(claim.object))
            v = Verdict::supports;
        break;
    case ClaimKind::attribute: {
        if (lead_no)
            v = Verdict::contradicts;
        else if (hedged)
            v = Verdict::ambiguous;
        else if (mentions(claim.value))
            v = Verdict::supports;
        else if (std::any_of(w.begin(), w.end(), [&](const std::string& x) {
                     return x != claim.value && !claim.attribute.empty() && claim.attribute != "state" &&
                            attribute_category(x) == claim.attribute;
                 }))
            v = Verdict::contradicts;
        else if (lead_yes)
            v = Verdict::supports;
        break;
    }
    case ClaimKind::count: {
        std::vector<int> numbers;
        for (const auto& x: w)
            if (const int n = text::parse_numeral(x); n >= 0)
                numbers.push_back(n);
        const int claimed = claim.value.empty() ? -1 : text::parse_numeral(claim.value);
        if (lead_no)
            v = Verdict::contradicts;
        else if (hedged)
            v = Verdict::ambiguous;
        else if (!numbers.empty())
            v = std::find(numbers.begin(), numbers.end(), claimed) != numbers.end() ? Verdict::supports
                                                                                     : Verdict::contradicts;
        else if (lead_yes)
            v = Verdict::supports;
        break;
    }
    case ClaimKind::relation:
    case ClaimKind::other:
        if (lead_no)
            v = Verdict::contradicts;
        else if (lead_yes)
            v = Verdict::supports;
        else if (negation && !hedged)
            v = Verdict::contradicts;
        break;
    }
    if (claim.negated && v != Verdict::ambiguous)
        v = v == Verdict::supports ? Verdict::contradicts : Verdict::supports;
    r.verdict = v;
    return r;
}

std::string_view to_string(EditKind kind) noexcept
{
    switch (kind)
    {
    case EditKind::remove_claim:
        return "remove_claim";
    case EditKind::replace_span:
        return "replace_span";
    case EditKind::insert_hedge:
        return "insert_hedge";
    case EditKind::append_detail:
        return "append_detail";
    }
    return "remove_claim";
}

namespace
{

int kind_priority(EditKind k)
{
    switch (k)
    {
    case EditKind::remove_claim:
    case EditKind::replace_span:
        return 0;
    case EditKind::insert_hedge:
        return 1;
    case EditKind::append_detail:
        return 2;
    }
    return 3;
}

std::string match_case(std::string_view word, std::string_view like)
{
    std::string out(word);
    if (!like.empty() && std::islower(static_cast<unsigned char>(like.front())))
        out = text::lowercase(out);
    return out;
}

std::string capitalize(std::string s)
{
    if (!s.empty())
        s.front() = static_cast<char>(std::toupper(static_cast<unsigned char>(s.front())));
    return s;
}

// The answer minus a leading yes/no, as a sentence; empty if it adds nothing.
std::string detail_sentence(const Claim& claim, std::string_view answer, const HedgeLexicon& lexicon)
{
    const auto claim_words = text::words(claim.text);
    const WordSet known(claim_words.begin(), claim_words.end());
    bool extra = false;
    for (const auto& x: text::words(answer))
        if (!in(filler(), x) && !in(known, x) && !lexicon.contains(x) && !in(negations(), x))
            extra = true;
    if (!extra)
        return {};
    auto rest = text::trim(answer);
    const auto ws = located_words(rest);
    if (!ws.empty() && (is_yes(ws.front().norm) || is_no(ws.front().norm)))
    {
        rest.remove_prefix(ws.front().end);
        while (!rest.empty() && (rest.front() == ',' || rest.front() == ';' || rest.front() == ':' ||
                                 std::isspace(static_cast<unsigned char>(rest.front()))))
            rest.remove_prefix(1);
    }
    auto sentence = capitalize(std::string(text::trim(rest)));
    if (sentence.empty())
        return {};
    if (sentence.back() != '.' && sentence.back() != '!' && sentence.back() != '?')
        sentence += '.';
    return sentence;
}

// The hedge edit for a claim, or nullopt if the claim is already hedged.
std::optional<IntegrationEdit> hedge_edit(std::string_view text, const Claim& claim, const HedgeLexicon& lexicon)
{
    const auto sentence = text.substr(claim.char_begin, claim.char_end - claim.char_begin);
    const auto ws = located_words(sentence, claim.char_begin);
    if (ws.empty())
        return std::nullopt;
    IntegrationEdit e;
    e.kind = EditKind::insert_hedge;
    e.target = claim;
    const auto w = norms(ws);
    if (const auto pi = polar_index(w, lexicon); pi != std::string::npos)
    {
        if (pi > 0)
            return std::nullopt;
        const auto& word = ws[pi];
        e.begin = word.begin;
        e.end = word.end;
        e.replacement_text = "Possibly " + text::lowercase(text.substr(word.begin, word.end - word.begin));
        if (!std::isupper(static_cast<unsigned char>(text[word.begin])))
            e.replacement_text = "possibly " + text::lowercase(text.substr(word.begin, word.end - word.begin));
        return e;
    }
    for (std::size_t i = 0; i < ws.size(); ++i)
    {
        if (!in(copulas(), w[i]))
            continue;
        if (i + 1 < ws.size() && lexicon.contains(w[i + 1]))
            return std::nullopt;
        e.begin = e.end = ws[i].end;
        e.replacement_text = " possibly";
        return e;
    }
    if (lexicon.contains(w.front()))
        return std::nullopt;
    const auto& first = ws.front();
    const auto raw = text.substr(first.begin, first.end - first.begin);
    e.begin = first.begin;
    e.end = first.end;
    e.replacement_text = "Possibly " + (raw == "I" ? std::string(raw) : match_case(raw, "x"));
    return e;
}

// Turns a contradiction edit into a replacement of the claim by the corrected statement.
void state_correction(IntegrationEdit& e, std::string_view answer)
{
    const auto& claim = e.target;
    e.kind = EditKind::replace_span;
    e.begin = claim.char_begin;
    e.end = claim.char_end;
    if (claim.kind == ClaimKind::existence && !claim.object.empty())
        e.replacement_text = claim.negated ? fmt::format("There is a {}.", claim.object)
                                           : fmt::format("There is no {}.", claim.object);
    else
    {
        auto stated = capitalize(std::string(text::trim(answer)));
        e.replacement_text = stated.empty() ? std::string("No.") : stated;
    }
}

bool footprints_overlap(const IntegrationEdit& a, const IntegrationEdit& b)
{
    const auto ab = a.target.char_begin, ae = a.target.char_end;
    const auto bb = b.target.char_begin, be = b.target.char_end;
    if (ab == ae || bb == be)
        return ab == bb;
    return ab < be && bb < ae;
}

bool same_edit(const IntegrationEdit& a, const IntegrationEdit& b)
{
    return a.kind == b.kind && a.begin == b.begin && a.end == b.end && a.replacement_text == b.replacement_text;
}

std::string apply_edits_sorted(std::string_view text, std::vector<IntegrationEdit> edits)
{
    std::sort(edits.begin(), edits.end(), [](const IntegrationEdit& a, const IntegrationEdit& b) {
        if (a.begin != b.begin)
            return a.begin > b.begin;
        return a.end > b.end;
    });
    std::string out(text);
    for (const auto& e: edits)
        out.replace(e.begin, e.end - e.begin, e.replacement_text.value_or(""));
    return out;
}

} // namespace

std::pair<std::vector<IntegrationEdit>, std::vector<EditConflict>> plan_edits(std::string_view text,
                                                                              std::span<const VerificationItem> items,
                                                                              double floor,
                                                                              const HedgeLexicon& lexicon)
{
    std::vector<IntegrationEdit> proposed;
    for (std::size_t i = 0; i < items.size(); ++i)
    {
        const auto& item = items[i];
        const auto& claim = item.claim;
        if (claim.char_begin > claim.char_end || claim.char_end > text.size())
            throw ValidationError(fmt::format("verification {} targets bytes [{}, {}) outside a {}-byte response", i,
                                              claim.char_begin, claim.char_end, text.size()));
        const auto sentence = text.substr(claim.char_begin, claim.char_end - claim.char_begin);
        const auto ws = located_words(sentence, claim.char_begin);
        const auto w = norms(ws);
        const bool polar = polar_index(w, lexicon) != std::string::npos && text::sentence_spans(text).size() == 1;

        IntegrationEdit e;
        e.target = claim;
        e.confidence = item.confidence;
        e.item_index = i;

        if (item.verdict == Verdict::contradicts && item.confidence >= floor)
        {
            if (polar)
            {
                const auto& word = ws[polar_index(w, lexicon)];
                const bool was_yes = is_yes(word.norm);
                e.kind = EditKind::replace_span;
                e.begin = claim.char_begin;
                e.end = claim.char_end;
                const auto raw = text.substr(word.begin, word.end - word.begin);
                std::string flipped = match_case(was_yes ? "No" : "Yes", raw);
                if (!sentence.empty() && (sentence.back() == '.' || sentence.back() == '!'))
                    flipped += sentence.back();
                e.replacement_text = flipped;
                proposed.push_back(std::move(e));
                continue;
            }
            std::size_t b = claim.char_begin;
            std::size_t end = claim.char_end;
            while (end < text.size() && std::isspace(static_cast<unsigned char>(text[end])))
                ++end;
            if (end == text.size())
                while (b > 0 && std::isspace(static_cast<unsigned char>(text[b - 1])))
                    --b;
            std::string rest = std::string(text.substr(0, b)) + std::string(text.substr(end));
            if (text::is_blank(rest))
            {
                // Deleting the only claim would leave nothing; state the correction instead.
                state_correction(e, item.answer);
            }
            else
            {
                e.kind = EditKind::remove_claim;
                e.begin = b;
                e.end = end;
            }
            proposed.push_back(std::move(e));
        }
        else if (item.verdict == Verdict::supports)
        {
            if (polar)
                continue;
            auto detail = detail_sentence(claim, item.answer, lexicon);
            if (detail.empty() || text.find(detail) != std::string_view::npos)
                continue;
            e.kind = EditKind::append_detail;
            e.begin = e.end = claim.char_end;
            e.replacement_text = " " + detail;
            proposed.push_back(std::move(e));
        }
        else if (auto h = hedge_edit(text, claim, lexicon))
        {
            h->confidence = item.confidence;
            h->item_index = i;
            proposed.push_back(std::move(*h));
        }
    }

    std::vector<std::size_t> order(proposed.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const auto& x = proposed[a];
        const auto& y = proposed[b];
        if (x.confidence != y.confidence)
            return x.confidence > y.confidence;
        return kind_priority(x.kind) < kind_priority(y.kind);
    });

    std::vector<IntegrationEdit> kept;
    std::vector<EditConflict> conflicts;
    for (const auto idx: order)
    {
        const auto& cand = proposed[idx];
        auto clash = std::find_if(kept.begin(), kept.end(),
                                  [&](const IntegrationEdit& k) { return footprints_overlap(k, cand); });
        if (clash == kept.end())
            kept.push_back(cand);
        else if (!same_edit(*clash, cand))
            conflicts.push_back({*clash, cand});
    }
    // Removals that are each safe alone can still delete every sentence together.
    if (!kept.empty() && text::is_blank(apply_edits_sorted(text, kept)))
    {
        auto removal = std::find_if(kept.begin(), kept.end(),
                                    [](const IntegrationEdit& k) { return k.kind == EditKind::remove_claim; });
        if (removal != kept.end())
            state_correction(*removal, items[removal->item_index].answer);
    }
    std::stable_sort(kept.begin(), kept.end(), [](const IntegrationEdit& a, const IntegrationEdit& b) {
        if (a.begin != b.begin)
            return a.begin > b.begin;
        return a.end > b.end;
    });
    return {std::move(kept), std::move(conflicts)};
}

std::string apply_edits(std::string text, std::span<const IntegrationEdit> edits)
{
    for (const auto& e: edits)
        text.replace(e.begin, e.end - e.begin, e.replacement_text.value_or(""));
    return text;
}

IntegrationResult integrate_verifications(std::string_view response_text, std::span<const VerificationItem> items,
                                          double confidence_floor, const HedgeLexicon& lexicon)
{
    auto [edits, conflicts] = plan_edits(response_text, items, confidence_floor, lexicon);
    IntegrationResult r;
    r.text = apply_edits(std::string(response_text), edits);
    r.edits = std::move(edits);
    r.conflicts = std::move(conflicts);
    return r;
}

ConvergenceDecision check_convergence(double u_t, std::optional<double> u_prev, const Config& cfg)
{
    if (u_t < cfg.tau_u)
        return ConvergenceDecision::stop_below_threshold;
    if (u_prev && std::abs(u_t - *u_prev) < cfg.epsilon)
        return ConvergenceDecision::stop_delta;
    return ConvergenceDecision::continue_refining;
}

std::vector<double> map_view_attention(std::span<const double> view_row, int view_grid_h, int view_grid_w,
                                       const BBox& view_bbox, int grid_h, int grid_w, int image_w, int image_h)
{
    if (view_grid_h <= 0 || view_grid_w <= 0 || grid_h <= 0 || grid_w <= 0)
        throw ValidationError("grid dims must be positive");
    if (view_row.size() != static_cast<std::size_t>(view_grid_h) * static_cast<std::size_t>(view_grid_w))
        throw ValidationError("attention row does not match the view grid");
    if (!view_bbox.within(image_w, image_h))
        throw ValidationError("view lies outside the image");

    std::vector<BBox> cols(static_cast<std::size_t>(grid_w));
    std::vector<BBox> rows(static_cast<std::size_t>(grid_h));
    for (int c = 0; c < grid_w; ++c)
        cols[static_cast<std::size_t>(c)] = cell_to_pixels({0, c}, grid_h, grid_w, image_w, image_h);
    for (int r = 0; r < grid_h; ++r)
        rows[static_cast<std::size_t>(r)] = cell_to_pixels({r, 0}, grid_h, grid_w, image_w, image_h);

    std::vector<double> out(static_cast<std::size_t>(grid_h) * static_cast<std::size_t>(grid_w), 0.0);
    std::vector<double> ox(static_cast<std::size_t>(grid_w));
    std::vector<double> oy(static_cast<std::size_t>(grid_h));
    const double cw = static_cast<double>(view_bbox.width()) / view_grid_w;
    const double ch = static_cast<double>(view_bbox.height()) / view_grid_h;
    for (int vr = 0; vr < view_grid_h; ++vr)
    {
        const double y0 = view_bbox.y0 + vr * ch;
        const double y1 = y0 + ch;
        for (int r = 0; r < grid_h; ++r)
        {
            const auto& b = rows[static_cast<std::size_t>(r)];
            oy[static_cast<std::size_t>(r)] = std::max(0.0, std::min(y1, double(b.y1)) - std::max(y0, double(b.y0)));
        }
        for (int vc = 0; vc < view_grid_w; ++vc)
        {
            const double mass = view_row[static_cast<std::size_t>(vr * view_grid_w + vc)];
            if (mass == 0.0)
                continue;
            const double x0 = view_bbox.x0 + vc * cw;
            const double x1 = x0 + cw;
            for (int c = 0; c < grid_w; ++c)
            {
                const auto& b = cols[static_cast<std::size_t>(c)];
                ox[static_cast<std::size_t>(c)] =
                    std::max(0.0, std::min(x1, double(b.x1)) - std::max(x0, double(b.x0)));
            }
            const double area = cw * ch;
            for (int r = 0; r < grid_h; ++r)
            {
                const double fy = oy[static_cast<std::size_t>(r)];
                if (fy == 0.0)
                    continue;
                for (int c = 0; c < grid_w; ++c)
                    out[static_cast<std::size_t>(r * grid_w + c)] += mass * fy * ox[static_cast<std::size_t>(c)] / area;
            }
        }
    }
    return out;
}

std::size_t max_backend_calls(const Config& cfg)
{
    const auto T = static_cast<std::size_t>(std::max(cfg.max_iterations, 0));
    const auto k = static_cast<std::size_t>(std::max(cfg.k_samples, 0));
    const auto K = static_cast<std::size_t>(std::max(cfg.crops_per_iteration, 0));
    return 1 + T * (k + K) + k;
}

namespace
{

// The current response kept token-aligned: each token carries its statistics, its
// attention row over the full image's grid, and its byte range in the text.
class AlignedResponse
{
  public:
    struct Token
    {
        TokenStep step;
        std::vector<double> attention;
        std::size_t begin = 0;
        std::size_t end = 0;
    };

    explicit AlignedResponse(const GenerationOutput& out):
        _text(out.response_text), _grid_h(out.attention->grid_h()), _grid_w(out.attention->grid_w()),
        _image_w(out.image_w), _image_h(out.image_h)
    {
        const auto ranges = align_tokens(_text, out.steps);
        for (std::size_t i = 0; i < out.steps.size(); ++i)
        {
            const auto row = out.attention->row(i);
            _tokens.push_back({out.steps[i], {row.begin(), row.end()}, ranges[i].first, ranges[i].second});
        }
    }

    [[nodiscard]] const std::string& text() const noexcept { return _text; }
    [[nodiscard]] int grid_h() const noexcept { return _grid_h; }
    [[nodiscard]] int grid_w() const noexcept { return _grid_w; }
    [[nodiscard]] std::size_t cells() const noexcept
    {
        return static_cast<std::size_t>(_grid_h) * static_cast<std::size_t>(_grid_w);
    }

    [[nodiscard]] GenerationOutput to_output() const
    {
        GenerationOutput out;
        out.response_text = _text;
        out.image_w = _image_w;
        out.image_h = _image_h;
        std::vector<double> flat;
        for (const auto& t: _tokens)
        {
            out.steps.push_back(t.step);
            flat.insert(flat.end(), t.attention.begin(), t.attention.end());
        }
        out.attention = AttentionMap(_tokens.size(), _grid_h, _grid_w, std::move(flat));
        return out;
    }

    /// Mean attention row of the tokens overlapping [begin, end); uniform if none.
    [[nodiscard]] std::vector<double> mean_row(std::size_t begin, std::size_t end) const
    {
        std::vector<double> row(cells(), 0.0);
        std::size_t n = 0;
        for (const auto& t: _tokens)
            if ((t.begin < end && t.end > begin) || (begin == end && t.begin == begin))
            {
                for (std::size_t j = 0; j < row.size(); ++j)
                    row[j] += t.attention[j];
                ++n;
            }
        if (n == 0)
            return std::vector<double>(row.size(), 1.0 / static_cast<double>(row.size()));
        for (auto& v: row)
            v /= static_cast<double>(n);
        return row;
    }

    /// Replaces bytes [begin, end) with `replacement`, dropping the tokens inside the
    /// range (or keeping them when `keep_inside`) and adding `fresh` tokens for it.
    void apply(std::size_t begin, std::size_t end, const std::string& replacement, std::vector<Token> fresh,
               bool keep_inside)
    {
        const auto new_end = begin + replacement.size();
        const auto delta = static_cast<std::ptrdiff_t>(replacement.size()) - static_cast<std::ptrdiff_t>(end - begin);
        std::vector<Token> next;
        for (auto& t: _tokens)
        {
            const bool inside = begin < end && ((t.begin < end && t.end > begin) ||
                                                (t.begin == t.end && t.begin >= begin && t.begin < end));
            if (inside)
            {
                if (keep_inside)
                {
                    t.begin = begin;
                    t.end = new_end;
                    next.push_back(std::move(t));
                }
                continue;
            }
            if (t.begin >= end)
            {
                t.begin = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(t.begin) + delta);
                t.end = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(t.end) + delta);
            }
            else if (t.end > begin)
                t.end = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(t.end) + delta);
            next.push_back(std::move(t));
        }
        for (auto& t: fresh)
        {
            t.begin = begin;
            t.end = new_end;
            next.push_back(std::move(t));
        }
        std::stable_sort(next.begin(), next.end(), [](const Token& a, const Token& b) { return a.begin < b.begin; });
        _tokens = std::move(next);
        _text.replace(begin, end - begin, replacement);
        if (_tokens.empty())
        {
            // Keep the response scoreable: one certain token with uniform attention.
            _tokens.push_back({TokenStep {_text, {{_text, 0.0}}, 0},
                               std::vector<double>(cells(), 1.0 / static_cast<double>(cells())), 0, _text.size()});
        }
    }

  private:
    std::string _text;
    std::vector<Token> _tokens;
    int _grid_h;
    int _grid_w;
    int _image_w;
    int _image_h;
};

std::uint64_t fnv1a(std::string_view s)
{
    std::uint64_t h = 1469598103934665603ULL;
    for (const unsigned char c: s)
    {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

bool is_full(const CropSpec& c, int w, int h) { return c.bbox_px == BBox {0, 0, w, h} && c.scale == 1.0; }

std::optional<CropSpec> as_view(const CropSpec& c, int w, int h)
{
    if (is_full(c, w, h))
        return std::nullopt;
    return c;
}

} // namespace

RefinementTrace run_correction(const Image& image, std::string_view question, const Config& cfg_in, Backend& backend,
                               const Embedder& embedder, const CorrectionOptions& options)
{
    const Config cfg = validate_config(cfg_in);
    const HedgeLexicon lexicon = options.lexicon ? *options.lexicon : lexicon_for(cfg);

    RefinementTrace trace;
    trace.question = std::string(question);
    const auto generate = [&](const GenerateRequest& req) {
        ++trace.backend_calls;
        return backend.generate(req);
    };

    GenerateRequest initial_req;
    initial_req.image = image;
    initial_req.prompt = std::string(question);
    initial_req.temperature = 0.0;
    initial_req.max_tokens = cfg.max_tokens;
    initial_req.top_k = cfg.top_k;
    initial_req.want_attention = true;
    const auto initial = generate(initial_req);
    if (!initial.attention)
        throw BackendError("backend returned no attention for the initial response");
    if (initial.steps.empty())
        throw BackendError("backend returned an empty initial response");
    const int W = initial.image_w;
    const int H = initial.image_h;

    AlignedResponse current(initial);
    std::optional<CropSpec> evidence;
    struct SampleCache
    {
        std::string text;
        std::optional<CropSpec> evidence;
        std::vector<std::string> samples;
    };
    std::optional<SampleCache> cache;
    std::optional<double> u_prev;

    int t = 0;
    try
    {
        for (;; ++t)
        {
            const auto out = current.to_output();
            const auto claims = extract_claims(out, question);

            std::vector<std::string> samples;
            if (cache && cache->text == out.response_text && cache->evidence == evidence)
                samples = cache->samples;
            else
            {
                for (int i = 0; i < cfg.k_samples; ++i)
                {
                    GenerateRequest req = initial_req;
                    req.view = evidence;
                    req.temperature = cfg.temperature;
                    req.want_attention = false;
                    req.seed = static_cast<std::uint64_t>(i + 1);
                    samples.push_back(generate(req).response_text);
                }
                cache = SampleCache {out.response_text, evidence, samples};
            }
            const auto score = score_response(out, claims, samples, cfg, embedder, lexicon);
            trace.iterations.push_back({out.response_text, score.response, {}});

            const double u = score.response.u;
            const auto decision = check_convergence(u, u_prev, cfg);
            if (decision == ConvergenceDecision::stop_below_threshold)
            {
                trace.stop_reason = StopReason::converged_below_threshold;
                break;
            }
            if (decision == ConvergenceDecision::stop_delta)
            {
                trace.stop_reason = StopReason::converged_delta;
                break;
            }
            if (t >= cfg.max_iterations)
            {
                trace.stop_reason = StopReason::max_iterations;
                break;
            }
            u_prev = u;
            if (claims.empty())
                continue;

            std::vector<std::size_t> selected;
            for (std::size_t i = 0; i < claims.size(); ++i)
                if (score.per_claim[i].u > cfg.tau_u)
                    selected.push_back(i);
            if (selected.empty())
            {
                std::size_t best = 0;
                for (std::size_t i = 1; i < claims.size(); ++i)
                    if (score.per_claim[i].u > score.per_claim[best].u)
                        best = i;
                selected.push_back(best);
            }

            std::vector<PlannedCrop> planned;
            if (options.uncertainty_guided_regions)
            {
                std::vector<std::pair<std::size_t, std::vector<Region>>> regions_by_claim;
                for (const auto ci: selected)
                {
                    const auto saliency = build_saliency(*out.attention, claims[ci]);
                    auto regions = find_underexplored(saliency, cfg.tau_attn_rel, W, H, cfg.eight_connected);
                    if (regions.empty())
                    {
                        Region whole;
                        double sum = 0.0;
                        for (int r = 0; r < saliency.grid_h(); ++r)
                            for (int c = 0; c < saliency.grid_w(); ++c)
                            {
                                whole.cells.push_back({r, c});
                                sum += saliency.at(r, c);
                            }
                        whole.bbox_px = {0, 0, W, H};
                        whole.mean_saliency = sum / static_cast<double>(whole.cells.size());
                        regions.push_back(std::move(whole));
                    }
                    regions_by_claim.emplace_back(ci, std::move(regions));
                }
                planned = allocate_crops(regions_by_claim, W, H, cfg.scales, cfg.crops_per_iteration);
            }
            else
            {
                std::seed_seq seq {static_cast<std::uint32_t>(options.seed), static_cast<std::uint32_t>(options.seed >> 32),
                                   static_cast<std::uint32_t>(fnv1a(question)), static_cast<std::uint32_t>(t)};
                std::mt19937_64 rng(seq);
                std::uniform_int_distribution<int> row(0, current.grid_h() - 1);
                std::uniform_int_distribution<int> col(0, current.grid_w() - 1);
                for (int i = 0; i < cfg.crops_per_iteration; ++i)
                {
                    Region region;
                    region.cells.push_back({row(rng), col(rng)});
                    region.bbox_px = cell_to_pixels(region.cells.front(), current.grid_h(), current.grid_w(), W, H);
                    const double cx = (region.bbox_px.x0 + region.bbox_px.x1) / 2.0;
                    const double cy = (region.bbox_px.y0 + region.bbox_px.y1) / 2.0;
                    const double scale = cfg.scales[static_cast<std::size_t>(i) % cfg.scales.size()];
                    planned.push_back({selected[static_cast<std::size_t>(i) % selected.size()], region,
                                       crop_at(cx, cy, scale, W, H)});
                }
            }
            if (!options.multi_scale)
                for (auto& p: planned)
                    p.crop = full_view(W, H);

            // Identical requests would return identical answers; ask each once.
            std::vector<PlannedCrop> unique;
            for (auto& p: planned)
                if (std::none_of(unique.begin(), unique.end(), [&](const PlannedCrop& q) {
                        return q.claim_index == p.claim_index && q.crop == p.crop;
                    }))
                    unique.push_back(std::move(p));

            std::vector<GenerationOutput> answers;
            auto& items = trace.iterations.back().verifications;
            for (const auto& p: unique)
            {
                const auto& claim = claims[p.claim_index];
                const bool polar_unparsed =
                    claim.object.empty() && claims.size() == 1 && polar_index(text::words(claim.text), lexicon) != std::string::npos;
                GenerateRequest req = initial_req;
                req.view = as_view(p.crop, W, H);
                req.prompt = polar_unparsed ? std::string(question)
                                            : build_verification_question(claim, options.templates);
                auto vout = generate(req);
                VerificationItem item;
                item.claim = claim;
                item.crop = p.crop;
                item.question = req.prompt;
                item.answer = vout.response_text;
                const auto verdict = classify_verdict(claim, vout.response_text, lexicon);
                item.verdict = verdict.verdict;
                item.confidence = verdict.confidence;
                items.push_back(std::move(item));
                answers.push_back(std::move(vout));
            }

            const auto [edits, conflicts] = plan_edits(current.text(), items, cfg.confidence_floor, lexicon);
            (void) conflicts;
            for (const auto& e: edits)
            {
                std::vector<AlignedResponse::Token> fresh;
                const auto claim_row = current.mean_row(e.target.char_begin, e.target.char_end);
                if (e.kind == EditKind::insert_hedge)
                    fresh.push_back({TokenStep {"possibly", {{"possibly", 0.0}}, 0}, claim_row, 0, 0});
                else if (e.kind != EditKind::remove_claim)
                {
                    const auto& vout = answers[e.item_index];
                    const auto& crop = items[e.item_index].crop;
                    for (std::size_t s = 0; s < vout.steps.size(); ++s)
                    {
                        std::vector<double> row = claim_row;
                        if (vout.attention && s < vout.attention->rows())
                            row = map_view_attention(vout.attention->row(s), vout.attention->grid_h(),
                                                     vout.attention->grid_w(), crop.bbox_px, current.grid_h(),
                                                     current.grid_w(), W, H);
                        fresh.push_back({vout.steps[s], std::move(row), 0, 0});
                    }
                }
                current.apply(e.begin, e.end, e.replacement_text.value_or(""), std::move(fresh),
                              e.kind == EditKind::insert_hedge);
            }
            if (!edits.empty())
            {
                const auto decisive = std::min_element(edits.begin(), edits.end(), [](const auto& a, const auto& b) {
                    if (a.confidence != b.confidence)
                        return a.confidence > b.confidence;
                    return a.item_index < b.item_index;
                });
                evidence = as_view(items[decisive->item_index].crop, W, H);
            }
        }
    }
    catch (const BackendError& e)
    {
        if (trace.iterations.empty())
            throw;
        trace.stop_reason = StopReason::backend_error;
        trace.error = fmt::format("iteration {}: {}", t, e.what());
    }
    trace.final_response = current.text();
    return trace;
}

} // namespace recheck
