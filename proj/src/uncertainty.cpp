// SPDX-License-Identifier: Apache-2.0
#include <recheck/text.hpp>
#include <recheck/uncertainty.hpp>

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace recheck
{

bool HedgeLexicon::contains(std::string_view word) const
{
    return hedges.contains(word) || qualifiers.contains(word) || vague.contains(word);
}

HedgeLexicon HedgeLexicon::builtin()
{
    return HedgeLexicon {
        .hedges = {"possibly", "appears", "seems", "perhaps", "likely"},
        .qualifiers = {"might", "could", "may"},
        .vague = {"something", "various", "unclear"},
    };
}

HedgeLexicon parse_hedge_lexicon(std::string_view content)
{
    HedgeLexicon lex;
    std::set<std::string, std::less<>>* section = nullptr;
    std::istringstream in {std::string(content)};
    std::string line;
    int lineno = 0;
    while (std::getline(in, line))
    {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos)
            line.erase(hash);
        auto entry = text::trim(line);
        if (entry.empty())
            continue;
        if (entry == "[hedges]")
            section = &lex.hedges;
        else if (entry == "[qualifiers]")
            section = &lex.qualifiers;
        else if (entry == "[vague]")
            section = &lex.vague;
        else if (entry.front() == '[')
            throw ValidationError(fmt::format("hedge lexicon line {}: unknown section {}", lineno, entry));
        else
        {
            if (!section)
                throw ValidationError(fmt::format("hedge lexicon line {}: entry outside a section", lineno));
            if (text::split_whitespace(entry).size() != 1)
                throw ValidationError(fmt::format("hedge lexicon line {}: entry contains whitespace", lineno));
            if (text::lowercase(entry) != entry)
                throw ValidationError(fmt::format("hedge lexicon line {}: entry '{}' is not lowercase", lineno, entry));
            section->emplace(entry);
        }
    }
    return lex;
}

HedgeLexicon load_hedge_lexicon(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error(fmt::format("cannot open hedge lexicon '{}'", path));
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_hedge_lexicon(buf.str());
}

HedgeLexicon lexicon_for(const Config& cfg)
{
    return cfg.hedge_lexicon_path.empty() ? HedgeLexicon::builtin() : load_hedge_lexicon(cfg.hedge_lexicon_path);
}

TermFrequencyEmbedder::TermFrequencyEmbedder(std::size_t dimension): _dimension(dimension)
{
    if (dimension == 0)
        throw ValidationError("embedding dimension must be positive");
}

std::size_t TermFrequencyEmbedder::bucket(std::string_view term) const
{
    // FNV-1a, 64 bit
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c: term)
    {
        h ^= c;
        h *= 1099511628211ull;
    }
    return static_cast<std::size_t>(h % _dimension);
}

std::vector<double> TermFrequencyEmbedder::embed(std::string_view input) const
{
    std::vector<double> v(_dimension, 0.0);
    auto terms = text::words(input);
    if (terms.empty())
        terms.push_back(text::lowercase(text::trim(input)));
    for (const auto& t: terms)
        v[bucket(t)] += 1.0;
    const double norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
    for (auto& x: v)
        x /= norm;
    return v;
}

double token_entropy(const TokenStep& step)
{
    double h = 0.0;
    double mass = 0.0;
    for (const auto& cand: step.top_logprobs)
    {
        const double p = std::exp(cand.logprob);
        mass += p;
        if (p > 0.0)
            h -= p * cand.logprob;
    }
    if (const double residual = 1.0 - mass; residual > 0.0)
        h -= residual * std::log(residual);
    return std::max(h, 0.0);
}

double response_token_uncertainty(std::span<const TokenStep> steps, double vocab_bound)
{
    if (steps.empty())
        throw ValidationError("empty response");
    std::size_t widest = 0;
    for (const auto& s: steps)
        widest = std::max(widest, s.top_logprobs.size());
    if (!(vocab_bound >= static_cast<double>(widest) + 1.0))
        throw ValidationError(fmt::format("vocab_bound {} must be at least top_k + 1 = {}", vocab_bound, widest + 1));
    double sum = 0.0;
    for (const auto& s: steps)
        sum += token_entropy(s);
    const double mean = sum / static_cast<double>(steps.size());
    return std::clamp(mean / std::log(vocab_bound), 0.0, 1.0);
}

double attention_dispersion(const AttentionMap& attn, const Claim& claim)
{
    const std::size_t m = attn.num_visual_tokens();
    if (m < 2)
        throw ValidationError("degenerate visual grid");
    validate(claim, attn.rows());
    std::vector<double> mean(m, 0.0);
    const auto n = static_cast<double>(claim.span_end - claim.span_start + 1);
    for (std::size_t i = claim.span_start; i <= claim.span_end; ++i)
    {
        auto row = attn.row(i);
        for (std::size_t j = 0; j < m; ++j)
            mean[j] += row[j] / n;
    }
    const double total = std::accumulate(mean.begin(), mean.end(), 0.0);
    double h = 0.0;
    for (double a: mean)
        if (a > 0.0)
        {
            const double p = a / total;
            h -= p * std::log(p);
        }
    return std::clamp(h / std::log(static_cast<double>(m)), 0.0, 1.0);
}

double semantic_consistency(std::string_view r0, std::span<const std::string> samples, const Embedder& embedder)
{
    if (text::is_blank(r0))
        throw ValidationError("semantic consistency needs a non-empty reference response");
    if (samples.empty())
        throw ValidationError("semantic consistency needs at least one sample");
    const auto ref = embedder.embed(r0);
    std::vector<double> sims;
    sims.reserve(samples.size());
    for (const auto& s: samples)
    {
        if (text::is_blank(s))
        {
            sims.push_back(0.0);
            continue;
        }
        const auto v = embedder.embed(s);
        sims.push_back(std::clamp(std::inner_product(ref.begin(), ref.end(), v.begin(), 0.0), 0.0, 1.0));
    }
    // Fixed summation order keeps the result bit-identical under sample reordering.
    std::sort(sims.begin(), sims.end());
    const double mean = std::accumulate(sims.begin(), sims.end(), 0.0) / static_cast<double>(sims.size());
    return std::clamp(1.0 - mean, 0.0, 1.0);
}

double hedge_ratio(std::string_view input, const HedgeLexicon& lexicon)
{
    const auto tokens = text::words(input);
    if (tokens.empty())
        return 0.0;
    const auto hits = std::count_if(tokens.begin(), tokens.end(), [&](const auto& w) { return lexicon.contains(w); });
    return static_cast<double>(hits) / static_cast<double>(tokens.size());
}

double unified_score(const std::array<double, 4>& components, const std::array<double, 4>& alpha)
{
    double weight_sum = 0.0;
    for (const double a: alpha)
    {
        if (!(a >= 0.0))
            throw ValidationError(fmt::format("uncertainty weight {} must be non-negative", a));
        weight_sum += a;
    }
    if (!(std::abs(weight_sum - 1.0) <= 1e-9))
        throw ValidationError(fmt::format("uncertainty weights must sum to 1 (got {})", weight_sum));
    double u = 0.0;
    for (std::size_t i = 0; i < 4; ++i)
    {
        if (!(components[i] >= 0.0 && components[i] <= 1.0))
            throw ValidationError(fmt::format("uncertainty component {} = {} outside [0,1]", i, components[i]));
        u += alpha[i] * components[i];
    }
    // A convex combination; clamping only absorbs rounding in the weights.
    const auto [lo, hi] = std::minmax_element(components.begin(), components.end());
    return std::clamp(u, *lo, *hi);
}

UncertaintyBreakdown make_breakdown(const std::array<double, 4>& c, const std::array<double, 4>& alpha)
{
    return {c[0], c[1], c[2], c[3], unified_score(c, alpha)};
}

namespace
{

Claim whole_response(std::size_t steps)
{
    Claim c;
    c.span_end = steps - 1;
    return c;
}

} // namespace

ResponseScore score_response(const GenerationOutput& out, std::span<const Claim> claims,
                             std::span<const std::string> samples, const Config& cfg, const Embedder& embedder,
                             const HedgeLexicon& lexicon)
{
    if (!out.attention)
        throw ValidationError("scoring needs cross-modal attention");
    const auto& attn = *out.attention;

    double u_sem = 0.0;
    if (!samples.empty())
        u_sem = semantic_consistency(out.response_text, samples, embedder);
    else if (cfg.alpha[2] > 0.0)
        throw ValidationError("semantic consistency weight is non-zero but no samples were given");

    ResponseScore score;
    double attn_sum = 0.0;
    for (const auto& claim: claims)
    {
        const double u_attn = attention_dispersion(attn, claim);
        attn_sum += u_attn;
        const auto span = std::span<const TokenStep>(out.steps).subspan(claim.span_start,
                                                                        claim.span_end - claim.span_start + 1);
        score.per_claim.push_back(make_breakdown(
            {response_token_uncertainty(span, cfg.vocab_bound), u_attn, u_sem, hedge_ratio(claim.text, lexicon)},
            cfg.alpha));
    }
    double u_attn = 0.0;
    if (!claims.empty())
        u_attn = attn_sum / static_cast<double>(claims.size());
    else if (!out.steps.empty())
        u_attn = attention_dispersion(attn, whole_response(out.steps.size()));

    score.response = make_breakdown({response_token_uncertainty(out.steps, cfg.vocab_bound), u_attn, u_sem,
                                     hedge_ratio(out.response_text, lexicon)},
                                    cfg.alpha);
    return score;
}

ResponseScore score_response(const GenerationOutput& out, std::span<const Claim> claims,
                             std::span<const std::string> samples, const Config& cfg, const Embedder& embedder)
{
    return score_response(out, claims, samples, cfg, embedder, lexicon_for(cfg));
}

} // namespace recheck
