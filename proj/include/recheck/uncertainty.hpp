// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <recheck/core.hpp>

#include <array>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace recheck
{

/// Linguistic uncertainty markers, all lowercase single words.
struct HedgeLexicon
{
    std::set<std::string, std::less<>> hedges;
    std::set<std::string, std::less<>> qualifiers;
    std::set<std::string, std::less<>> vague;

    [[nodiscard]] bool contains(std::string_view word) const;

    /// Hedges: possibly, appears, seems, perhaps, likely. Qualifiers: might, could, may.
    /// Vague: something, various, unclear.
    [[nodiscard]] static HedgeLexicon builtin();
};

/// Parses the `[hedges]` / `[qualifiers]` / `[vague]` sectioned format; `#` starts a comment.
[[nodiscard]] HedgeLexicon parse_hedge_lexicon(std::string_view content);
[[nodiscard]] HedgeLexicon load_hedge_lexicon(const std::string& path);
/// Built-in lexicon for an empty path, otherwise the file.
[[nodiscard]] HedgeLexicon lexicon_for(const Config& cfg);

/// Maps text to a unit-norm vector of fixed dimension. Implementations must be
/// deterministic and safe to call concurrently.
class Embedder
{
  public:
    virtual ~Embedder() = default;
    [[nodiscard]] virtual std::vector<double> embed(std::string_view text) const = 0;
    [[nodiscard]] virtual std::size_t dimension() const = 0;
};

/// Term-frequency vectors over lowercased word tokens, feature-hashed into a fixed
/// number of buckets and L2-normalized. Text with no word tokens embeds its raw
/// lowercase form as a single term.
class TermFrequencyEmbedder final: public Embedder
{
  public:
    explicit TermFrequencyEmbedder(std::size_t dimension = 4096);

    [[nodiscard]] std::vector<double> embed(std::string_view text) const override;
    [[nodiscard]] std::size_t dimension() const override { return _dimension; }

    [[nodiscard]] std::size_t bucket(std::string_view term) const;

  private:
    std::size_t _dimension;
};

/// Shannon entropy (nats) of the top-k distribution plus a residual bucket holding
/// whatever mass the top-k list leaves out.
[[nodiscard]] double token_entropy(const TokenStep& step);

/// Mean per-token entropy divided by ln(vocab_bound), clamped to [0,1].
[[nodiscard]] double response_token_uncertainty(std::span<const TokenStep> steps, double vocab_bound);

/// Entropy of the claim-averaged attention over visual tokens, divided by ln(M).
[[nodiscard]] double attention_dispersion(const AttentionMap& attn, const Claim& claim);

/// 1 - mean cosine(embed(r0), embed(r_i)), cosines clamped to [0,1].
/// Blank samples count as similarity 0.
[[nodiscard]] double semantic_consistency(std::string_view r0, std::span<const std::string> samples,
                                          const Embedder& embedder);

/// Fraction of word tokens found in any lexicon set; 0 for text without tokens.
[[nodiscard]] double hedge_ratio(std::string_view text, const HedgeLexicon& lexicon);

/// Weighted sum of (u_token, u_attn, u_sem, u_claim); components must lie in [0,1].
[[nodiscard]] double unified_score(const std::array<double, 4>& components, const std::array<double, 4>& alpha);

[[nodiscard]] UncertaintyBreakdown make_breakdown(const std::array<double, 4>& components,
                                                  const std::array<double, 4>& alpha);

struct ResponseScore
{
    UncertaintyBreakdown response;
    std::vector<UncertaintyBreakdown> per_claim; // parallel to the claims argument
};

/// Response level: token entropy over all steps, attention dispersion averaged over
/// claims, semantic consistency, hedge ratio of the full text. Per claim: token
/// entropy and hedging restricted to the claim span. Samples may be empty only when
/// the semantic weight is zero.
[[nodiscard]] ResponseScore score_response(const GenerationOutput& out, std::span<const Claim> claims,
                                           std::span<const std::string> samples, const Config& cfg,
                                           const Embedder& embedder, const HedgeLexicon& lexicon);

[[nodiscard]] ResponseScore score_response(const GenerationOutput& out, std::span<const Claim> claims,
                                           std::span<const std::string> samples, const Config& cfg,
                                           const Embedder& embedder);

} // namespace recheck
