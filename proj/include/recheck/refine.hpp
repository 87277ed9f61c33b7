// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <recheck/backend.hpp>
#include <recheck/core.hpp>
#include <recheck/reattention.hpp>
#include <recheck/uncertainty.hpp>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace recheck
{

/// Object noun of a polling question such as "Is there a fork in the image?"; empty if
/// the question does not follow that shape.
[[nodiscard]] std::string question_object(std::string_view question);

/// Rule-based claim segmentation. A response that opens with a bare yes/no and has a
/// single sentence is one existence claim about the question's object.
[[nodiscard]] std::vector<Claim> extract_claims(const GenerationOutput& response, std::string_view question = {});

/// Byte range [begin, end) of each step's token inside the response text. Tokens that
/// cannot be located get an empty range at the current cursor.
[[nodiscard]] std::vector<std::pair<std::size_t, std::size_t>> align_tokens(std::string_view text,
                                                                            std::span<const TokenStep> steps);

struct VerdictResult
{
    Verdict verdict = Verdict::ambiguous;
    double confidence = 0.0; // 1 - hedge_ratio(answer)
};

[[nodiscard]] VerdictResult classify_verdict(const Claim& claim, std::string_view answer,
                                             const HedgeLexicon& lexicon = HedgeLexicon::builtin());

enum class EditKind
{
    remove_claim,
    replace_span,
    insert_hedge,
    append_detail,
};

[[nodiscard]] std::string_view to_string(EditKind kind) noexcept;

/// A text edit derived from one verification. [begin, end) is replaced by
/// replacement_text (absent for removals); footprint is the target claim's sentence.
struct IntegrationEdit
{
    EditKind kind = EditKind::remove_claim;
    Claim target;
    std::optional<std::string> replacement_text;
    std::size_t begin = 0;
    std::size_t end = 0;
    double confidence = 0.0;
    std::size_t item_index = 0;

    friend bool operator==(const IntegrationEdit&, const IntegrationEdit&) = default;
};

struct EditConflict
{
    IntegrationEdit kept;
    IntegrationEdit dropped;
};

struct IntegrationResult
{
    std::string text;
    std::vector<IntegrationEdit> edits; // applied, in application (descending span) order
    std::vector<EditConflict> conflicts;
};

/// Rule-based integration: confident contradictions remove the claim's sentence (or
/// flip a bare yes/no answer), supports with extra detail append it, ambiguous or
/// low-confidence evidence inserts "possibly" after the claim's verb. Overlapping edits
/// keep the higher-confidence one.
[[nodiscard]] IntegrationResult integrate_verifications(std::string_view response_text,
                                                        std::span<const VerificationItem> items,
                                                        double confidence_floor,
                                                        const HedgeLexicon& lexicon = HedgeLexicon::builtin());

/// The planning half of integrate_verifications, exposed for callers that track token
/// statistics alongside the text.
[[nodiscard]] std::pair<std::vector<IntegrationEdit>, std::vector<EditConflict>> plan_edits(
    std::string_view response_text, std::span<const VerificationItem> items, double confidence_floor,
    const HedgeLexicon& lexicon = HedgeLexicon::builtin());

[[nodiscard]] std::string apply_edits(std::string text, std::span<const IntegrationEdit> edits);

enum class ConvergenceDecision
{
    stop_below_threshold,
    stop_delta,
    continue_refining,
};

[[nodiscard]] ConvergenceDecision check_convergence(double u_t, std::optional<double> u_prev, const Config& cfg);

/// Maps one attention row over a view's visual grid back onto the full image's grid,
/// spreading each view cell's mass over the full-grid cells it overlaps.
[[nodiscard]] std::vector<double> map_view_attention(std::span<const double> view_row, int view_grid_h,
                                                     int view_grid_w, const BBox& view_bbox, int grid_h, int grid_w,
                                                     int image_w, int image_h);

/// Pipeline switches used by the ablation harness; defaults are the full framework.
struct CorrectionOptions
{
    bool uncertainty_guided_regions = true; // false: crops centered on random grid cells
    bool multi_scale = true;                // false: verify against the full image only
    std::uint64_t seed = 0;                 // random-region stream
    std::vector<QuestionTemplate> templates = default_templates();
    std::optional<HedgeLexicon> lexicon; // default: lexicon_for(cfg)
};

/// Upper bound on backend generate calls for one run: 1 + T(k + K) + k.
[[nodiscard]] std::size_t max_backend_calls(const Config& cfg);

/// Uncertainty-guided self-correction. Every iteration scores the current response,
/// stops on convergence, otherwise verifies its most uncertain claims on crops of
/// under-attended regions and integrates the answers. A backend failure after the
/// first scoring ends the trace with stop_reason = backend_error.
[[nodiscard]] RefinementTrace run_correction(const Image& image, std::string_view question, const Config& cfg,
                                             Backend& backend, const Embedder& embedder,
                                             const CorrectionOptions& options = {});

} // namespace recheck
