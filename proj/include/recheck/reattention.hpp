// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <recheck/core.hpp>

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace recheck
{

struct QuestionTemplate
{
    ClaimKind kind = ClaimKind::other;
    std::string pattern; // may use {object} and {attribute}
};

[[nodiscard]] std::vector<QuestionTemplate> default_templates();
/// One `kind<TAB>pattern` per line; blank lines and `#` comments are skipped.
[[nodiscard]] std::vector<QuestionTemplate> parse_templates(std::string_view content);
[[nodiscard]] std::vector<QuestionTemplate> load_templates(const std::string& path);

/// Mean attention of the claim's token rows, reshaped onto the visual grid.
[[nodiscard]] SaliencyMap build_saliency(const AttentionMap& attn, const Claim& claim);

/// Connected components of cells with saliency strictly below tau_rel * max(S), with
/// their pixel hulls, most under-attended (lowest mean saliency) first.
[[nodiscard]] std::vector<Region> find_underexplored(const SaliencyMap& s, double tau_rel, int image_w,
                                                     int image_h, bool eight_connected = false);

/// Window of ceil(W/scale) x ceil(H/scale) pixels centered on (cx, cy), translated
/// (never shrunk) to fit inside the image.
[[nodiscard]] CropSpec crop_at(double center_x, double center_y, double scale, int image_w, int image_h);

/// One crop per scale for the first K scales, centered on the region's pixel hull.
[[nodiscard]] std::vector<CropSpec> plan_crops(const Region& region, int image_w, int image_h,
                                               std::span<const double> scales, int K);

struct PlannedCrop
{
    std::size_t claim_index = 0;
    Region region;
    CropSpec crop;
};

/// Spends a budget of K crops across the regions of several claims: regions are taken
/// in ascending mean-saliency order (cycling when fewer than K), scales round-robin.
[[nodiscard]] std::vector<PlannedCrop> allocate_crops(
    const std::vector<std::pair<std::size_t, std::vector<Region>>>& regions_by_claim, int image_w, int image_h,
    std::span<const double> scales, int K);

/// Fills the template for the claim's kind; falls back to a generic yes/no question
/// when no template matches or a placeholder slot is empty.
[[nodiscard]] std::string build_verification_question(const Claim& claim,
                                                      std::span<const QuestionTemplate> templates);

} // namespace recheck
