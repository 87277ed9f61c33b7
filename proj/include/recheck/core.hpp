// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <nlohmann/json.hpp>

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace recheck
{

using json = nlohmann::json;

/// Raised when a value violates the invariants of its domain type.
class ValidationError: public std::invalid_argument
{
  public:
    using std::invalid_argument::invalid_argument;
};

struct TokenLogprob
{
    std::string token;
    double logprob = 0.0; // nats

    friend bool operator==(const TokenLogprob&, const TokenLogprob&) = default;
};

/// One generated token with its truncated top-k distribution.
struct TokenStep
{
    std::string token_text;
    std::vector<TokenLogprob> top_logprobs;
    std::size_t chosen_index = 0;

    friend bool operator==(const TokenStep&, const TokenStep&) = default;
};

void validate(const TokenStep& step);

/// Pixel rectangle, half-open: [x0, x1) x [y0, y1).
struct BBox
{
    int x0 = 0;
    int y0 = 0;
    int x1 = 0;
    int y1 = 0;

    [[nodiscard]] int width() const noexcept { return x1 - x0; }
    [[nodiscard]] int height() const noexcept { return y1 - y0; }
    [[nodiscard]] long long area() const noexcept { return static_cast<long long>(width()) * height(); }
    [[nodiscard]] bool empty() const noexcept { return x1 <= x0 || y1 <= y0; }
    [[nodiscard]] bool within(int image_w, int image_h) const noexcept
    {
        return x0 >= 0 && y0 >= 0 && x1 <= image_w && y1 <= image_h && !empty();
    }

    friend bool operator==(const BBox&, const BBox&) = default;
};

[[nodiscard]] BBox intersect(const BBox& a, const BBox& b) noexcept;

struct Cell
{
    int row = 0;
    int col = 0;

    friend auto operator<=>(const Cell&, const Cell&) = default;
};

/// Pixel rectangle covered by grid cell (row, col) under uniform patch tiling.
[[nodiscard]] BBox cell_to_pixels(Cell cell, int grid_h, int grid_w, int image_w, int image_h);

/// Cross-modal attention, one row per generated text token, one column per visual token.
///
/// Rows are renormalized to sum to 1 on construction; a row that is already within
/// 1e-12 of unit mass is left untouched, so renormalization is idempotent bit for bit.
/// An all-zero row becomes uniform. Negative or non-finite weights are rejected.
class AttentionMap
{
  public:
    AttentionMap(std::size_t num_text_tokens, int grid_h, int grid_w, std::vector<double> weights);

    [[nodiscard]] std::size_t rows() const noexcept { return _rows; }
    [[nodiscard]] int grid_h() const noexcept { return _grid_h; }
    [[nodiscard]] int grid_w() const noexcept { return _grid_w; }
    [[nodiscard]] std::size_t num_visual_tokens() const noexcept
    {
        return static_cast<std::size_t>(_grid_h) * static_cast<std::size_t>(_grid_w);
    }
    [[nodiscard]] std::span<const double> row(std::size_t i) const;
    [[nodiscard]] double at(std::size_t text_token, std::size_t visual_token) const
    {
        return _weights[text_token * num_visual_tokens() + visual_token];
    }
    [[nodiscard]] const std::vector<double>& data() const noexcept { return _weights; }

    friend bool operator==(const AttentionMap&, const AttentionMap&) = default;

  private:
    std::size_t _rows = 0;
    int _grid_h = 0;
    int _grid_w = 0;
    std::vector<double> _weights;
};

/// Normalizes every row of a row-major matrix in place (see AttentionMap).
void normalize_rows(std::vector<double>& weights, std::size_t cols);

struct GenerationOutput
{
    std::string response_text;
    std::vector<TokenStep> steps;
    std::optional<AttentionMap> attention;
    int image_w = 0;
    int image_h = 0;

    friend bool operator==(const GenerationOutput&, const GenerationOutput&) = default;
};

void validate(const GenerationOutput& out);

enum class ClaimKind
{
    existence,
    attribute,
    count,
    relation,
    other,
};

[[nodiscard]] std::string_view to_string(ClaimKind kind) noexcept;
[[nodiscard]] ClaimKind claim_kind_from_string(std::string_view s);

/// A checkable assertion inside a response. Spans are inclusive token indices;
/// char_begin/char_end delimit the claim's sentence in the response text.
struct Claim
{
    std::size_t span_start = 0;
    std::size_t span_end = 0;
    std::string text;
    ClaimKind kind = ClaimKind::other;
    std::string object;
    std::string attribute; // attribute category, e.g. "color"
    std::string value;     // asserted attribute value, count, or relation target
    bool negated = false;  // "there is no fork", or a bare "No"
    std::size_t char_begin = 0;
    std::size_t char_end = 0;

    friend bool operator==(const Claim&, const Claim&) = default;
};

void validate(const Claim& claim, std::size_t num_text_tokens);

struct UncertaintyBreakdown
{
    double u_token = 0.0;
    double u_attn = 0.0;
    double u_sem = 0.0;
    double u_claim = 0.0;
    double u = 0.0;

    [[nodiscard]] std::array<double, 4> components() const noexcept { return {u_token, u_attn, u_sem, u_claim}; }

    friend bool operator==(const UncertaintyBreakdown&, const UncertaintyBreakdown&) = default;
};

class SaliencyMap
{
  public:
    SaliencyMap(int grid_h, int grid_w, std::vector<double> values);

    [[nodiscard]] int grid_h() const noexcept { return _grid_h; }
    [[nodiscard]] int grid_w() const noexcept { return _grid_w; }
    [[nodiscard]] double at(int row, int col) const { return _values[static_cast<std::size_t>(row * _grid_w + col)]; }
    [[nodiscard]] const std::vector<double>& values() const noexcept { return _values; }
    [[nodiscard]] double max() const noexcept;

    friend bool operator==(const SaliencyMap&, const SaliencyMap&) = default;

  private:
    int _grid_h = 0;
    int _grid_w = 0;
    std::vector<double> _values;
};

struct Region
{
    std::vector<Cell> cells; // sorted
    BBox bbox_px;
    double mean_saliency = 0.0;

    friend bool operator==(const Region&, const Region&) = default;
};

struct CropSpec
{
    double center_x = 0.0;
    double center_y = 0.0;
    double scale = 1.0;
    BBox bbox_px;

    friend bool operator==(const CropSpec&, const CropSpec&) = default;
};

[[nodiscard]] CropSpec full_view(int image_w, int image_h);

enum class Verdict
{
    supports,
    contradicts,
    ambiguous,
};

[[nodiscard]] std::string_view to_string(Verdict v) noexcept;
[[nodiscard]] Verdict verdict_from_string(std::string_view s);

struct VerificationItem
{
    Claim claim;
    CropSpec crop;
    std::string question;
    std::string answer;
    Verdict verdict = Verdict::ambiguous;
    double confidence = 0.0;

    friend bool operator==(const VerificationItem&, const VerificationItem&) = default;
};

void validate(const VerificationItem& item);

enum class StopReason
{
    converged_below_threshold,
    converged_delta,
    max_iterations,
    backend_error,
};

[[nodiscard]] std::string_view to_string(StopReason r) noexcept;
[[nodiscard]] StopReason stop_reason_from_string(std::string_view s);

struct TraceIteration
{
    std::string response_text;
    UncertaintyBreakdown uncertainty;
    std::vector<VerificationItem> verifications;

    friend bool operator==(const TraceIteration&, const TraceIteration&) = default;
};

struct RefinementTrace
{
    std::string question;
    std::vector<TraceIteration> iterations;
    StopReason stop_reason = StopReason::max_iterations;
    std::string final_response;
    std::size_t backend_calls = 0;
    std::string error; // set only when stop_reason == backend_error

    friend bool operator==(const RefinementTrace&, const RefinementTrace&) = default;
};

struct Config
{
    int max_iterations = 3;      // T
    int crops_per_iteration = 2; // K
    double tau_u = 0.3;
    double tau_attn_rel = 0.2;
    double epsilon = 0.02;
    std::array<double, 4> alpha {0.30, 0.25, 0.25, 0.20};
    std::vector<double> scales {1.5, 2.0};
    int k_samples = 3;
    double temperature = 0.7;
    int top_k = 5;
    int max_tokens = 128;
    double vocab_bound = 32.0;
    double confidence_floor = 0.5;
    bool eight_connected = false;
    std::string hedge_lexicon_path; // empty: built-in lexicon

    friend bool operator==(const Config&, const Config&) = default;
};

/// Checks every Config invariant; returns the config unchanged when valid.
[[nodiscard]] Config validate_config(Config cfg);

// JSON (snake_case, matrices as flat row-major arrays with explicit dims).
void to_json(json& j, const TokenLogprob& v);
void from_json(const json& j, TokenLogprob& v);
void to_json(json& j, const TokenStep& v);
void from_json(const json& j, TokenStep& v);
void to_json(json& j, const BBox& v);
void from_json(const json& j, BBox& v);
void to_json(json& j, const Cell& v);
void from_json(const json& j, Cell& v);
void to_json(json& j, const GenerationOutput& v);
void from_json(const json& j, GenerationOutput& v);
void to_json(json& j, const Claim& v);
void from_json(const json& j, Claim& v);
void to_json(json& j, const UncertaintyBreakdown& v);
void from_json(const json& j, UncertaintyBreakdown& v);
void to_json(json& j, const Region& v);
void from_json(const json& j, Region& v);
void to_json(json& j, const CropSpec& v);
void from_json(const json& j, CropSpec& v);
void to_json(json& j, const VerificationItem& v);
void from_json(const json& j, VerificationItem& v);
void to_json(json& j, const TraceIteration& v);
void from_json(const json& j, TraceIteration& v);
void to_json(json& j, const RefinementTrace& v);
void from_json(const json& j, RefinementTrace& v);
void to_json(json& j, const Config& v);
void from_json(const json& j, Config& v);

[[nodiscard]] RefinementTrace read_trace_file(const std::string& path);
void write_trace_file(const std::string& path, const RefinementTrace& trace);

} // namespace recheck

template <>
struct nlohmann::adl_serializer<recheck::AttentionMap>
{
    static recheck::AttentionMap from_json(const json& j);
    static void to_json(json& j, const recheck::AttentionMap& v);
};

template <>
struct nlohmann::adl_serializer<recheck::SaliencyMap>
{
    static recheck::SaliencyMap from_json(const json& j);
    static void to_json(json& j, const recheck::SaliencyMap& v);
};
