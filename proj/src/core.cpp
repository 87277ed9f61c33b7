// SPDX-License-Identifier: Apache-2.0
#include <recheck/core.hpp>

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace recheck
{

void validate(const TokenStep& step)
{
    if (step.top_logprobs.empty())
        throw ValidationError("token step has no top logprobs");
    if (step.chosen_index >= step.top_logprobs.size())
        throw ValidationError(fmt::format("chosen_index {} out of range ({} candidates)",
                                          step.chosen_index, step.top_logprobs.size()));
    double mass = 0.0;
    for (const auto& cand: step.top_logprobs)
    {
        if (std::isnan(cand.logprob) || cand.logprob > 0.0)
            throw ValidationError(fmt::format("logprob {} for token '{}' must be <= 0", cand.logprob, cand.token));
        mass += std::exp(cand.logprob);
    }
    if (mass > 1.0 + 1e-6)
        throw ValidationError(fmt::format("top-k probabilities sum to {} > 1", mass));
}

BBox intersect(const BBox& a, const BBox& b) noexcept
{
    BBox r {std::max(a.x0, b.x0), std::max(a.y0, b.y0), std::min(a.x1, b.x1), std::min(a.y1, b.y1)};
    if (r.empty())
        return {};
    return r;
}

BBox cell_to_pixels(Cell cell, int grid_h, int grid_w, int image_w, int image_h)
{
    auto edge = [](int index, int cells, int pixels) {
        return static_cast<int>((static_cast<long long>(index) * pixels) / cells);
    };
    return {edge(cell.col, grid_w, image_w), edge(cell.row, grid_h, image_h), edge(cell.col + 1, grid_w, image_w),
            edge(cell.row + 1, grid_h, image_h)};
}

void normalize_rows(std::vector<double>& weights, std::size_t cols)
{
    if (cols == 0)
        throw ValidationError("attention matrix has zero columns");
    if (weights.size() % cols != 0)
        throw ValidationError("attention data length is not a multiple of the visual token count");
    for (std::size_t start = 0; start < weights.size(); start += cols)
    {
        auto first = weights.begin() + static_cast<std::ptrdiff_t>(start);
        auto last = first + static_cast<std::ptrdiff_t>(cols);
        double sum = 0.0;
        for (auto it = first; it != last; ++it)
        {
            if (!std::isfinite(*it) || *it < 0.0)
                throw ValidationError(fmt::format("attention weight {} is negative or non-finite", *it));
            sum += *it;
        }
        if (sum == 0.0)
            std::fill(first, last, 1.0 / static_cast<double>(cols));
        else if (std::abs(sum - 1.0) > 1e-12)
            std::for_each(first, last, [sum](double& w) { w /= sum; });
    }
}

AttentionMap::AttentionMap(std::size_t num_text_tokens, int grid_h, int grid_w, std::vector<double> weights):
    _rows(num_text_tokens), _grid_h(grid_h), _grid_w(grid_w), _weights(std::move(weights))
{
    if (grid_h <= 0 || grid_w <= 0)
        throw ValidationError(fmt::format("attention grid {}x{} must be positive", grid_h, grid_w));
    if (_weights.size() != _rows * num_visual_tokens())
        throw ValidationError(fmt::format("attention data has {} values, expected {}x{}", _weights.size(), _rows,
                                          num_visual_tokens()));
    if (_rows > 0)
        normalize_rows(_weights, num_visual_tokens());
}

std::span<const double> AttentionMap::row(std::size_t i) const
{
    if (i >= _rows)
        throw std::out_of_range(fmt::format("attention row {} of {}", i, _rows));
    return std::span<const double>(_weights).subspan(i * num_visual_tokens(), num_visual_tokens());
}

void validate(const GenerationOutput& out)
{
    if (out.image_w <= 0 || out.image_h <= 0)
        throw ValidationError(fmt::format("image dims {}x{} must be positive", out.image_w, out.image_h));
    for (const auto& step: out.steps)
        validate(step);
    if (out.attention && out.attention->rows() != out.steps.size())
        throw ValidationError(fmt::format("attention has {} text rows but response has {} steps",
                                          out.attention->rows(), out.steps.size()));
}

namespace
{

template <typename Enum, std::size_t N>
Enum parse_enum(std::string_view s, const std::array<std::pair<Enum, std::string_view>, N>& table,
                std::string_view what)
{
    for (const auto& [value, name]: table)
        if (name == s)
            return value;
    throw ValidationError(fmt::format("unknown {} '{}'", what, s));
}

template <typename Enum, std::size_t N>
std::string_view name_of(Enum e, const std::array<std::pair<Enum, std::string_view>, N>& table) noexcept
{
    for (const auto& [value, name]: table)
        if (value == e)
            return name;
    return "?";
}

constexpr std::array<std::pair<ClaimKind, std::string_view>, 5> kClaimKinds {{
    {ClaimKind::existence, "existence"},
    {ClaimKind::attribute, "attribute"},
    {ClaimKind::count, "count"},
    {ClaimKind::relation, "relation"},
    {ClaimKind::other, "other"},
}};

constexpr std::array<std::pair<Verdict, std::string_view>, 3> kVerdicts {{
    {Verdict::supports, "supports"},
    {Verdict::contradicts, "contradicts"},
    {Verdict::ambiguous, "ambiguous"},
}};

constexpr std::array<std::pair<StopReason, std::string_view>, 4> kStopReasons {{
    {StopReason::converged_below_threshold, "converged_below_threshold"},
    {StopReason::converged_delta, "converged_delta"},
    {StopReason::max_iterations, "max_iterations"},
    {StopReason::backend_error, "backend_error"},
}};

} // namespace

std::string_view to_string(ClaimKind kind) noexcept { return name_of(kind, kClaimKinds); }
ClaimKind claim_kind_from_string(std::string_view s) { return parse_enum(s, kClaimKinds, "claim kind"); }
std::string_view to_string(Verdict v) noexcept { return name_of(v, kVerdicts); }
Verdict verdict_from_string(std::string_view s) { return parse_enum(s, kVerdicts, "verdict"); }
std::string_view to_string(StopReason r) noexcept { return name_of(r, kStopReasons); }
StopReason stop_reason_from_string(std::string_view s) { return parse_enum(s, kStopReasons, "stop reason"); }

void validate(const Claim& claim, std::size_t num_text_tokens)
{
    if (claim.span_start > claim.span_end || claim.span_end >= num_text_tokens)
        throw ValidationError(fmt::format("claim span [{}, {}] invalid for {} tokens", claim.span_start,
                                          claim.span_end, num_text_tokens));
}

SaliencyMap::SaliencyMap(int grid_h, int grid_w, std::vector<double> values):
    _grid_h(grid_h), _grid_w(grid_w), _values(std::move(values))
{
    if (grid_h <= 0 || grid_w <= 0)
        throw ValidationError("saliency grid dims must be positive");
    if (_values.size() != static_cast<std::size_t>(grid_h) * static_cast<std::size_t>(grid_w))
        throw ValidationError("saliency values do not match grid dims");
    for (double v: _values)
        if (!std::isfinite(v) || v < 0.0)
            throw ValidationError(fmt::format("saliency value {} must be finite and non-negative", v));
}

double SaliencyMap::max() const noexcept
{
    return _values.empty() ? 0.0 : *std::max_element(_values.begin(), _values.end());
}

CropSpec full_view(int image_w, int image_h)
{
    return {image_w / 2.0, image_h / 2.0, 1.0, BBox {0, 0, image_w, image_h}};
}

void validate(const VerificationItem& item)
{
    if (item.question.empty())
        throw ValidationError("verification question is empty");
    if (!(item.confidence >= 0.0 && item.confidence <= 1.0))
        throw ValidationError(fmt::format("verification confidence {} outside [0,1]", item.confidence));
}

Config validate_config(Config cfg)
{
    for (double a: cfg.alpha)
        if (!(a >= 0.0))
            throw ValidationError("alpha weights must be non-negative");
    const double sum = std::accumulate(cfg.alpha.begin(), cfg.alpha.end(), 0.0);
    if (std::abs(sum - 1.0) > 1e-9)
        throw ValidationError(fmt::format("weights must sum to 1 (got {})", sum));
    if (cfg.max_iterations < 1)
        throw ValidationError("max_iterations (T) must be at least 1");
    if (cfg.crops_per_iteration < 1)
        throw ValidationError("crops_per_iteration (K) must be at least 1");
    if (cfg.scales.empty())
        throw ValidationError("scales must not be empty");
    for (double s: cfg.scales)
        if (!(s >= 1.0) || !std::isfinite(s))
            throw ValidationError(fmt::format("scale {} must be >= 1", s));
    if (!(cfg.tau_u >= 0.0 && cfg.tau_u <= 1.0))
        throw ValidationError("tau_u must lie in [0,1]");
    if (!(cfg.tau_attn_rel >= 0.0 && cfg.tau_attn_rel <= 1.0))
        throw ValidationError("tau_attn_rel must lie in [0,1]");
    if (!(cfg.epsilon >= 0.0))
        throw ValidationError("epsilon must be non-negative");
    if (cfg.k_samples < 0)
        throw ValidationError("k_samples must be non-negative");
    if (cfg.k_samples == 0 && cfg.alpha[2] > 0.0)
        throw ValidationError("k_samples = 0 requires a zero semantic weight");
    if (!(cfg.temperature >= 0.0))
        throw ValidationError("temperature must be non-negative");
    if (cfg.top_k < 1)
        throw ValidationError("top_k must be at least 1");
    if (cfg.max_tokens < 1)
        throw ValidationError("max_tokens must be at least 1");
    if (!(cfg.vocab_bound >= cfg.top_k + 1))
        throw ValidationError("vocab_bound must be at least top_k + 1");
    if (!(cfg.confidence_floor >= 0.0 && cfg.confidence_floor <= 1.0))
        throw ValidationError("confidence_floor must lie in [0,1]");
    return cfg;
}

// --- JSON -------------------------------------------------------------------

void to_json(json& j, const TokenLogprob& v) { j = json {{"token", v.token}, {"logprob", v.logprob}}; }

void from_json(const json& j, TokenLogprob& v)
{
    j.at("token").get_to(v.token);
    j.at("logprob").get_to(v.logprob);
}

void to_json(json& j, const TokenStep& v)
{
    j = json {{"token_text", v.token_text}, {"top_logprobs", v.top_logprobs}, {"chosen_index", v.chosen_index}};
}

void from_json(const json& j, TokenStep& v)
{
    j.at("token_text").get_to(v.token_text);
    j.at("top_logprobs").get_to(v.top_logprobs);
    j.at("chosen_index").get_to(v.chosen_index);
    validate(v);
}

void to_json(json& j, const BBox& v) { j = json::array({v.x0, v.y0, v.x1, v.y1}); }

void from_json(const json& j, BBox& v)
{
    if (!j.is_array() || j.size() != 4)
        throw ValidationError("bbox must be an array [x0, y0, x1, y1]");
    v = {j[0].get<int>(), j[1].get<int>(), j[2].get<int>(), j[3].get<int>()};
}

void to_json(json& j, const Cell& v) { j = json::array({v.row, v.col}); }

void from_json(const json& j, Cell& v)
{
    if (!j.is_array() || j.size() != 2)
        throw ValidationError("cell must be an array [row, col]");
    v = {j[0].get<int>(), j[1].get<int>()};
}

void to_json(json& j, const GenerationOutput& v)
{
    j = json {{"response_text", v.response_text},
              {"steps", v.steps},
              {"attention", v.attention ? json(*v.attention) : json(nullptr)},
              {"image_w", v.image_w},
              {"image_h", v.image_h}};
}

void from_json(const json& j, GenerationOutput& v)
{
    j.at("response_text").get_to(v.response_text);
    j.at("steps").get_to(v.steps);
    const auto& attn = j.at("attention");
    v.attention = attn.is_null() ? std::nullopt : std::optional<AttentionMap>(attn.get<AttentionMap>());
    j.at("image_w").get_to(v.image_w);
    j.at("image_h").get_to(v.image_h);
    validate(v);
}

void to_json(json& j, const Claim& v)
{
    j = json {{"span_start", v.span_start}, {"span_end", v.span_end}, {"text", v.text},
              {"kind", to_string(v.kind)},  {"object", v.object},     {"attribute", v.attribute},
              {"value", v.value},           {"negated", v.negated},   {"char_begin", v.char_begin},
              {"char_end", v.char_end}};
}

void from_json(const json& j, Claim& v)
{
    j.at("span_start").get_to(v.span_start);
    j.at("span_end").get_to(v.span_end);
    j.at("text").get_to(v.text);
    v.kind = claim_kind_from_string(j.at("kind").get<std::string>());
    v.object = j.value("object", std::string {});
    v.attribute = j.value("attribute", std::string {});
    v.value = j.value("value", std::string {});
    v.negated = j.value("negated", false);
    v.char_begin = j.value("char_begin", std::size_t {0});
    v.char_end = j.value("char_end", std::size_t {0});
    if (v.span_start > v.span_end)
        throw ValidationError("claim span_start > span_end");
}

void to_json(json& j, const UncertaintyBreakdown& v)
{
    j = json {{"u_token", v.u_token}, {"u_attn", v.u_attn}, {"u_sem", v.u_sem}, {"u_claim", v.u_claim}, {"u", v.u}};
}

void from_json(const json& j, UncertaintyBreakdown& v)
{
    j.at("u_token").get_to(v.u_token);
    j.at("u_attn").get_to(v.u_attn);
    j.at("u_sem").get_to(v.u_sem);
    j.at("u_claim").get_to(v.u_claim);
    j.at("u").get_to(v.u);
}

void to_json(json& j, const Region& v)
{
    j = json {{"cells", v.cells}, {"bbox_px", v.bbox_px}, {"mean_saliency", v.mean_saliency}};
}

void from_json(const json& j, Region& v)
{
    j.at("cells").get_to(v.cells);
    j.at("bbox_px").get_to(v.bbox_px);
    v.mean_saliency = j.value("mean_saliency", 0.0);
    if (v.cells.empty())
        throw ValidationError("region has no cells");
}

void to_json(json& j, const CropSpec& v)
{
    j = json {{"center_px", json::array({v.center_x, v.center_y})}, {"scale", v.scale}, {"bbox_px", v.bbox_px}};
}

void from_json(const json& j, CropSpec& v)
{
    const auto& c = j.at("center_px");
    v.center_x = c.at(0).get<double>();
    v.center_y = c.at(1).get<double>();
    j.at("scale").get_to(v.scale);
    j.at("bbox_px").get_to(v.bbox_px);
    if (!(v.scale >= 1.0))
        throw ValidationError("crop scale must be >= 1");
}

void to_json(json& j, const VerificationItem& v)
{
    j = json {{"claim", v.claim},   {"crop", v.crop},
              {"question", v.question}, {"answer", v.answer},
              {"verdict", to_string(v.verdict)}, {"confidence", v.confidence}};
}

void from_json(const json& j, VerificationItem& v)
{
    j.at("claim").get_to(v.claim);
    j.at("crop").get_to(v.crop);
    j.at("question").get_to(v.question);
    j.at("answer").get_to(v.answer);
    v.verdict = verdict_from_string(j.at("verdict").get<std::string>());
    j.at("confidence").get_to(v.confidence);
    validate(v);
}

void to_json(json& j, const TraceIteration& v)
{
    j = json {{"response_text", v.response_text}, {"uncertainty", v.uncertainty}, {"verifications", v.verifications}};
}

void from_json(const json& j, TraceIteration& v)
{
    j.at("response_text").get_to(v.response_text);
    j.at("uncertainty").get_to(v.uncertainty);
    j.at("verifications").get_to(v.verifications);
}

void to_json(json& j, const RefinementTrace& v)
{
    j = json {{"question", v.question},
              {"iterations", v.iterations},
              {"stop_reason", to_string(v.stop_reason)},
              {"final_response", v.final_response},
              {"backend_calls", v.backend_calls},
              {"error", v.error}};
}

void from_json(const json& j, RefinementTrace& v)
{
    v.question = j.value("question", std::string {});
    j.at("iterations").get_to(v.iterations);
    v.stop_reason = stop_reason_from_string(j.at("stop_reason").get<std::string>());
    j.at("final_response").get_to(v.final_response);
    v.backend_calls = j.value("backend_calls", std::size_t {0});
    v.error = j.value("error", std::string {});
    if (v.iterations.empty())
        throw ValidationError("trace has no iterations");
}

void to_json(json& j, const Config& v)
{
    j = json {{"max_iterations", v.max_iterations},
              {"crops_per_iteration", v.crops_per_iteration},
              {"tau_u", v.tau_u},
              {"tau_attn_rel", v.tau_attn_rel},
              {"epsilon", v.epsilon},
              {"alpha", v.alpha},
              {"scales", v.scales},
              {"k_samples", v.k_samples},
              {"temperature", v.temperature},
              {"top_k", v.top_k},
              {"max_tokens", v.max_tokens},
              {"vocab_bound", v.vocab_bound},
              {"confidence_floor", v.confidence_floor},
              {"eight_connected", v.eight_connected},
              {"hedge_lexicon_path", v.hedge_lexicon_path}};
}

// Missing keys keep their current (default) values so partial config files work.
void from_json(const json& j, Config& v)
{
    auto take = [&j](const char* key, auto& field) {
        if (auto it = j.find(key); it != j.end())
            it->get_to(field);
    };
    take("max_iterations", v.max_iterations);
    take("crops_per_iteration", v.crops_per_iteration);
    take("tau_u", v.tau_u);
    take("tau_attn_rel", v.tau_attn_rel);
    take("epsilon", v.epsilon);
    take("alpha", v.alpha);
    take("scales", v.scales);
    take("k_samples", v.k_samples);
    take("temperature", v.temperature);
    take("top_k", v.top_k);
    take("max_tokens", v.max_tokens);
    take("vocab_bound", v.vocab_bound);
    take("confidence_floor", v.confidence_floor);
    take("eight_connected", v.eight_connected);
    take("hedge_lexicon_path", v.hedge_lexicon_path);
}

RefinementTrace read_trace_file(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error(fmt::format("cannot open trace file '{}'", path));
    return json::parse(in).get<RefinementTrace>();
}

void write_trace_file(const std::string& path, const RefinementTrace& trace)
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw std::runtime_error(fmt::format("cannot write trace file '{}'", path));
    out << json(trace).dump(2) << '\n';
}

} // namespace recheck

recheck::AttentionMap nlohmann::adl_serializer<recheck::AttentionMap>::from_json(const json& j)
{
    return recheck::AttentionMap(j.at("num_text_tokens").get<std::size_t>(), j.at("grid_h").get<int>(),
                                 j.at("grid_w").get<int>(), j.at("data").get<std::vector<double>>());
}

void nlohmann::adl_serializer<recheck::AttentionMap>::to_json(json& j, const recheck::AttentionMap& v)
{
    j = json {{"data", v.data()}, {"num_text_tokens", v.rows()}, {"grid_h", v.grid_h()}, {"grid_w", v.grid_w()}};
}

recheck::SaliencyMap nlohmann::adl_serializer<recheck::SaliencyMap>::from_json(const json& j)
{
    return recheck::SaliencyMap(j.at("grid_h").get<int>(), j.at("grid_w").get<int>(),
                                j.at("values").get<std::vector<double>>());
}

void nlohmann::adl_serializer<recheck::SaliencyMap>::to_json(json& j, const recheck::SaliencyMap& v)
{
    j = json {{"values", v.values()}, {"grid_h", v.grid_h()}, {"grid_w", v.grid_w()}};
}
