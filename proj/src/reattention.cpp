// SPDX-License-Identifier: Apache-2.0
#include <recheck/reattention.hpp>
#include <recheck/text.hpp>

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace recheck
{

std::vector<QuestionTemplate> default_templates()
{
    return {
        {ClaimKind::existence, "Is there a {object} visible in this region?"},
        {ClaimKind::attribute, "What is the {attribute} of {object}?"},
        {ClaimKind::count, "How many {object} are visible in this region?"},
        {ClaimKind::relation, "Where is the {object} in this region?"},
    };
}

std::vector<QuestionTemplate> parse_templates(std::string_view content)
{
    std::vector<QuestionTemplate> out;
    std::istringstream in {std::string(content)};
    std::string line;
    int lineno = 0;
    while (std::getline(in, line))
    {
        ++lineno;
        auto trimmed = text::trim(line);
        if (trimmed.empty() || trimmed.front() == '#')
            continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw ValidationError(fmt::format("templates line {}: expected kind<TAB>pattern", lineno));
        QuestionTemplate t {claim_kind_from_string(text::trim(std::string_view(line).substr(0, tab))),
                            std::string(text::trim(std::string_view(line).substr(tab + 1)))};
        if (t.kind != ClaimKind::other && t.pattern.find("{object}") == std::string::npos &&
            t.pattern.find("{attribute}") == std::string::npos)
            throw ValidationError(fmt::format("templates line {}: pattern needs a placeholder", lineno));
        out.push_back(std::move(t));
    }
    return out;
}

std::vector<QuestionTemplate> load_templates(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error(fmt::format("cannot open templates file '{}'", path));
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_templates(buf.str());
}

SaliencyMap build_saliency(const AttentionMap& attn, const Claim& claim)
{
    validate(claim, attn.rows());
    const std::size_t m = attn.num_visual_tokens();
    std::vector<double> values(m, 0.0);
    const auto n = static_cast<double>(claim.span_end - claim.span_start + 1);
    for (std::size_t i = claim.span_start; i <= claim.span_end; ++i)
    {
        auto row = attn.row(i);
        for (std::size_t j = 0; j < m; ++j)
            values[j] += row[j];
    }
    for (auto& v: values)
        v /= n;
    return SaliencyMap(attn.grid_h(), attn.grid_w(), std::move(values));
}

std::vector<Region> find_underexplored(const SaliencyMap& s, double tau_rel, int image_w, int image_h,
                                       bool eight_connected)
{
    if (image_w <= 0 || image_h <= 0)
        throw ValidationError("image dims must be positive");
    const int gh = s.grid_h();
    const int gw = s.grid_w();
    const double threshold = tau_rel * s.max();
    std::vector<char> below(static_cast<std::size_t>(gh * gw), 0);
    for (int r = 0; r < gh; ++r)
        for (int c = 0; c < gw; ++c)
            below[static_cast<std::size_t>(r * gw + c)] = s.at(r, c) < threshold ? 1 : 0;

    std::vector<Region> regions;
    std::vector<char> seen(below.size(), 0);
    std::vector<Cell> stack;
    for (int r = 0; r < gh; ++r)
        for (int c = 0; c < gw; ++c)
        {
            const auto idx = static_cast<std::size_t>(r * gw + c);
            if (!below[idx] || seen[idx])
                continue;
            Region region;
            seen[idx] = 1;
            stack.push_back({r, c});
            while (!stack.empty())
            {
                const Cell cur = stack.back();
                stack.pop_back();
                region.cells.push_back(cur);
                for (int dr = -1; dr <= 1; ++dr)
                    for (int dc = -1; dc <= 1; ++dc)
                    {
                        if ((dr == 0 && dc == 0) || (!eight_connected && dr != 0 && dc != 0))
                            continue;
                        const int nr = cur.row + dr;
                        const int nc = cur.col + dc;
                        if (nr < 0 || nc < 0 || nr >= gh || nc >= gw)
                            continue;
                        const auto nidx = static_cast<std::size_t>(nr * gw + nc);
                        if (below[nidx] && !seen[nidx])
                        {
                            seen[nidx] = 1;
                            stack.push_back({nr, nc});
                        }
                    }
            }
            std::sort(region.cells.begin(), region.cells.end());
            double sum = 0.0;
            BBox hull {image_w, image_h, 0, 0};
            for (const auto& cell: region.cells)
            {
                sum += s.at(cell.row, cell.col);
                const auto px = cell_to_pixels(cell, gh, gw, image_w, image_h);
                hull = {std::min(hull.x0, px.x0), std::min(hull.y0, px.y0), std::max(hull.x1, px.x1),
                        std::max(hull.y1, px.y1)};
            }
            region.bbox_px = hull;
            region.mean_saliency = sum / static_cast<double>(region.cells.size());
            regions.push_back(std::move(region));
        }
    // Components are discovered in row-major order of their first cell, so a stable
    // sort keeps ties deterministic.
    std::stable_sort(regions.begin(), regions.end(),
                     [](const Region& a, const Region& b) { return a.mean_saliency < b.mean_saliency; });
    return regions;
}

namespace
{

int window_side(int side, double scale)
{
    const double exact = static_cast<double>(side) / scale;
    const double nearest = std::round(exact);
    const double len = std::abs(exact - nearest) < 1e-9 ? nearest : std::ceil(exact);
    return std::clamp(static_cast<int>(len), 1, side);
}

int place(double center, int len, int side)
{
    const auto start = static_cast<int>(std::llround(center - len / 2.0));
    return std::clamp(start, 0, side - len);
}

} // namespace

CropSpec crop_at(double center_x, double center_y, double scale, int image_w, int image_h)
{
    if (!(scale >= 1.0) || !std::isfinite(scale))
        throw ValidationError(fmt::format("crop scale {} must be >= 1", scale));
    if (image_w <= 0 || image_h <= 0)
        throw ValidationError("image dims must be positive");
    const int w = window_side(image_w, scale);
    const int h = window_side(image_h, scale);
    const int x0 = place(center_x, w, image_w);
    const int y0 = place(center_y, h, image_h);
    return {center_x, center_y, scale, BBox {x0, y0, x0 + w, y0 + h}};
}

std::vector<CropSpec> plan_crops(const Region& region, int image_w, int image_h, std::span<const double> scales,
                                 int K)
{
    if (region.cells.empty())
        throw ValidationError("region has no cells");
    const double cx = (region.bbox_px.x0 + region.bbox_px.x1) / 2.0;
    const double cy = (region.bbox_px.y0 + region.bbox_px.y1) / 2.0;
    std::vector<CropSpec> out;
    const auto n = std::min<std::size_t>(scales.size(), static_cast<std::size_t>(std::max(K, 0)));
    for (std::size_t i = 0; i < n; ++i)
        out.push_back(crop_at(cx, cy, scales[i], image_w, image_h));
    return out;
}

std::vector<PlannedCrop> allocate_crops(const std::vector<std::pair<std::size_t, std::vector<Region>>>& regions_by_claim,
                                        int image_w, int image_h, std::span<const double> scales, int K)
{
    if (scales.empty())
        throw ValidationError("scales must not be empty");
    std::vector<std::pair<std::size_t, const Region*>> pool;
    for (const auto& [claim, regions]: regions_by_claim)
        for (const auto& r: regions)
            pool.emplace_back(claim, &r);
    std::stable_sort(pool.begin(), pool.end(),
                     [](const auto& a, const auto& b) { return a.second->mean_saliency < b.second->mean_saliency; });

    std::vector<PlannedCrop> out;
    if (pool.empty())
        return out;
    for (int i = 0; i < K; ++i)
    {
        const auto& [claim, region] = pool[static_cast<std::size_t>(i) % pool.size()];
        const double scale = scales[static_cast<std::size_t>(i) % scales.size()];
        const double cx = (region->bbox_px.x0 + region->bbox_px.x1) / 2.0;
        const double cy = (region->bbox_px.y0 + region->bbox_px.y1) / 2.0;
        out.push_back({claim, *region, crop_at(cx, cy, scale, image_w, image_h)});
    }
    return out;
}

namespace
{

bool replace_slot(std::string& s, std::string_view slot, const std::string& value)
{
    bool ok = true;
    for (auto pos = s.find(slot); pos != std::string::npos; pos = s.find(slot, pos + value.size()))
    {
        if (value.empty())
            ok = false;
        s.replace(pos, slot.size(), value);
    }
    return ok;
}

} // namespace

std::string build_verification_question(const Claim& claim, std::span<const QuestionTemplate> templates)
{
    for (const auto& t: templates)
    {
        if (t.kind != claim.kind)
            continue;
        std::string q = t.pattern;
        const bool object_ok = replace_slot(q, "{object}", claim.object);
        const bool attribute_ok = replace_slot(q, "{attribute}", claim.attribute);
        if (object_ok && attribute_ok)
            return q;
    }
    auto subject = text::trim(claim.text);
    while (!subject.empty() && (subject.back() == '.' || subject.back() == '!' || subject.back() == '?'))
        subject.remove_suffix(1);
    return fmt::format("Does this region show {}? Answer yes or no.", subject);
}

} // namespace recheck
