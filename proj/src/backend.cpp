// SPDX-License-Identifier: Apache-2.0
#include <recheck/backend.hpp>
#include <recheck/text.hpp>

#include <fmt/format.h>
#include <openssl/evp.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

namespace recheck
{

Image read_image_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error(fmt::format("cannot open image '{}'", path));
    std::stringstream buf;
    buf << in.rdbuf();
    auto ext = text::lowercase(std::filesystem::path(path).extension().string());
    std::string format;
    if (ext == ".png")
        format = "png";
    else if (ext == ".jpg" || ext == ".jpeg")
        format = "jpeg";
    else if (ext == ".json")
        format = "scene";
    else
        throw std::runtime_error(fmt::format("unsupported image extension '{}' (png, jpeg, scene .json)", ext));
    return {buf.str(), format};
}

std::vector<double> BackendEmbedder::embed(std::string_view text) const
{
    auto v = _backend.embed(text);
    if (v.size() != _dimension)
        throw BackendError(fmt::format("embedding has dimension {}, expected {}", v.size(), _dimension));
    return v;
}

std::string base64_encode(std::string_view bytes)
{
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                  reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<int>(bytes.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

std::string base64_decode(std::string_view b64)
{
    if (b64.size() % 4 != 0)
        throw ValidationError("base64 input length is not a multiple of 4");
    std::string out(3 * b64.size() / 4, '\0');
    const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                  reinterpret_cast<const unsigned char*>(b64.data()), static_cast<int>(b64.size()));
    if (n < 0)
        throw ValidationError("invalid base64 input");
    std::size_t padding = 0;
    if (!b64.empty() && b64.back() == '=')
        padding = (b64.size() >= 2 && b64[b64.size() - 2] == '=') ? 2 : 1;
    out.resize(static_cast<std::size_t>(n) - padding);
    return out;
}

namespace wire
{

ordered_json to_json(const GenerateRequest& m)
{
    return ordered_json {{"image_b64", m.image_b64},     {"image_format", m.image_format},
                         {"prompt", m.prompt},           {"temperature", m.temperature},
                         {"max_tokens", m.max_tokens},   {"top_k", m.top_k},
                         {"want_attention", m.want_attention}};
}

ordered_json to_json(const GenerateResponse& m)
{
    auto steps = ordered_json::array();
    for (const auto& s: m.steps)
    {
        auto top = ordered_json::array();
        for (const auto& c: s.top)
            top.push_back(ordered_json {{"token", c.token}, {"logprob", c.logprob}});
        steps.push_back(ordered_json {{"token", s.token}, {"top", std::move(top)}, {"chosen", s.chosen}});
    }
    ordered_json attention = nullptr;
    if (m.attention)
        attention = ordered_json {{"data", m.attention->data},
                                  {"num_text_tokens", m.attention->num_text_tokens},
                                  {"grid_h", m.attention->grid_h},
                                  {"grid_w", m.attention->grid_w}};
    return ordered_json {{"text", m.text},
                         {"steps", std::move(steps)},
                         {"attention", std::move(attention)},
                         {"image_w", m.image_w},
                         {"image_h", m.image_h}};
}

ordered_json to_json(const EmbedRequest& m) { return ordered_json {{"text", m.text}}; }

ordered_json to_json(const EmbedResponse& m) { return ordered_json {{"vector", m.vector}, {"dim", m.dim}}; }

namespace
{

template <typename T>
T field(const ordered_json& j, const char* key)
{
    auto it = j.find(key);
    if (it == j.end())
        throw ValidationError(fmt::format("wire message is missing field '{}'", key));
    try
    {
        return it->get<T>();
    }
    catch (const nlohmann::json::exception& e)
    {
        throw ValidationError(fmt::format("wire field '{}': {}", key, e.what()));
    }
}

} // namespace

GenerateRequest parse_generate_request(const ordered_json& j)
{
    return {field<std::string>(j, "image_b64"), field<std::string>(j, "image_format"),
            field<std::string>(j, "prompt"),    field<double>(j, "temperature"),
            field<int>(j, "max_tokens"),        field<int>(j, "top_k"),
            field<bool>(j, "want_attention")};
}

GenerateResponse parse_generate_response(const ordered_json& j)
{
    GenerateResponse m;
    m.text = field<std::string>(j, "text");
    for (const auto& s: field<ordered_json>(j, "steps"))
    {
        Step step {field<std::string>(s, "token"), {}, field<std::size_t>(s, "chosen")};
        for (const auto& c: field<ordered_json>(s, "top"))
            step.top.push_back({field<std::string>(c, "token"), field<double>(c, "logprob")});
        m.steps.push_back(std::move(step));
    }
    if (const auto& a = field<ordered_json>(j, "attention"); !a.is_null())
        m.attention = Attention {field<std::vector<float>>(a, "data"), field<std::size_t>(a, "num_text_tokens"),
                                 field<int>(a, "grid_h"), field<int>(a, "grid_w")};
    m.image_w = field<int>(j, "image_w");
    m.image_h = field<int>(j, "image_h");
    return m;
}

EmbedRequest parse_embed_request(const ordered_json& j) { return {field<std::string>(j, "text")}; }

EmbedResponse parse_embed_response(const ordered_json& j)
{
    return {field<std::vector<double>>(j, "vector"), field<std::size_t>(j, "dim")};
}

GenerationOutput to_generation_output(const GenerateResponse& m)
{
    GenerationOutput out;
    out.response_text = m.text;
    out.image_w = m.image_w;
    out.image_h = m.image_h;
    for (const auto& s: m.steps)
    {
        TokenStep step {s.token, {}, s.chosen};
        for (const auto& c: s.top)
            step.top_logprobs.push_back({c.token, c.logprob});
        out.steps.push_back(std::move(step));
    }
    if (m.attention)
        out.attention = AttentionMap(m.attention->num_text_tokens, m.attention->grid_h, m.attention->grid_w,
                                     std::vector<double>(m.attention->data.begin(), m.attention->data.end()));
    validate(out);
    return out;
}

GenerateResponse from_generation_output(const GenerationOutput& out)
{
    GenerateResponse m;
    m.text = out.response_text;
    m.image_w = out.image_w;
    m.image_h = out.image_h;
    for (const auto& s: out.steps)
    {
        Step step {s.token_text, {}, s.chosen_index};
        for (const auto& c: s.top_logprobs)
            step.top.push_back({c.token, c.logprob});
        m.steps.push_back(std::move(step));
    }
    if (out.attention)
        m.attention = Attention {std::vector<float>(out.attention->data().begin(), out.attention->data().end()),
                                 out.attention->rows(), out.attention->grid_h(), out.attention->grid_w()};
    return m;
}

std::vector<double> ingest_embedding(const EmbedResponse& m)
{
    if (m.vector.size() != m.dim || m.dim == 0)
        throw ValidationError(fmt::format("embedding declares dim {} but carries {} values", m.dim, m.vector.size()));
    const double norm = std::sqrt(std::inner_product(m.vector.begin(), m.vector.end(), m.vector.begin(), 0.0));
    if (!(norm > 0.0) || !std::isfinite(norm))
        throw ValidationError("embedding has zero or non-finite norm");
    auto v = m.vector;
    for (auto& x: v)
        x /= norm;
    return v;
}

} // namespace wire

// --- scripted ---------------------------------------------------------------

ScriptedBackend::ScriptedBackend(std::vector<Entry> entries,
                                 std::vector<std::pair<std::string, std::vector<double>>> embeddings):
    _entries(std::move(entries)), _embeddings(std::move(embeddings))
{
}

ScriptedBackend ScriptedBackend::from_json(const nlohmann::json& doc)
{
    auto output_of = [](const nlohmann::json& j) {
        return wire::to_generation_output(wire::parse_generate_response(wire::ordered_json::parse(j.dump())));
    };
    std::vector<Entry> entries;
    for (const auto& e: doc.at("entries"))
    {
        Entry entry;
        entry.prompt = e.at("prompt").get<std::string>();
        const auto& view = e.contains("view") ? e.at("view") : nlohmann::json("full");
        if (view.is_string() && view.get<std::string>() == "full")
            entry.view_match = Entry::ViewMatch::full;
        else if (view.is_string() && view.get<std::string>() == "any")
            entry.view_match = Entry::ViewMatch::any;
        else
        {
            entry.view_match = Entry::ViewMatch::bbox;
            entry.bbox = view.get<BBox>();
        }
        entry.output = output_of(e.at("output"));
        if (auto it = e.find("samples"); it != e.end())
            for (const auto& s: *it)
                entry.samples.push_back(output_of(s));
        entries.push_back(std::move(entry));
    }
    std::vector<std::pair<std::string, std::vector<double>>> embeddings;
    if (auto it = doc.find("embeddings"); it != doc.end())
        for (const auto& e: *it)
        {
            wire::EmbedResponse m {e.at("vector").get<std::vector<double>>(), e.at("vector").size()};
            embeddings.emplace_back(e.at("text").get<std::string>(), wire::ingest_embedding(m));
        }
    return ScriptedBackend(std::move(entries), std::move(embeddings));
}

ScriptedBackend ScriptedBackend::load(const std::string& path)
{
    auto file = std::filesystem::path(path);
    if (std::filesystem::is_directory(file))
        file /= "fixture.json";
    std::ifstream in(file);
    if (!in)
        throw std::runtime_error(fmt::format("cannot open fixture '{}'", file.string()));
    return from_json(nlohmann::json::parse(in));
}

GenerationOutput ScriptedBackend::generate(const GenerateRequest& req)
{
    for (const auto& e: _entries)
    {
        if (!text::glob_match(e.prompt, req.prompt))
            continue;
        const bool view_ok = e.view_match == Entry::ViewMatch::any ||
                             (e.view_match == Entry::ViewMatch::full && !req.view) ||
                             (e.view_match == Entry::ViewMatch::bbox && req.view && req.view->bbox_px == e.bbox);
        if (!view_ok)
            continue;
        GenerationOutput out = e.output;
        if (req.temperature > 0.0 && req.seed > 0 && !e.samples.empty())
            out = e.samples[(req.seed - 1) % e.samples.size()];
        if (req.want_attention && !out.attention)
            throw BackendError(fmt::format("fixture entry for '{}' has no attention", req.prompt));
        if (!req.want_attention)
            out.attention.reset();
        return out;
    }
    const std::string view = req.view ? fmt::format("[{},{},{},{}]", req.view->bbox_px.x0, req.view->bbox_px.y0,
                                                    req.view->bbox_px.x1, req.view->bbox_px.y1)
                                      : std::string("full");
    throw BackendError(fmt::format("unscripted query: prompt '{}' view {}", req.prompt, view));
}

std::vector<double> ScriptedBackend::embed(std::string_view text)
{
    for (const auto& [key, vec]: _embeddings)
        if (key == text)
            return vec;
    throw BackendError(fmt::format("unscripted query: embed '{}'", text));
}

} // namespace recheck
