// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <recheck/core.hpp>
#include <recheck/uncertainty.hpp>

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace recheck
{

/// Transport failures, server-side errors and unscripted fixture lookups.
class BackendError: public std::runtime_error
{
  public:
    using std::runtime_error::runtime_error;
};

/// Encoded image bytes plus a format tag: "png", "jpeg", or "scene" for the
/// synthetic world (bytes hold a Scene document).
struct Image
{
    std::string bytes;
    std::string format;
};

[[nodiscard]] Image read_image_file(const std::string& path);

struct GenerateRequest
{
    Image image;
    /// Region of the image to show the model; nullopt is the full image. Not part of
    /// the wire message: the remote client crops and magnifies before sending.
    std::optional<CropSpec> view;
    std::string prompt;
    double temperature = 0.0;
    int max_tokens = 128;
    int top_k = 5;
    bool want_attention = false;
    /// Sample index for temperature > 0 requests (0 for greedy). Lets deterministic
    /// backends return distinct samples reproducibly; never sent over the wire.
    std::uint64_t seed = 0;
};

/// Access contract for a vision-language model. Implementations accept concurrent calls.
class Backend
{
  public:
    virtual ~Backend() = default;
    [[nodiscard]] virtual GenerationOutput generate(const GenerateRequest& req) = 0;
    [[nodiscard]] virtual std::vector<double> embed(std::string_view text) = 0;
};

/// Adapts a backend's embed endpoint to the Embedder interface.
class BackendEmbedder final: public Embedder
{
  public:
    explicit BackendEmbedder(Backend& backend, std::size_t dimension): _backend(backend), _dimension(dimension) {}
    [[nodiscard]] std::vector<double> embed(std::string_view text) const override;
    [[nodiscard]] std::size_t dimension() const override { return _dimension; }

  private:
    Backend& _backend;
    std::size_t _dimension;
};

[[nodiscard]] std::string base64_encode(std::string_view bytes);
[[nodiscard]] std::string base64_decode(std::string_view b64);

/// HTTP/JSON wire messages. Field names are fixed by the protocol.
namespace wire
{

using ordered_json = nlohmann::ordered_json;

struct GenerateRequest
{
    std::string image_b64;
    std::string image_format;
    std::string prompt;
    double temperature = 0.0;
    int max_tokens = 128;
    int top_k = 5;
    bool want_attention = false;

    friend bool operator==(const GenerateRequest&, const GenerateRequest&) = default;
};

struct Candidate
{
    std::string token;
    double logprob = 0.0;

    friend bool operator==(const Candidate&, const Candidate&) = default;
};

struct Step
{
    std::string token;
    std::vector<Candidate> top;
    std::size_t chosen = 0;

    friend bool operator==(const Step&, const Step&) = default;
};

struct Attention
{
    std::vector<float> data; // row-major [num_text_tokens x grid_h*grid_w]
    std::size_t num_text_tokens = 0;
    int grid_h = 0;
    int grid_w = 0;

    friend bool operator==(const Attention&, const Attention&) = default;
};

struct GenerateResponse
{
    std::string text;
    std::vector<Step> steps;
    std::optional<Attention> attention;
    int image_w = 0;
    int image_h = 0;

    friend bool operator==(const GenerateResponse&, const GenerateResponse&) = default;
};

struct EmbedRequest
{
    std::string text;

    friend bool operator==(const EmbedRequest&, const EmbedRequest&) = default;
};

struct EmbedResponse
{
    std::vector<double> vector;
    std::size_t dim = 0;

    friend bool operator==(const EmbedResponse&, const EmbedResponse&) = default;
};

[[nodiscard]] ordered_json to_json(const GenerateRequest& m);
[[nodiscard]] ordered_json to_json(const GenerateResponse& m);
[[nodiscard]] ordered_json to_json(const EmbedRequest& m);
[[nodiscard]] ordered_json to_json(const EmbedResponse& m);

[[nodiscard]] GenerateRequest parse_generate_request(const ordered_json& j);
[[nodiscard]] GenerateResponse parse_generate_response(const ordered_json& j);
[[nodiscard]] EmbedRequest parse_embed_request(const ordered_json& j);
[[nodiscard]] EmbedResponse parse_embed_response(const ordered_json& j);

/// Ingestion: validates steps and renormalizes attention rows.
[[nodiscard]] GenerationOutput to_generation_output(const GenerateResponse& m);
[[nodiscard]] GenerateResponse from_generation_output(const GenerationOutput& out);

/// Unit-normalizes and checks the declared dimension.
[[nodiscard]] std::vector<double> ingest_embedding(const EmbedResponse& m);

} // namespace wire

/// Deterministic fixture-driven backend. Entries are matched in file order on
/// (prompt glob, view); a miss is an error, never a silent default.
///
/// Fixture document:
///   {"name": ..., "entries": [{"prompt": glob, "view": "full" | "any" | [x0,y0,x1,y1],
///                              "output": <wire response>, "samples": [<wire response>, ...]}],
///    "embeddings": [{"text": ..., "vector": [...]}]}
/// Requests with temperature > 0 and seed s >= 1 take samples[(s - 1) % n] when the
/// entry has samples, otherwise "output".
class ScriptedBackend final: public Backend
{
  public:
    struct Entry
    {
        std::string prompt;
        enum class ViewMatch
        {
            full,
            any,
            bbox,
        } view_match = ViewMatch::full;
        BBox bbox;
        GenerationOutput output;
        std::vector<GenerationOutput> samples;
    };

    explicit ScriptedBackend(std::vector<Entry> entries,
                             std::vector<std::pair<std::string, std::vector<double>>> embeddings = {});

    [[nodiscard]] static ScriptedBackend from_json(const nlohmann::json& doc);
    /// Accepts a fixture file or a directory holding fixture.json.
    [[nodiscard]] static ScriptedBackend load(const std::string& path);

    [[nodiscard]] GenerationOutput generate(const GenerateRequest& req) override;
    [[nodiscard]] std::vector<double> embed(std::string_view text) override;

    [[nodiscard]] const std::vector<Entry>& entries() const noexcept { return _entries; }

  private:
    std::vector<Entry> _entries;
    std::vector<std::pair<std::string, std::vector<double>>> _embeddings;
};

/// HTTP client for a model server speaking the wire protocol
/// (POST /v1/generate, POST /v1/embed).
class RemoteBackend final: public Backend
{
  public:
    struct Options
    {
        std::chrono::milliseconds connect_timeout {5000};
        std::chrono::milliseconds read_timeout {120000};
        int retries = 1;
        std::string bearer_token; // defaults to $RECHECK_API_TOKEN
    };

    explicit RemoteBackend(std::string base_url);
    RemoteBackend(std::string base_url, Options options);

    [[nodiscard]] GenerationOutput generate(const GenerateRequest& req) override;
    [[nodiscard]] std::vector<double> embed(std::string_view text) override;

    /// The exact message sent for a request (after cropping the view, if any).
    [[nodiscard]] wire::GenerateRequest to_wire(const GenerateRequest& req) const;

  private:
    [[nodiscard]] std::string post(const std::string& path, const std::string& body);

    std::string _base_url;
    Options _options;
};

/// Cuts the view out of an encoded image and magnifies it by the view's scale,
/// re-encoding as PNG. Throws BackendError when built without image codec support.
[[nodiscard]] Image crop_image(const Image& image, const CropSpec& view);
[[nodiscard]] bool image_codec_available() noexcept;

} // namespace recheck
