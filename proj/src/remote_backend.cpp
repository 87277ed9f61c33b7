// SPDX-License-Identifier: Apache-2.0
#include <recheck/backend.hpp>

#include <fmt/format.h>
#include <httplib.h>

#ifdef RECHECK_HAVE_OPENCV
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#endif

#include <cmath>
#include <cstdlib>

namespace recheck
{

bool image_codec_available() noexcept
{
#ifdef RECHECK_HAVE_OPENCV
    return true;
#else
    return false;
#endif
}

Image crop_image(const Image& image, const CropSpec& view)
{
#ifdef RECHECK_HAVE_OPENCV
    const cv::Mat raw(1, static_cast<int>(image.bytes.size()), CV_8U, const_cast<char*>(image.bytes.data()));
    const cv::Mat decoded = cv::imdecode(raw, cv::IMREAD_COLOR);
    if (decoded.empty())
        throw BackendError(fmt::format("cannot decode {} image", image.format));
    const auto& b = view.bbox_px;
    if (!b.within(decoded.cols, decoded.rows))
        throw BackendError(fmt::format("crop [{},{},{},{}] outside {}x{} image", b.x0, b.y0, b.x1, b.y1, decoded.cols,
                                       decoded.rows));
    const cv::Mat roi = decoded(cv::Rect(b.x0, b.y0, b.width(), b.height()));
    cv::Mat magnified;
    const cv::Size size(std::max(1, static_cast<int>(std::lround(b.width() * view.scale))),
                        std::max(1, static_cast<int>(std::lround(b.height() * view.scale))));
    cv::resize(roi, magnified, size, 0.0, 0.0, cv::INTER_CUBIC);
    std::vector<unsigned char> png;
    if (!cv::imencode(".png", magnified, png))
        throw BackendError("cannot encode crop as png");
    return {std::string(png.begin(), png.end()), "png"};
#else
    (void) image;
    (void) view;
    throw BackendError("image cropping needs OpenCV support, which this build lacks");
#endif
}

RemoteBackend::RemoteBackend(std::string base_url): RemoteBackend(std::move(base_url), Options {}) {}

RemoteBackend::RemoteBackend(std::string base_url, Options options):
    _base_url(std::move(base_url)), _options(std::move(options))
{
    while (!_base_url.empty() && _base_url.back() == '/')
        _base_url.pop_back();
    if (_options.bearer_token.empty())
        if (const char* token = std::getenv("RECHECK_API_TOKEN"))
            _options.bearer_token = token;
}

wire::GenerateRequest RemoteBackend::to_wire(const GenerateRequest& req) const
{
    Image image = req.image;
    if (image.format != "png" && image.format != "jpeg")
        throw BackendError(fmt::format("remote backend cannot send '{}' images", image.format));
    if (req.view)
        image = crop_image(image, *req.view);
    return {base64_encode(image.bytes), image.format, req.prompt,     req.temperature,
            req.max_tokens,             req.top_k,    req.want_attention};
}

std::string RemoteBackend::post(const std::string& path, const std::string& body)
{
    httplib::Client client(_base_url);
    const auto to_parts = [](std::chrono::milliseconds ms) {
        return std::pair<time_t, time_t>(static_cast<time_t>(ms.count() / 1000),
                                         static_cast<time_t>((ms.count() % 1000) * 1000));
    };
    const auto [cs, cus] = to_parts(_options.connect_timeout);
    const auto [rs, rus] = to_parts(_options.read_timeout);
    client.set_connection_timeout(cs, cus);
    client.set_read_timeout(rs, rus);
    httplib::Headers headers;
    if (!_options.bearer_token.empty())
        headers.emplace("Authorization", "Bearer " + _options.bearer_token);

    std::string last_error;
    for (int attempt = 0; attempt <= _options.retries; ++attempt)
    {
        auto res = client.Post(path, headers, body, "application/json");
        if (!res)
        {
            last_error = httplib::to_string(res.error());
            continue;
        }
        if (res->status == 200)
            return res->body;
        std::string message = res->body;
        try
        {
            message = nlohmann::json::parse(res->body).at("error").get<std::string>();
        }
        catch (const nlohmann::json::exception&)
        {
        }
        throw BackendError(fmt::format("{}{} returned HTTP {}: {}", _base_url, path, res->status, message));
    }
    throw BackendError(fmt::format("{}{} transport failure: {}", _base_url, path, last_error));
}

GenerationOutput RemoteBackend::generate(const GenerateRequest& req)
{
    const auto body = wire::to_json(to_wire(req)).dump();
    const auto reply = post("/v1/generate", body);
    try
    {
        auto out = wire::to_generation_output(wire::parse_generate_response(wire::ordered_json::parse(reply)));
        if (req.want_attention && !out.attention)
            throw BackendError("server omitted attention that was requested");
        return out;
    }
    catch (const nlohmann::json::exception& e)
    {
        throw BackendError(fmt::format("malformed generate response: {}", e.what()));
    }
    catch (const ValidationError& e)
    {
        throw BackendError(fmt::format("invalid generate response: {}", e.what()));
    }
}

std::vector<double> RemoteBackend::embed(std::string_view text)
{
    const auto body = wire::to_json(wire::EmbedRequest {std::string(text)}).dump();
    const auto reply = post("/v1/embed", body);
    try
    {
        return wire::ingest_embedding(wire::parse_embed_response(wire::ordered_json::parse(reply)));
    }
    catch (const nlohmann::json::exception& e)
    {
        throw BackendError(fmt::format("malformed embed response: {}", e.what()));
    }
    catch (const ValidationError& e)
    {
        throw BackendError(fmt::format("invalid embed response: {}", e.what()));
    }
}

} // namespace recheck
