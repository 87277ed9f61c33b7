// SPDX-License-Identifier: Apache-2.0
#include <recheck/refine.hpp>
#include <recheck/synthworld.hpp>
#include <recheck/text.hpp>

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

namespace recheck::synth
{

const SceneObject* Scene::find(std::string_view name) const
{
    for (const auto& o: objects)
        if (o.name == name)
            return &o;
    return nullptr;
}

double Scene::prior(std::string_view name) const
{
    auto it = distractor_prior.find(std::string(name));
    return it == distractor_prior.end() ? 0.0 : it->second;
}

void validate(const Scene& scene)
{
    if (scene.width <= 0 || scene.height <= 0)
        throw ValidationError("scene dims must be positive");
    std::set<std::string, std::less<>> names;
    for (const auto& o: scene.objects)
    {
        if (o.name.empty())
            throw ValidationError("scene object without a name");
        if (!names.insert(o.name).second)
            throw ValidationError(fmt::format("duplicate scene object '{}'", o.name));
        if (!o.bbox_px.within(scene.width, scene.height))
            throw ValidationError(fmt::format("object '{}' lies outside the {}x{} scene", o.name, scene.width,
                                              scene.height));
    }
    for (const auto& [name, p]: scene.distractor_prior)
        if (!(p >= 0.0 && p <= 1.0))
            throw ValidationError(fmt::format("prior for '{}' must lie in [0, 1]", name));
}

void to_json(json& j, const SceneObject& v)
{
    j = json {{"name", v.name}, {"bbox_px", v.bbox_px}, {"present", v.present}};
}

void from_json(const json& j, SceneObject& v)
{
    v.name = j.at("name").get<std::string>();
    v.bbox_px = j.at("bbox_px").get<BBox>();
    v.present = j.value("present", true);
}

void to_json(json& j, const Scene& v)
{
    j = json {{"width", v.width},
              {"height", v.height},
              {"objects", v.objects},
              {"distractor_prior", v.distractor_prior},
              {"seed", v.seed}};
}

void from_json(const json& j, Scene& v)
{
    v.width = j.at("width").get<int>();
    v.height = j.at("height").get<int>();
    v.objects = j.at("objects").get<std::vector<SceneObject>>();
    v.distractor_prior = j.value("distractor_prior", std::map<std::string, double> {});
    v.seed = j.value("seed", std::uint64_t {0});
    validate(v);
}

Image scene_image(const Scene& scene) { return {json(scene).dump(), "scene"}; }

Scene parse_scene_image(const Image& image)
{
    if (image.format != "scene")
        throw BackendError(fmt::format("synthetic backend needs a scene image, got '{}'", image.format));
    try
    {
        return json::parse(image.bytes).get<Scene>();
    }
    catch (const json::exception& e)
    {
        throw BackendError(fmt::format("malformed scene: {}", e.what()));
    }
    catch (const ValidationError& e)
    {
        throw BackendError(fmt::format("invalid scene: {}", e.what()));
    }
}

void validate(const DetectionModel& det)
{
    if (!(det.theta_small > 0.0) || !std::isfinite(det.theta_small))
        throw ValidationError("theta_small must be positive");
    if (!(det.slope > 0.0) || !std::isfinite(det.slope))
        throw ValidationError("detection slope must be positive");
    if (!(det.base_rate >= 0.0 && det.base_rate <= 1.0))
        throw ValidationError("base_rate must lie in [0, 1]");
}

double DetectionModel::intercept() const { return -slope * std::log(theta_small); }

double DetectionModel::detect_probability(double area_px, double scale) const
{
    if (!(area_px > 0.0))
        return 0.0;
    const double z = slope * std::log(area_px * scale * scale) + intercept();
    return 1.0 / (1.0 + std::exp(-z));
}

double DetectionModel::false_positive(double prior, double view_fraction) const
{
    return std::clamp(base_rate * prior * view_fraction, 0.0, 1.0);
}

double bayes_update(const BayesBelief& b)
{
    if (!(b.prior >= 0.0 && b.prior <= 1.0))
        throw ValidationError("prior must lie in [0, 1]");
    if (!(b.likelihood_h >= 0.0 && b.likelihood_h <= 1.0 && b.likelihood_not_h >= 0.0 && b.likelihood_not_h <= 1.0))
        throw ValidationError("likelihoods must lie in [0, 1]");
    const double joint = b.likelihood_h * b.prior;
    const double evidence = joint + b.likelihood_not_h * (1.0 - b.prior);
    if (!(evidence > 0.0))
        throw ValidationError("evidence has zero probability");
    return joint / evidence;
}

namespace
{

struct Visibility
{
    const SceneObject* object = nullptr;
    double visible_area = 0.0;
    bool in_view = false;
};

Visibility visibility(const Scene& scene, const CropSpec& view, std::string_view name, const AttentionModel& am)
{
    Visibility v;
    v.object = scene.find(name);
    if (v.object && v.object->present)
    {
        const auto cut = intersect(v.object->bbox_px, view.bbox_px);
        v.visible_area = cut.empty() ? 0.0 : static_cast<double>(cut.area());
        v.in_view = v.visible_area >= am.min_visible * static_cast<double>(v.object->bbox_px.area());
    }
    return v;
}

} // namespace

double yes_probability(const Scene& scene, const CropSpec& view, std::string_view object_name,
                       const DetectionModel& det, const AttentionModel& am)
{
    const double fraction =
        static_cast<double>(view.bbox_px.area()) / (static_cast<double>(scene.width) * static_cast<double>(scene.height));
    const double fp = det.false_positive(scene.prior(object_name), fraction);
    const auto vis = visibility(scene, view, object_name, am);
    const double p = vis.in_view ? det.detect_probability(vis.visible_area, view.scale) : 0.0;
    return p + (1.0 - p) * fp;
}

GenerationOutput simulate_answer(const Scene& scene, const CropSpec& view, std::string_view object_name,
                                 const DetectionModel& det, std::uint64_t rng_seed, const AttentionModel& am)
{
    if (!view.bbox_px.within(scene.width, scene.height))
        throw ValidationError("view lies outside the scene");
    const double py = yes_probability(scene, view, object_name, det, am);
    std::mt19937_64 rng(rng_seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const bool yes = unit(rng) < py;

    const double conf = std::clamp(py, 0.01, 0.99);
    const double keep = 1.0 - am.residual;
    TokenStep step;
    step.token_text = yes ? "Yes" : "No";
    step.top_logprobs = {{"Yes", std::log(keep * conf)}, {"No", std::log(keep * (1.0 - conf))}};
    step.chosen_index = yes ? 0 : 1;

    const auto vis = visibility(scene, view, object_name, am);
    const int gh = am.grid_h;
    const int gw = am.grid_w;
    const auto m = static_cast<std::size_t>(gh * gw);
    std::vector<double> weights(m);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto& w: weights)
        w = std::exp(am.noise_sigma * normal(rng));

    std::vector<char> on_object(m, 0);
    std::size_t object_cells = 0;
    if (vis.in_view)
    {
        const auto& b = view.bbox_px;
        const double cw = static_cast<double>(b.width()) / gw;
        const double ch = static_cast<double>(b.height()) / gh;
        const auto& o = vis.object->bbox_px;
        for (int r = 0; r < gh; ++r)
            for (int c = 0; c < gw; ++c)
            {
                const double x0 = b.x0 + c * cw;
                const double y0 = b.y0 + r * ch;
                if (x0 < o.x1 && x0 + cw > o.x0 && y0 < o.y1 && y0 + ch > o.y0)
                {
                    on_object[static_cast<std::size_t>(r * gw + c)] = 1;
                    ++object_cells;
                }
            }
    }
    if (object_cells > 0 && object_cells < m)
    {
        if (yes)
        {
            double background = 0.0;
            for (std::size_t j = 0; j < m; ++j)
                if (!on_object[j])
                    background += weights[j];
            for (std::size_t j = 0; j < m; ++j)
                weights[j] = on_object[j] ? am.focus_mass / static_cast<double>(object_cells)
                                          : (1.0 - am.focus_mass) * weights[j] / background;
        }
        else
            for (std::size_t j = 0; j < m; ++j)
                if (on_object[j])
                    weights[j] *= am.miss_attenuation;
    }

    GenerationOutput out;
    out.response_text = step.token_text;
    out.steps.push_back(std::move(step));
    out.attention = AttentionMap(1, gh, gw, std::move(weights));
    out.image_w = std::max(1, static_cast<int>(std::lround(view.bbox_px.width() * view.scale)));
    out.image_h = std::max(1, static_cast<int>(std::lround(view.bbox_px.height() * view.scale)));
    return out;
}

std::string_view to_string(Split s) noexcept
{
    switch (s)
    {
    case Split::random:
        return "random";
    case Split::popular:
        return "popular";
    case Split::adversarial:
        return "adversarial";
    }
    return "random";
}

Split split_from_string(std::string_view s)
{
    if (s == "random")
        return Split::random;
    if (s == "popular")
        return Split::popular;
    if (s == "adversarial")
        return Split::adversarial;
    throw ValidationError(fmt::format("unknown split '{}' (random, popular, adversarial)", s));
}

void to_json(json& j, const PopeCase& v)
{
    j = json {{"id", v.id}, {"scene", v.scene}, {"object", v.object}, {"question", v.question}, {"truth", v.truth}};
}

void from_json(const json& j, PopeCase& v)
{
    v.id = j.at("id").get<std::string>();
    v.scene = j.at("scene").get<Scene>();
    v.object = j.at("object").get<std::string>();
    v.question = j.at("question").get<std::string>();
    v.truth = j.at("truth").get<bool>();
}

namespace
{

// Ordered by how often the object appears in everyday scenes.
const std::vector<std::string>& vocabulary()
{
    static const std::vector<std::string> v {
        "person",   "car",      "chair",     "cup",       "bottle",     "dining table", "bowl",     "dog",
        "cat",      "book",     "cell phone", "handbag",  "umbrella",   "bicycle",      "clock",    "bench",
        "fork",     "knife",    "spoon",     "laptop",    "keyboard",   "mouse",        "remote",   "vase",
        "backpack", "tie",      "traffic light", "potted plant", "sink", "oven",        "toaster",  "banana",
        "apple",    "orange",   "sandwich",  "pizza",     "donut",      "cake",         "teddy bear", "scissors"};
    return v;
}

std::uint64_t splitmix(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t h, std::uint64_t v) { return splitmix(h ^ splitmix(v)); }

std::uint64_t hash_text(std::string_view s)
{
    std::uint64_t h = 1469598103934665603ULL;
    for (const unsigned char c: s)
    {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

BBox place_box(std::mt19937_64& rng, int w, int h, int scene_w, int scene_h)
{
    std::uniform_int_distribution<int> x(0, scene_w - w);
    std::uniform_int_distribution<int> y(0, scene_h - h);
    const int x0 = x(rng);
    const int y0 = y(rng);
    return {x0, y0, x0 + w, y0 + h};
}

std::string article(std::string_view noun)
{
    return (!noun.empty() && std::string_view("aeiou").find(noun.front()) != std::string_view::npos) ? "an" : "a";
}

} // namespace

std::vector<PopeCase> make_pope_cases(std::uint64_t seed, std::size_t n, Split split)
{
    if (n == 0)
        throw ValidationError("n must be at least 1");
    const auto& vocab = vocabulary();
    std::mt19937_64 master(mix(seed, static_cast<std::uint64_t>(split) + 1));
    std::vector<char> labels(n, 0);
    for (std::size_t i = 0; i < n / 2; ++i)
        labels[i] = 1;
    std::shuffle(labels.begin(), labels.end(), master);

    const DetectionModel det;
    std::vector<PopeCase> cases;
    cases.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
    {
        std::mt19937_64 rng(mix(mix(seed, static_cast<std::uint64_t>(split) + 1), i));
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        Scene scene;
        scene.seed = rng();

        std::vector<std::size_t> order(vocab.size());
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        const auto n_present = static_cast<std::size_t>(std::uniform_int_distribution<int>(3, 6)(rng));

        for (std::size_t k = 0; k < n_present; ++k)
        {
            std::uniform_int_distribution<int> side(60, 160);
            const int w = side(rng);
            const int h = side(rng);
            scene.objects.push_back({vocab[order[k]], place_box(rng, w, h, scene.width, scene.height), true});
            scene.distractor_prior[vocab[order[k]]] = 0.2 + 0.4 * unit(rng);
        }

        PopeCase c;
        c.truth = labels[i] != 0;
        if (c.truth)
        {
            // The queried object is small: area log-uniform in [0.3, 2] * theta_small.
            auto& target = scene.objects.front();
            const double area = det.theta_small * std::exp(std::log(0.3) + (std::log(2.0) - std::log(0.3)) * unit(rng));
            const double aspect = 0.75 + 0.5 * unit(rng);
            const int w = std::max(4, static_cast<int>(std::lround(std::sqrt(area * aspect))));
            const int h = std::max(4, static_cast<int>(std::lround(area / w)));
            target.bbox_px = place_box(rng, w, h, scene.width, scene.height);
            c.object = target.name;
        }
        else
        {
            std::vector<std::size_t> absent(order.begin() + static_cast<std::ptrdiff_t>(n_present), order.end());
            double lo = 0.0;
            double hi = 0.3;
            if (split == Split::popular)
            {
                std::sort(absent.begin(), absent.end());
                absent.resize(std::min<std::size_t>(absent.size(), 10));
                lo = 0.3;
                hi = 0.6;
            }
            else if (split == Split::adversarial)
            {
                lo = 0.5;
                hi = 0.9;
            }
            const auto pick = absent[std::uniform_int_distribution<std::size_t>(0, absent.size() - 1)(rng)];
            c.object = vocab[pick];
            scene.distractor_prior[c.object] = lo + (hi - lo) * unit(rng);
        }
        c.question = fmt::format("Is there {} {} in the image?", article(c.object), c.object);
        c.id = fmt::format("{}-{}-{:04}", to_string(split), seed, i);
        c.scene = std::move(scene);
        validate(c.scene);
        cases.push_back(std::move(c));
    }
    return cases;
}

std::string prompt_object(std::string_view prompt) { return question_object(prompt); }

SynthBackend::SynthBackend(std::uint64_t seed, DetectionModel det, AttentionModel am):
    _seed(seed), _det(det), _am(am)
{
    validate(_det);
    if (_am.grid_h <= 0 || _am.grid_w <= 0 || _am.grid_h * _am.grid_w < 2)
        throw ValidationError("synthetic attention grid needs at least two cells");
}

GenerationOutput SynthBackend::generate(const GenerateRequest& req)
{
    const auto scene = parse_scene_image(req.image);
    const auto object = prompt_object(req.prompt);
    if (object.empty())
        throw BackendError(fmt::format("synthetic backend cannot parse prompt '{}'", req.prompt));
    const CropSpec view = req.view ? *req.view : full_view(scene.width, scene.height);
    if (!view.bbox_px.within(scene.width, scene.height))
        throw BackendError("view lies outside the scene");

    std::uint64_t h = mix(_seed, scene.seed);
    h = mix(h, hash_text(object));
    h = mix(h, static_cast<std::uint64_t>(view.bbox_px.x0) << 32 | static_cast<std::uint32_t>(view.bbox_px.y0));
    h = mix(h, static_cast<std::uint64_t>(view.bbox_px.x1) << 32 | static_cast<std::uint32_t>(view.bbox_px.y1));
    h = mix(h, static_cast<std::uint64_t>(std::llround(view.scale * 1e6)));
    h = mix(h, req.temperature > 0.0 ? req.seed : 0);
    auto out = simulate_answer(scene, view, object, _det, h, _am);
    if (!req.want_attention)
        out.attention.reset();
    return out;
}

std::vector<double> SynthBackend::embed(std::string_view text) { return TermFrequencyEmbedder().embed(text); }

} // namespace recheck::synth
