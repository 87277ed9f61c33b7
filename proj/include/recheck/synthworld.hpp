// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <recheck/backend.hpp>
#include <recheck/core.hpp>

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace recheck::synth
{

struct SceneObject
{
    std::string name;
    BBox bbox_px;
    bool present = true;

    friend bool operator==(const SceneObject&, const SceneObject&) = default;
};

/// Abstract scene: object rectangles plus, per object name, the probability that the
/// model "sees" it from context alone (co-occurrence prior).
struct Scene
{
    int width = 640;
    int height = 480;
    std::vector<SceneObject> objects;
    std::map<std::string, double> distractor_prior;
    std::uint64_t seed = 0; // per-image noise stream

    [[nodiscard]] const SceneObject* find(std::string_view name) const;
    [[nodiscard]] double prior(std::string_view name) const;

    friend bool operator==(const Scene&, const Scene&) = default;
};

void validate(const Scene& scene);
void to_json(json& j, const SceneObject& v);
void from_json(const json& j, SceneObject& v);
void to_json(json& j, const Scene& v);
void from_json(const json& j, Scene& v);

[[nodiscard]] Image scene_image(const Scene& scene);
[[nodiscard]] Scene parse_scene_image(const Image& image);

/// Detection probability logistic(slope * ln(A * mu^2) + b), with b fixed so that an
/// object of area theta_small seen at mu = 1 is detected half the time. Context-driven
/// false positives occur with probability base_rate * prior * (visible fraction of
/// the scene).
struct DetectionModel
{
    double theta_small = 2000.0; // px^2
    double base_rate = 0.6;
    double slope = 1.0;

    [[nodiscard]] double intercept() const;
    [[nodiscard]] double detect_probability(double area_px, double scale) const;
    [[nodiscard]] double false_positive(double prior, double view_fraction) const;

    friend bool operator==(const DetectionModel&, const DetectionModel&) = default;
};

void validate(const DetectionModel& det);

/// Shape of the synthetic attention and answer distribution.
struct AttentionModel
{
    int grid_h = 12;
    int grid_w = 16;
    double focus_mass = 0.85;    // share on the object's cells when it is seen
    double noise_sigma = 0.25;   // lognormal spread of background attention
    double miss_attenuation = 0.1; // factor on a present-but-missed object's cells
    double residual = 0.02;      // probability mass outside the yes/no vocabulary
    double min_visible = 0.5;    // visible fraction below which an object counts as out of view
};

struct BayesBelief
{
    double prior = 0.5;
    double likelihood_h = 0.5;     // P(E | H)
    double likelihood_not_h = 0.5; // P(E | not H)
};

/// Exact posterior P(H | E). Throws ValidationError when P(E) = 0 or an input is out of range.
[[nodiscard]] double bayes_update(const BayesBelief& b);

/// Probability that the model answers "yes" for `object_name` when shown `view`.
[[nodiscard]] double yes_probability(const Scene& scene, const CropSpec& view, std::string_view object_name,
                                     const DetectionModel& det, const AttentionModel& am = {});

/// One simulated answer: "Yes" or "No" as a single token whose logprobs encode the
/// model's confidence, with attention over the view's grid.
[[nodiscard]] GenerationOutput simulate_answer(const Scene& scene, const CropSpec& view, std::string_view object_name,
                                               const DetectionModel& det, std::uint64_t rng_seed,
                                               const AttentionModel& am = {});

enum class Split
{
    random,
    popular,
    adversarial,
};

[[nodiscard]] std::string_view to_string(Split s) noexcept;
[[nodiscard]] Split split_from_string(std::string_view s);

struct PopeCase
{
    std::string id;
    Scene scene;
    std::string object;
    std::string question;
    bool truth = false;
};

void to_json(json& j, const PopeCase& v);
void from_json(const json& j, PopeCase& v);

/// Balanced synthetic polling cases. Negatives query absent objects whose prior is
/// drawn from a split-specific range (adversarial: [0.5, 0.9]); positives query small
/// present objects.
[[nodiscard]] std::vector<PopeCase> make_pope_cases(std::uint64_t seed, std::size_t n, Split split);

/// Parses the object out of "Is there a X in the image?"-style prompts.
[[nodiscard]] std::string prompt_object(std::string_view prompt);

/// Backend over Scene images. Deterministic: every answer is a pure function of
/// (scene, view, prompt, request seed, backend seed).
class SynthBackend final: public Backend
{
  public:
    explicit SynthBackend(std::uint64_t seed = 0, DetectionModel det = {}, AttentionModel am = {});

    [[nodiscard]] GenerationOutput generate(const GenerateRequest& req) override;
    [[nodiscard]] std::vector<double> embed(std::string_view text) override;

    [[nodiscard]] const DetectionModel& detection() const noexcept { return _det; }
    [[nodiscard]] const AttentionModel& attention() const noexcept { return _am; }

  private:
    std::uint64_t _seed;
    DetectionModel _det;
    AttentionModel _am;
};

} // namespace recheck::synth
