// SPDX-License-Identifier: Apache-2.0
// Complex values cross the boundary as JSON text in the core trace format; the
// Python package decodes them into dicts.
#include <recheck/eval.hpp>
#include <recheck/reattention.hpp>
#include <recheck/refine.hpp>
#include <recheck/synthworld.hpp>
#include <recheck/uncertainty.hpp>

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using recheck::json;

namespace
{

template <typename T>
T decode(const std::string& text)
{
    return json::parse(text).get<T>();
}

template <typename T>
std::string encode(const T& value)
{
    return json(value).dump();
}

recheck::Config config_of(const std::string& cfg_json)
{
    recheck::Config cfg;
    if (!cfg_json.empty())
        json::parse(cfg_json).get_to(cfg);
    return recheck::validate_config(cfg);
}

} // namespace

PYBIND11_MODULE(_recheck, m)
{
    m.doc() = "Uncertainty-guided self-correction engine (native core)";

    py::register_exception<recheck::ValidationError>(m, "ValidationError", PyExc_ValueError);
    py::register_exception<recheck::BackendError>(m, "BackendError", PyExc_RuntimeError);

    m.def("default_config", [] { return encode(recheck::Config {}); });
    m.def("validate_config", [](const std::string& cfg) { return encode(config_of(cfg)); });

    m.def("token_entropy", [](const std::string& step) { return recheck::token_entropy(decode<recheck::TokenStep>(step)); });
    m.def("response_token_uncertainty", [](const std::string& steps, double vocab_bound) {
        return recheck::response_token_uncertainty(decode<std::vector<recheck::TokenStep>>(steps), vocab_bound);
    });
    m.def("attention_dispersion", [](const std::string& attention, const std::string& claim) {
        return recheck::attention_dispersion(decode<recheck::AttentionMap>(attention), decode<recheck::Claim>(claim));
    });
    m.def(
        "semantic_consistency",
        [](const std::string& r0, const std::vector<std::string>& samples, std::size_t dim) {
            return recheck::semantic_consistency(r0, samples, recheck::TermFrequencyEmbedder(dim));
        },
        py::arg("r0"), py::arg("samples"), py::arg("dim") = 4096);
    m.def("hedge_ratio", [](const std::string& text) { return recheck::hedge_ratio(text, recheck::HedgeLexicon::builtin()); });
    m.def("unified_score", [](const std::array<double, 4>& components, const std::array<double, 4>& alpha) {
        return recheck::unified_score(components, alpha);
    });

    m.def("extract_claims", [](const std::string& output, const std::string& question) {
        return encode(recheck::extract_claims(decode<recheck::GenerationOutput>(output), question));
    });
    m.def("score_response", [](const std::string& output, const std::string& claims,
                               const std::vector<std::string>& samples, const std::string& cfg) {
        const auto score = recheck::score_response(decode<recheck::GenerationOutput>(output),
                                                   decode<std::vector<recheck::Claim>>(claims), samples,
                                                   config_of(cfg), recheck::TermFrequencyEmbedder());
        return encode(json {{"response", score.response}, {"per_claim", score.per_claim}});
    });
    m.def("find_underexplored", [](const std::string& saliency, double tau_rel, int image_w, int image_h,
                                   bool eight_connected) {
        return encode(recheck::find_underexplored(decode<recheck::SaliencyMap>(saliency), tau_rel, image_w, image_h,
                                                  eight_connected));
    });
    m.def("crop_at", [](double cx, double cy, double scale, int image_w, int image_h) {
        return encode(recheck::crop_at(cx, cy, scale, image_w, image_h));
    });
    m.def("classify_verdict", [](const std::string& claim, const std::string& answer) {
        const auto r = recheck::classify_verdict(decode<recheck::Claim>(claim), answer);
        return py::make_tuple(std::string(recheck::to_string(r.verdict)), r.confidence);
    });
    m.def("integrate_verifications", [](const std::string& text, const std::string& items, double floor) {
        const auto r =
            recheck::integrate_verifications(text, decode<std::vector<recheck::VerificationItem>>(items), floor);
        json edits = json::array();
        for (const auto& e: r.edits)
        {
            json je {{"kind", recheck::to_string(e.kind)}, {"target", e.target}, {"begin", e.begin},
                     {"end", e.end},   {"confidence", e.confidence}};
            je["replacement_text"] = e.replacement_text ? json(*e.replacement_text) : json(nullptr);
            edits.push_back(std::move(je));
        }
        return py::make_tuple(r.text, edits.dump(), r.conflicts.size());
    });
    m.def("check_convergence", [](double u_t, std::optional<double> u_prev, const std::string& cfg) {
        switch (recheck::check_convergence(u_t, u_prev, config_of(cfg)))
        {
        case recheck::ConvergenceDecision::stop_below_threshold:
            return std::string("stop_below_threshold");
        case recheck::ConvergenceDecision::stop_delta:
            return std::string("stop_delta");
        case recheck::ConvergenceDecision::continue_refining:
            break;
        }
        return std::string("continue");
    });

    m.def("bayes_update", [](double prior, double likelihood_h, double likelihood_not_h) {
        return recheck::synth::bayes_update({prior, likelihood_h, likelihood_not_h});
    });
    m.def(
        "detect_probability",
        [](double area, double scale, double theta_small, double base_rate, double slope) {
            return recheck::synth::DetectionModel {theta_small, base_rate, slope}.detect_probability(area, scale);
        },
        py::arg("area"), py::arg("scale"), py::arg("theta_small") = 2000.0, py::arg("base_rate") = 0.6,
        py::arg("slope") = 1.0);
    m.def("make_pope_cases", [](std::uint64_t seed, std::size_t n, const std::string& split) {
        return encode(recheck::synth::make_pope_cases(seed, n, recheck::synth::split_from_string(split)));
    });

    m.def("pope_metrics", [](const std::vector<std::pair<bool, bool>>& results) {
        return encode(recheck::eval::pope_metrics(results));
    });

    m.def(
        "run_scripted",
        [](const std::string& fixture, const std::string& image_path, const std::string& question,
           const std::string& cfg) {
            auto backend = recheck::ScriptedBackend::load(fixture);
            const recheck::TermFrequencyEmbedder embedder;
            const auto trace = recheck::run_correction(recheck::read_image_file(image_path), question, config_of(cfg),
                                                       backend, embedder);
            return encode(trace);
        },
        py::call_guard<py::gil_scoped_release>());
    m.def(
        "run_synth_benchmark",
        [](std::uint64_t seed, std::size_t n, const std::string& split, const std::string& pipeline,
           const std::string& cfg, int parallel) {
            recheck::synth::SynthBackend backend(seed);
            const recheck::TermFrequencyEmbedder embedder;
            const auto cases =
                recheck::eval::bench_cases(recheck::synth::make_pope_cases(seed, n, recheck::synth::split_from_string(split)));
            const auto r = recheck::eval::run_benchmark(cases, recheck::eval::pipeline_from_string(pipeline),
                                                        config_of(cfg), backend, embedder, {parallel, seed});
            return encode(json {{"metrics", r.metrics}, {"invalid", r.invalid}});
        },
        py::call_guard<py::gil_scoped_release>());
}
