// SPDX-License-Identifier: Apache-2.0
// Acceptance checks. Prints one PASS/FAIL line per criterion and exits non-zero if
// any check fails.
#include <recheck/eval.hpp>
#include <recheck/reattention.hpp>
#include <recheck/refine.hpp>
#include <recheck/synthworld.hpp>
#include <recheck/uncertainty.hpp>

#include <test_support.hpp>

#include <fmt/format.h>

#include <chrono>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <set>

using namespace recheck;

namespace
{

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

/// Collects the first few failure descriptions of a check.
struct Failures
{
    std::size_t count = 0;
    std::string first;

    void add(const std::string& what)
    {
        if (count++ == 0)
            first = what;
    }
    [[nodiscard]] bool ok() const { return count == 0; }
    [[nodiscard]] std::string summary() const
    {
        return count == 0 ? std::string() : fmt::format("{} failure(s); first: {}", count, first);
    }
};

/// Fixed random vectors per text, so semantic consistency can be checked against plain cosines.
class TableEmbedder final: public Embedder
{
  public:
    explicit TableEmbedder(std::map<std::string, std::vector<double>> table): _table(std::move(table)) {}
    std::vector<double> embed(std::string_view text) const override
    {
        auto v = _table.at(std::string(text));
        double n = 0;
        for (double x: v)
            n += x * x;
        for (double& x: v)
            x /= std::sqrt(n);
        return v;
    }
    std::size_t dimension() const override { return _table.begin()->second.size(); }

  private:
    std::map<std::string, std::vector<double>> _table;
};

// ---- checks; each returns an empty string on success ----

std::string equation_suite()
{
    const auto t0 = Clock::now();
    std::mt19937_64 rng(20240601);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Failures f;

    for (int i = 0; i < 1000; ++i)
    {
        // Token entropy over a truncated distribution.
        const int k = 1 + static_cast<int>(unit(rng) * 8);
        std::vector<double> w(static_cast<std::size_t>(k));
        for (auto& x: w)
            x = unit(rng) + 1e-6;
        const double keep = unit(rng) < 0.3 ? 1.0 : 0.5 + 0.5 * unit(rng);
        const double total = std::accumulate(w.begin(), w.end(), 0.0);
        std::vector<std::pair<std::string, double>> cands;
        std::vector<double> probs;
        for (int j = 0; j < k; ++j)
        {
            probs.push_back(keep * w[static_cast<std::size_t>(j)] / total);
            cands.emplace_back(fmt::format("t{}", j), probs.back());
        }
        const auto step = rt::step_of("t0", cands);
        // Reference sees exactly the probabilities the step stores.
        std::vector<double> stored;
        for (const auto& c: step.top_logprobs)
            stored.push_back(std::exp(c.logprob));
        if (!rt::rel_close(token_entropy(step), rt::ref_entropy(stored)))
            f.add(fmt::format("token_entropy draw {}", i));

        // Attention dispersion over a random claim span.
        const int n = 1 + static_cast<int>(unit(rng) * 6);
        const int gh = 1 + static_cast<int>(unit(rng) * 6);
        const int gw = 1 + static_cast<int>(unit(rng) * 6);
        const auto m = static_cast<std::size_t>(gh * gw);
        if (m < 2)
            continue;
        std::vector<double> raw(static_cast<std::size_t>(n) * m);
        for (auto& x: raw)
            x = unit(rng) < 0.2 ? 0.0 : std::exp(3.0 * (unit(rng) - 0.5));
        const AttentionMap attn(static_cast<std::size_t>(n), gh, gw, raw);
        Claim c;
        c.span_start = static_cast<std::size_t>(unit(rng) * n);
        c.span_end = c.span_start + static_cast<std::size_t>(unit(rng) * (n - static_cast<int>(c.span_start)));
        if (!rt::rel_close(attention_dispersion(attn, c), rt::ref_dispersion(raw, m, c.span_start, c.span_end)))
            f.add(fmt::format("attention_dispersion draw {}", i));

        // Semantic consistency with fixed vectors.
        const std::size_t dim = 2 + static_cast<std::size_t>(unit(rng) * 8);
        const std::size_t ns = 1 + static_cast<std::size_t>(unit(rng) * 5);
        std::map<std::string, std::vector<double>> table;
        std::vector<std::string> samples;
        std::vector<std::vector<double>> sample_vecs;
        auto random_vec = [&] {
            std::vector<double> v(dim);
            for (auto& x: v)
                x = unit(rng) - 0.3;
            return v;
        };
        const auto r0 = random_vec();
        table["r0"] = r0;
        for (std::size_t s = 0; s < ns; ++s)
        {
            samples.push_back(fmt::format("s{}", s));
            sample_vecs.push_back(random_vec());
            table[samples.back()] = sample_vecs.back();
        }
        const TableEmbedder emb(table);
        if (!rt::rel_close(semantic_consistency("r0", samples, emb), rt::ref_semantic(r0, sample_vecs)))
            f.add(fmt::format("semantic_consistency draw {}", i));

        // Hedge ratio over random word sequences.
        static const std::vector<std::string> hedges {"possibly", "appears", "seems",   "perhaps",
                                                      "likely",   "might",   "could",   "may",
                                                      "something", "various", "unclear"};
        static const std::vector<std::string> plain {"the", "car", "is", "red", "a", "dog", "near", "table"};
        const std::size_t nw = 1 + static_cast<std::size_t>(unit(rng) * 12);
        std::string text;
        std::size_t hedge_count = 0;
        for (std::size_t j = 0; j < nw; ++j)
        {
            std::string word;
            if (unit(rng) < 0.3)
            {
                word = hedges[static_cast<std::size_t>(unit(rng) * hedges.size())];
                ++hedge_count;
            }
            else
                word = plain[static_cast<std::size_t>(unit(rng) * plain.size())];
            if (unit(rng) < 0.3)
                word[0] = static_cast<char>(std::toupper(word[0]));
            if (unit(rng) < 0.2)
                word += unit(rng) < 0.5 ? "," : ".";
            text += (j ? " " : "") + word;
        }
        const double want = static_cast<double>(hedge_count) / static_cast<double>(nw);
        if (!rt::rel_close(hedge_ratio(text, HedgeLexicon::builtin()), want))
            f.add(fmt::format("hedge_ratio on '{}'", text));

        // Unified score as a plain dot product.
        std::array<double, 4> comp {};
        std::array<double, 4> alpha {};
        for (auto& x: comp)
            x = unit(rng);
        for (auto& x: alpha)
            x = unit(rng);
        const double asum = alpha[0] + alpha[1] + alpha[2] + alpha[3];
        long double dot = 0.0L;
        for (std::size_t j = 0; j < 4; ++j)
        {
            alpha[j] /= asum;
            dot += static_cast<long double>(alpha[j]) * comp[j];
        }
        if (!rt::rel_close(unified_score(comp, alpha), static_cast<double>(dot)))
            f.add(fmt::format("unified_score draw {}", i));
    }
    const double secs = seconds_since(t0);
    if (secs >= 10.0)
        f.add(fmt::format("runtime {:.2f} s", secs));
    return f.summary();
}

std::string convexity()
{
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Failures f;
    for (int i = 0; i < 10000; ++i)
    {
        std::array<double, 4> comp {};
        std::array<double, 4> alpha {};
        for (auto& x: comp)
            x = unit(rng);
        double s = 0;
        for (auto& x: alpha)
            s += (x = unit(rng) < 0.2 ? 0.0 : unit(rng));
        if (s == 0)
            alpha = {1, 0, 0, 0}, s = 1;
        for (auto& x: alpha)
            x /= s;
        // Renormalize exactly enough to pass the sum check; skip draws that cannot.
        if (std::abs(alpha[0] + alpha[1] + alpha[2] + alpha[3] - 1.0) > 1e-9)
            continue;
        const double u = unified_score(comp, alpha);
        const double lo = *std::min_element(comp.begin(), comp.end());
        const double hi = *std::max_element(comp.begin(), comp.end());
        if (u < lo - 1e-12 || u > hi + 1e-12)
            f.add(fmt::format("draw {}: {} outside [{}, {}]", i, u, lo, hi));
    }
    return f.summary();
}

/// Number of 4-connected components among marked cells (union-find).
std::size_t components(const std::vector<char>& mark, int gh, int gw)
{
    std::vector<std::size_t> parent(mark.size());
    std::iota(parent.begin(), parent.end(), 0);
    std::function<std::size_t(std::size_t)> root = [&](std::size_t x) {
        return parent[x] == x ? x : parent[x] = root(parent[x]);
    };
    for (int r = 0; r < gh; ++r)
        for (int c = 0; c < gw; ++c)
        {
            const auto i = static_cast<std::size_t>(r * gw + c);
            if (!mark[i])
                continue;
            if (c + 1 < gw && mark[i + 1])
                parent[root(i)] = root(i + 1);
            if (r + 1 < gh && mark[i + static_cast<std::size_t>(gw)])
                parent[root(i)] = root(i + static_cast<std::size_t>(gw));
        }
    std::set<std::size_t> roots;
    for (std::size_t i = 0; i < mark.size(); ++i)
        if (mark[i])
            roots.insert(root(i));
    return roots.size();
}

std::string saliency_threshold()
{
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Failures f;
    for (int i = 0; i < 1000; ++i)
    {
        const int gh = 1 + static_cast<int>(unit(rng) * 10);
        const int gw = 1 + static_cast<int>(unit(rng) * 10);
        std::vector<double> v(static_cast<std::size_t>(gh * gw));
        for (auto& x: v)
            x = unit(rng) < 0.15 ? 0.0 : std::pow(unit(rng), 3.0);
        const SaliencyMap s(gh, gw, v);
        const int W = 100 + static_cast<int>(unit(rng) * 1900);
        const int H = 100 + static_cast<int>(unit(rng) * 1900);
        const auto regions = find_underexplored(s, 0.2, W, H);

        const double mx = *std::max_element(v.begin(), v.end());
        std::vector<char> want(v.size(), 0);
        for (std::size_t j = 0; j < v.size(); ++j)
            want[j] = v[j] < 0.2 * mx ? 1 : 0;
        std::vector<char> got(v.size(), 0);
        bool overlap = false;
        for (const auto& r: regions)
        {
            if (!r.bbox_px.within(W, H))
                f.add(fmt::format("map {}: bbox out of bounds", i));
            for (const auto& c: r.cells)
            {
                auto& g = got[static_cast<std::size_t>(c.row * gw + c.col)];
                overlap = overlap || g;
                g = 1;
            }
        }
        if (got != want || overlap)
            f.add(fmt::format("map {}: selected cells differ from sub-threshold cells", i));
        if (regions.size() != components(want, gh, gw))
            f.add(fmt::format("map {}: {} regions, {} components", i, regions.size(), components(want, gh, gw)));

        const double scale = std::exp(8.0 * (unit(rng) - 0.5));
        auto scaled = v;
        for (auto& x: scaled)
            x *= scale;
        const auto rs = find_underexplored(SaliencyMap(gh, gw, scaled), 0.2, W, H);
        bool same = rs.size() == regions.size();
        for (std::size_t j = 0; same && j < rs.size(); ++j)
            same = rs[j].cells == regions[j].cells && rs[j].bbox_px == regions[j].bbox_px;
        if (!same)
            f.add(fmt::format("map {}: rescaling by {} changed the regions", i, scale));
    }
    return f.summary();
}

std::string crop_geometry()
{
    std::mt19937_64 rng(1234);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Failures f;
    for (int i = 0; i < 10000; ++i)
    {
        const int W = 16 + static_cast<int>(unit(rng) * 3000);
        const int H = 16 + static_cast<int>(unit(rng) * 3000);
        Region r;
        const int x0 = static_cast<int>(unit(rng) * (W - 1));
        const int y0 = static_cast<int>(unit(rng) * (H - 1));
        r.cells = {{0, 0}};
        r.bbox_px = {x0, y0, x0 + 1 + static_cast<int>(unit(rng) * (W - x0 - 1)),
                     y0 + 1 + static_cast<int>(unit(rng) * (H - y0 - 1))};
        const std::vector<double> scales {1.0 + 4.0 * unit(rng), 1.0 + 4.0 * unit(rng), unit(rng) < 0.1 ? 1.0 : 2.0};
        const auto crops = plan_crops(r, W, H, scales, 3);
        for (const auto& c: crops)
        {
            const auto& b = c.bbox_px;
            if (!b.within(W, H))
            {
                f.add(fmt::format("case {}: crop outside {}x{}", i, W, H));
                continue;
            }
            // Smallest window that, magnified by mu, covers the full image side.
            const auto side = [&](int len) {
                return static_cast<int>(std::ceil(static_cast<long double>(len) / c.scale - 1e-9L));
            };
            if (b.width() != side(W) || b.height() != side(H))
                f.add(fmt::format("case {}: {}x{} window at mu={} for {}x{}", i, b.width(), b.height(), c.scale, W, H));
            const double cx = (r.bbox_px.x0 + r.bbox_px.x1) / 2.0;
            const double cy = (r.bbox_px.y0 + r.bbox_px.y1) / 2.0;
            const double want_x0 = std::clamp(cx - b.width() / 2.0, 0.0, static_cast<double>(W - b.width()));
            const double want_y0 = std::clamp(cy - b.height() / 2.0, 0.0, static_cast<double>(H - b.height()));
            if (std::abs(b.x0 - want_x0) > 0.5 + 1e-9 || std::abs(b.y0 - want_y0) > 0.5 + 1e-9)
                f.add(fmt::format("case {}: window not centered on the region", i));
        }
    }
    return f.summary();
}

std::string loop_control()
{
    Failures f;
    std::mt19937_64 rng(555);
    std::uniform_int_distribution<int> small(1, 4);
    const TermFrequencyEmbedder emb;
    const Image image {"opaque", "png"};
    for (std::uint64_t seed = 0; seed < 400; ++seed)
    {
        Config cfg;
        cfg.max_iterations = small(rng);
        cfg.crops_per_iteration = small(rng);
        cfg.k_samples = small(rng);
        cfg.tau_u = std::uniform_real_distribution<double>(0.0, 0.6)(rng);
        cfg.epsilon = std::uniform_real_distribution<double>(0.0, 0.05)(rng);
        rt::ChaosBackend chaos(seed, seed % 3 == 0 ? 0.05 : 0.0);
        rt::CountingBackend counting(chaos);
        RefinementTrace trace;
        try
        {
            trace = run_correction(image, "Is there a fork in the image?", cfg, counting, emb);
        }
        catch (const BackendError&)
        {
            // Only the initial scoring may fail outright.
            if (counting.calls.load() > 1 + static_cast<std::size_t>(cfg.k_samples))
                f.add(fmt::format("seed {}: late failure escaped as an exception", seed));
            continue;
        }
        const auto calls = counting.calls.load();
        const auto bound = 1 + static_cast<std::size_t>(cfg.max_iterations * (cfg.k_samples + cfg.crops_per_iteration) +
                                                        cfg.k_samples);
        if (calls > bound || calls != trace.backend_calls)
            f.add(fmt::format("seed {}: {} calls, recorded {}, bound {}", seed, calls, trace.backend_calls, bound));
        const auto n = trace.iterations.size();
        if (n < 1 || n > static_cast<std::size_t>(cfg.max_iterations) + 1)
        {
            f.add(fmt::format("seed {}: {} iterations", seed, n));
            continue;
        }
        for (const auto& it: trace.iterations)
        {
            const auto& b = it.uncertainty;
            const double dot = cfg.alpha[0] * b.u_token + cfg.alpha[1] * b.u_attn + cfg.alpha[2] * b.u_sem +
                               cfg.alpha[3] * b.u_claim;
            if (std::abs(dot - b.u) > 1e-9)
                f.add(fmt::format("seed {}: u not reproducible from its components", seed));
        }
        const double last = trace.iterations.back().uncertainty.u;
        switch (trace.stop_reason)
        {
        case StopReason::converged_below_threshold:
            if (!(last < cfg.tau_u))
                f.add(fmt::format("seed {}: below-threshold stop with u={} tau={}", seed, last, cfg.tau_u));
            break;
        case StopReason::converged_delta:
            if (n < 2 || !(std::abs(last - trace.iterations[n - 2].uncertainty.u) < cfg.epsilon))
                f.add(fmt::format("seed {}: delta stop without a small change", seed));
            break;
        case StopReason::max_iterations:
            if (n != static_cast<std::size_t>(cfg.max_iterations) + 1)
                f.add(fmt::format("seed {}: max_iterations stop after {} iterations", seed, n));
            break;
        case StopReason::backend_error:
            if (trace.error.empty())
                f.add(fmt::format("seed {}: backend_error without a message", seed));
            break;
        }
        if (trace.stop_reason != StopReason::backend_error && trace.final_response != trace.iterations.back().response_text)
            f.add(fmt::format("seed {}: final response is not the last scored response", seed));
    }
    return f.summary();
}

std::string bayes_suite()
{
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Failures f;
    for (int i = 0; i < 10000; ++i)
    {
        const double prior = 1e-6 + (1 - 2e-6) * unit(rng);
        double a = unit(rng);
        double b = unit(rng);
        if (a == b)
            continue;
        if (a > b)
            std::swap(a, b);
        const double post = synth::bayes_update({prior, a, b});
        if (!(post < prior))
            f.add(fmt::format("prior {} P(E|H) {} P(E|~H) {} gave {}", prior, a, b, post));
    }
    const double worked = synth::bayes_update({0.85, 0.2, 0.8});
    if (std::abs(worked - 0.5862) > 1e-4)
        f.add(fmt::format("0.85/0.2/0.8 gave {}", worked));
    return f.summary();
}

std::string scale_dependence()
{
    const synth::DetectionModel det;
    Failures f;
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int i = 0; i < 1000; ++i)
    {
        const double area = 10.0 + unit(rng) * 20000.0;
        double mu = 1.0;
        double prev = det.detect_probability(area, mu);
        for (int s = 0; s < 20; ++s)
        {
            mu += 0.01 + unit(rng);
            const double p = det.detect_probability(area, mu);
            if (!(p > prev))
                f.add(fmt::format("area {}: p({}) = {} not above {}", area, mu, p, prev));
            prev = p;
        }
    }
    // Monte-Carlo through the simulator itself: a 1000 px^2 object seen at mu = 1.5.
    synth::Scene scene;
    scene.objects.push_back({"fork", {300, 200, 340, 225}, true});
    const CropSpec view = crop_at(320, 212.5, 1.5, scene.width, scene.height);
    const double p = synth::yes_probability(scene, view, "fork", det);
    const int trials = 10000;
    int yes = 0;
    for (int t = 0; t < trials; ++t)
        yes += synth::simulate_answer(scene, view, "fork", det, static_cast<std::uint64_t>(t) * 7919u + 1).response_text == "Yes";
    const double freq = static_cast<double>(yes) / trials;
    const double sigma = std::sqrt(p * (1 - p) / trials);
    if (std::abs(freq - p) > 2 * sigma)
        f.add(fmt::format("Monte-Carlo {:.4f} vs analytic {:.4f} (2 sigma = {:.4f})", freq, p, 2 * sigma));
    return f.summary();
}

struct EndToEnd
{
    eval::BenchmarkResult baseline;
    eval::BenchmarkResult corrected;
    double seconds = 0.0;
};

const EndToEnd& end_to_end()
{
    static const EndToEnd run = [] {
        EndToEnd r;
        const auto t0 = Clock::now();
        const auto cases = eval::bench_cases(synth::make_pope_cases(42, 200, synth::Split::adversarial));
        synth::SynthBackend backend(42);
        const TermFrequencyEmbedder emb;
        const eval::BenchOptions opts {1, 42};
        r.baseline = eval::run_benchmark(cases, eval::Pipeline::baseline, Config {}, backend, emb, opts);
        r.corrected = eval::run_benchmark(cases, eval::Pipeline::corrected, Config {}, backend, emb, opts);
        r.seconds = seconds_since(t0);
        return r;
    }();
    return run;
}

std::string end_to_end_benchmark()
{
    const auto& r = end_to_end();
    Failures f;
    const double gain = r.corrected.metrics.accuracy - r.baseline.metrics.accuracy;
    std::cout << fmt::format("  baseline accuracy {:.3f}, corrected {:.3f}, gain {:+.1f} pp, {:.1f} s\n",
                             r.baseline.metrics.accuracy, r.corrected.metrics.accuracy, 100 * gain, r.seconds);
    if (gain < 0.05 - 1e-12)
        f.add(fmt::format("gain {:.1f} pp below 5 pp", 100 * gain));
    std::vector<RefinementTrace> traces;
    for (const auto& c: r.corrected.cases)
        if (c.valid)
            traces.push_back(c.trace);
    const Config cfg;
    const auto conv = eval::convergence_report(traces, cfg.tau_u, cfg.max_iterations);
    for (std::size_t t = 1; t < conv.mean_u.size(); ++t)
        if (conv.mean_u[t] > conv.mean_u[t - 1] + 1e-12)
            f.add(fmt::format("mean u rises at t={}: {} -> {}", t, conv.mean_u[t - 1], conv.mean_u[t]));
    if (r.seconds >= 120.0)
        f.add(fmt::format("runtime {:.1f} s", r.seconds));
    if (r.corrected.invalid != 0 || r.baseline.invalid != 0)
        f.add("invalid cases in a synthetic run");
    return f.summary();
}

std::string ablation_ordering()
{
    const auto cases = eval::bench_cases(synth::make_pope_cases(42, 200, synth::Split::adversarial));
    synth::SynthBackend backend(42);
    const TermFrequencyEmbedder emb;
    const eval::BenchOptions opts {1, 42};
    eval::Report report;
    std::vector<double> acc;
    for (const auto p: {eval::Pipeline::corrected, eval::Pipeline::random_refinement,
                        eval::Pipeline::original_resolution})
    {
        const auto r = eval::run_benchmark(cases, p, Config {}, backend, emb, opts);
        acc.push_back(r.metrics.accuracy);
        report.ablation.push_back({std::string(eval::display_name(p)), r.metrics.accuracy});
    }
    std::cout << fmt::format("  full {:.3f}, random refinement {:.3f}, original resolution {:.3f}\n", acc[0], acc[1],
                             acc[2]);
    Failures f;
    if (acc[0] < acc[1])
        f.add("random refinement beats the full framework");
    if (acc[0] < acc[2])
        f.add("original resolution beats the full framework");
    const auto md = eval::render_report(report, eval::ReportFormat::markdown);
    std::size_t rows = 0;
    std::size_t pos = 0;
    while ((pos = md.find("\n| ", pos)) != std::string::npos)
    {
        ++pos;
        ++rows;
    }
    // Header plus three data rows (the separator line starts with "|-").
    if (rows != 4 || md.find("| Configuration | Accuracy (%) |") == std::string::npos)
        f.add(fmt::format("ablation table has {} '| ' rows:\n{}", rows, md));
    return f.summary();
}

std::string metrics_arithmetic()
{
    Failures f;
    auto confusion = [](std::size_t tp, std::size_t fp, std::size_t tn, std::size_t fn) {
        std::vector<std::pair<bool, bool>> r;
        r.insert(r.end(), tp, {true, true});
        r.insert(r.end(), fp, {true, false});
        r.insert(r.end(), tn, {false, false});
        r.insert(r.end(), fn, {false, true});
        return r;
    };
    const auto m = eval::pope_metrics(confusion(40, 10, 40, 10));
    if (m.accuracy != 0.8 || m.precision != 0.8 || m.recall != 0.8 || std::abs(m.f1 - 0.8) > 1e-15 ||
        m.yes_ratio != 0.5)
        f.add("40/10/40/10 example");
    const auto all_yes = eval::pope_metrics(confusion(50, 50, 0, 0));
    if (all_yes.precision != 0.5 || all_yes.recall != 1.0 || all_yes.yes_ratio != 1.0 || all_yes.accuracy != 0.5)
        f.add("all-yes example");
    const auto perfect = eval::pope_metrics(confusion(10, 0, 30, 0));
    if (perfect.accuracy != 1.0 || perfect.f1 != 1.0 || perfect.yes_ratio != 0.25)
        f.add("all-correct example");

    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int set = 0; set < 200; ++set)
    {
        std::vector<RefinementTrace> traces;
        const int n = 1 + static_cast<int>(unit(rng) * 30);
        for (int i = 0; i < n; ++i)
        {
            RefinementTrace t;
            const int len = 1 + static_cast<int>(unit(rng) * 5);
            for (int j = 0; j < len; ++j)
            {
                TraceIteration it;
                it.uncertainty.u = unit(rng);
                it.response_text = "Yes";
                t.iterations.push_back(it);
            }
            traces.push_back(t);
        }
        const auto rep = eval::convergence_report(traces, unit(rng), 1 + static_cast<int>(unit(rng) * 5));
        for (std::size_t t = 1; t < rep.convergence_rate.size(); ++t)
            if (rep.convergence_rate[t] < rep.convergence_rate[t - 1])
                f.add(fmt::format("trace set {}: convergence rate falls at t={}", set, t + 1));
    }

    eval::Report report;
    report.metrics = m;
    report.comparisons.push_back({"adversarial", all_yes, m});
    report.ablation = {{"Full framework", 0.8}, {"Random refinement", 0.75}, {"Orig. res. only", 0.7}};
    report.convergence = eval::convergence_report(
        std::vector<RefinementTrace> {RefinementTrace {"q", {TraceIteration {"Yes", {}, {}}}, {}, "Yes", 1, {}}}, 0.3,
        3);
    for (const auto fmt_kind:
         {eval::ReportFormat::json, eval::ReportFormat::csv, eval::ReportFormat::markdown, eval::ReportFormat::gnuplot})
        if (eval::render_report(report, fmt_kind) != eval::render_report(report, fmt_kind))
            f.add(fmt::format("format {} is not byte-deterministic", eval::extension(fmt_kind)));

    // Whole-benchmark determinism: the same run twice renders the same bytes.
    const auto cases = eval::bench_cases(synth::make_pope_cases(5, 30, synth::Split::popular));
    const TermFrequencyEmbedder emb;
    std::string bytes[2];
    for (auto& b: bytes)
    {
        synth::SynthBackend backend(5);
        eval::Report r;
        r.metrics = eval::run_benchmark(cases, eval::Pipeline::corrected, Config {}, backend, emb, {2, 5}).metrics;
        b = eval::render_report(r, eval::ReportFormat::json);
    }
    if (bytes[0] != bytes[1])
        f.add("benchmark report differs between identical runs");
    return f.summary();
}

std::string no_sidecar()
{
    Failures f;
    // Scripted fixture replay.
    auto scripted = ScriptedBackend::load(rt::source_path("fixtures/fork"));
    const TermFrequencyEmbedder emb;
    const auto trace = run_correction(Image {"opaque", "png"}, "Is there a fork in the image?", Config {}, scripted, emb);
    if (trace.iterations.size() != 2 || trace.final_response != "No" ||
        trace.stop_reason != StopReason::converged_below_threshold)
        f.add(fmt::format("fork fixture gave '{}' after {} iterations ({})", trace.final_response,
                          trace.iterations.size(), to_string(trace.stop_reason)));
    // Every other check above ran on scripted, synthetic or in-process test backends.
    const auto& e2e = end_to_end();
    if (e2e.corrected.cases.size() != 200)
        f.add("synthetic benchmark did not run");
    return f.summary();
}

} // namespace

int main()
{
    const std::vector<std::pair<std::string, std::function<std::string()>>> checks {
        {"uncertainty equations match brute-force references on 1000 inputs", equation_suite},
        {"unified score lies within component range (10000 draws)", convexity},
        {"underexplored regions are exactly the sub-threshold cells; rescaling invariant", saliency_threshold},
        {"crops stay in bounds and keep the magnification (10000 cases)", crop_geometry},
        {"refinement loop control, stop-reason invariants and call bound", loop_control},
        {"Bayesian update lowers belief on contrary evidence; 0.85/0.2/0.8 -> 0.5862", bayes_suite},
        {"detection probability increases with scale; Monte-Carlo within 2 sigma", scale_dependence},
        {"synthetic benchmark: corrected beats baseline by >= 5 pp, mean u non-increasing", end_to_end_benchmark},
        {"ablation ordering and three-row table", ablation_ordering},
        {"metrics arithmetic, monotone convergence rates, deterministic reports", metrics_arithmetic},
        {"primary suite needs no sidecar", no_sidecar},
    };
    int failed = 0;
    for (const auto& [name, check]: checks)
    {
        std::string problem;
        try
        {
            problem = check();
        }
        catch (const std::exception& e)
        {
            problem = fmt::format("exception: {}", e.what());
        }
        if (problem.empty())
            std::cout << "PASS " << name << '\n';
        else
        {
            ++failed;
            std::cout << "FAIL " << name << ": " << problem << '\n';
        }
        std::cout.flush();
    }
    std::cout << fmt::format("{} of {} acceptance checks passed\n", checks.size() - failed, checks.size());
    return failed == 0 ? 0 : 1;
}
