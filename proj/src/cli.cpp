// SPDX-License-Identifier: Apache-2.0
#include <recheck/cli.hpp>
#include <recheck/eval.hpp>
#include <recheck/refine.hpp>
#include <recheck/synthworld.hpp>

#include <CLI11.hpp>
#include <fmt/format.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>

namespace recheck::cli
{

namespace fs = std::filesystem;

namespace
{

class UsageError: public std::runtime_error
{
  public:
    using std::runtime_error::runtime_error;
};

} // namespace

BackendHandle make_backend(std::string_view spec)
{
    const auto colon = spec.find(':');
    if (colon == std::string_view::npos)
        throw UsageError(fmt::format("backend '{}' must be scripted:PATH, remote:URL or synth:SEED", spec));
    BackendHandle h;
    h.kind = std::string(spec.substr(0, colon));
    const std::string arg(spec.substr(colon + 1));
    if (h.kind == "scripted")
    {
        h.backend = std::make_unique<ScriptedBackend>(ScriptedBackend::load(arg));
        h.embedder = std::make_unique<TermFrequencyEmbedder>();
    }
    else if (h.kind == "remote")
    {
        h.backend = std::make_unique<RemoteBackend>(arg);
        const auto probe = h.backend->embed("dimension probe");
        h.embedder = std::make_unique<BackendEmbedder>(*h.backend, probe.size());
    }
    else if (h.kind == "synth")
    {
        try
        {
            std::size_t used = 0;
            h.seed = std::stoull(arg, &used);
            if (used != arg.size())
                throw std::invalid_argument(arg);
        }
        catch (const std::exception&)
        {
            throw UsageError(fmt::format("synth seed '{}' is not a non-negative integer", arg));
        }
        h.backend = std::make_unique<synth::SynthBackend>(h.seed);
        h.embedder = std::make_unique<TermFrequencyEmbedder>();
    }
    else
        throw UsageError(fmt::format("unknown backend kind '{}' (scripted, remote, synth)", h.kind));
    return h;
}

namespace
{

struct Common
{
    std::string backend;
    std::string config_path;
    std::string out_dir = ".";
    int parallel = 1;
    std::optional<int> max_iterations;
    std::optional<int> crops;
    std::optional<double> tau_u;
    std::optional<double> epsilon;
    std::optional<int> k_samples;
};

void add_common(CLI::App& sub, Common& c, bool needs_backend)
{
    auto* b = sub.add_option("--backend", c.backend, "scripted:PATH | remote:URL | synth:SEED");
    if (needs_backend)
        b->required();
    sub.add_option("--config", c.config_path, "JSON config file (missing keys keep defaults)")
        ->check(CLI::ExistingFile);
    sub.add_option("--out", c.out_dir, "output directory");
    sub.add_option("--parallel", c.parallel, "concurrent cases")->check(CLI::PositiveNumber);
    sub.add_option("--max-iterations", c.max_iterations, "T");
    sub.add_option("--crops", c.crops, "K, crops per iteration");
    sub.add_option("--tau-u", c.tau_u, "convergence threshold");
    sub.add_option("--epsilon", c.epsilon, "minimum uncertainty change");
    sub.add_option("--k-samples", c.k_samples, "semantic-consistency samples");
}

Config load_config(const Common& c)
{
    Config cfg;
    if (!c.config_path.empty())
    {
        std::ifstream in(c.config_path);
        if (!in)
            throw UsageError(fmt::format("cannot open config '{}'", c.config_path));
        try
        {
            json::parse(in).get_to(cfg);
        }
        catch (const json::exception& e)
        {
            throw UsageError(fmt::format("config '{}': {}", c.config_path, e.what()));
        }
    }
    if (c.max_iterations)
        cfg.max_iterations = *c.max_iterations;
    if (c.crops)
        cfg.crops_per_iteration = *c.crops;
    if (c.tau_u)
        cfg.tau_u = *c.tau_u;
    if (c.epsilon)
        cfg.epsilon = *c.epsilon;
    if (c.k_samples)
        cfg.k_samples = *c.k_samples;
    return validate_config(cfg);
}

fs::path out_dir(const Common& c)
{
    fs::path p(c.out_dir);
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec)
        throw UsageError(fmt::format("cannot create output directory '{}': {}", c.out_dir, ec.message()));
    return p;
}

void write_file(const fs::path& path, const std::string& bytes)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw UsageError(fmt::format("cannot write '{}'", path.string()));
    out << bytes;
}

struct CaseSource
{
    std::string cases_path;
    std::string image_dir;
    std::size_t n = 200;
    std::string split = "adversarial";
};

void add_cases(CLI::App& sub, CaseSource& s)
{
    sub.add_option("--cases", s.cases_path, "POPE JSON-lines file (default: synthetic cases)");
    sub.add_option("--image-dir", s.image_dir, "directory the POPE image names resolve against");
    sub.add_option("--n", s.n, "synthetic case count")->check(CLI::PositiveNumber);
    sub.add_option("--split", s.split, "synthetic split: random, popular, adversarial");
}

std::vector<eval::BenchCase> load_cases(const CaseSource& s, const BackendHandle& h)
{
    if (!s.cases_path.empty())
        return eval::load_pope_jsonl(s.cases_path, s.image_dir.empty() ? fs::path(s.cases_path).parent_path().string()
                                                                        : s.image_dir);
    if (h.kind != "synth")
        throw UsageError("--cases is required unless the backend is synth:SEED");
    const auto cases = synth::make_pope_cases(h.seed, s.n, synth::split_from_string(s.split));
    return eval::bench_cases(cases);
}

std::string metrics_json(const eval::BenchmarkResult& r)
{
    nlohmann::ordered_json j = nlohmann::ordered_json::parse(json(r.metrics).dump());
    j["pipeline"] = std::string(eval::to_string(r.pipeline));
    j["valid"] = r.cases.size() - r.invalid;
    j["invalid"] = r.invalid;
    return j.dump(2) + "\n";
}

void write_traces(const fs::path& path, const eval::BenchmarkResult& r)
{
    json arr = json::array();
    for (const auto& c: r.cases)
        if (c.valid && !c.trace.iterations.empty())
            arr.push_back(json {{"id", c.id}, {"truth", c.truth}, {"trace", c.trace}});
    write_file(path, arr.dump(2) + "\n");
}

std::optional<eval::ConvergenceReport> convergence_of(const eval::BenchmarkResult& r, const Config& cfg)
{
    std::vector<RefinementTrace> traces;
    std::vector<bool> truths;
    for (const auto& c: r.cases)
        if (c.valid && !c.trace.iterations.empty())
        {
            traces.push_back(c.trace);
            truths.push_back(c.truth);
        }
    if (traces.empty())
        return std::nullopt;
    return eval::convergence_report(traces, cfg.tau_u, cfg.max_iterations, [&](std::size_t i, std::string_view resp) {
        return eval::parse_yes_no(resp) == truths[i];
    });
}

int cmd_run(const Common& c, const std::string& image_path, const std::string& question, std::ostream& out)
{
    const auto cfg = load_config(c);
    auto handle = make_backend(c.backend);
    Image image;
    try
    {
        image = read_image_file(image_path);
    }
    catch (const std::runtime_error& e)
    {
        throw UsageError(e.what());
    }
    const auto trace = run_correction(image, question, cfg, *handle.backend, *handle.embedder);
    const auto path = out_dir(c) / "run.trace.json";
    write_trace_file(path.string(), trace);
    out << trace.final_response << '\n';
    out << fmt::format("stop_reason={} iterations={} backend_calls={} trace={}\n", to_string(trace.stop_reason),
                       trace.iterations.size(), trace.backend_calls, path.string());
    return trace.stop_reason == StopReason::backend_error ? backend_failure : ok;
}

int cmd_bench(const Common& c, const CaseSource& src, const std::string& pipeline_name, bool compare, std::ostream& out)
{
    const auto cfg = load_config(c);
    auto handle = make_backend(c.backend);
    const auto pipeline = eval::pipeline_from_string(pipeline_name);
    const auto cases = load_cases(src, handle);
    const eval::BenchOptions opts {c.parallel, handle.seed};
    const auto result = eval::run_benchmark(cases, pipeline, cfg, *handle.backend, *handle.embedder, opts);
    const auto dir = out_dir(c);

    const auto mj = metrics_json(result);
    write_file(dir / "metrics.json", mj);
    write_traces(dir / "traces.json", result);

    eval::Report report;
    report.metrics = result.metrics;
    report.convergence = convergence_of(result, cfg);
    if (compare && pipeline != eval::Pipeline::baseline)
    {
        const auto base = eval::run_benchmark(cases, eval::Pipeline::baseline, cfg, *handle.backend, *handle.embedder,
                                              opts);
        report.comparisons.push_back(
            {src.cases_path.empty() ? src.split : fs::path(src.cases_path).stem().string(), base.metrics,
             result.metrics});
    }
    eval::emit_report(report, eval::ReportFormat::markdown, (dir / "report.md").string());
    eval::emit_report(report, eval::ReportFormat::json, (dir / "report.json").string());
    if (report.convergence)
        eval::emit_report(report, eval::ReportFormat::gnuplot, (dir / "convergence.dat").string());
    out << mj;
    return ok;
}

int cmd_ablate(const Common& c, const CaseSource& src, bool with_nosem, std::ostream& out)
{
    const auto cfg = load_config(c);
    auto handle = make_backend(c.backend);
    const auto cases = load_cases(src, handle);
    const eval::BenchOptions opts {c.parallel, handle.seed};
    std::vector<eval::Pipeline> variants {eval::Pipeline::corrected, eval::Pipeline::random_refinement,
                                          eval::Pipeline::original_resolution};
    if (with_nosem)
        variants.push_back(eval::Pipeline::no_semantic);
    eval::Report report;
    for (const auto p: variants)
    {
        const auto r = eval::run_benchmark(cases, p, cfg, *handle.backend, *handle.embedder, opts);
        report.ablation.push_back({std::string(eval::display_name(p)), r.metrics.accuracy});
    }
    const auto dir = out_dir(c);
    eval::emit_report(report, eval::ReportFormat::markdown, (dir / "ablation.md").string());
    eval::emit_report(report, eval::ReportFormat::json, (dir / "ablation.json").string());
    out << eval::render_report(report, eval::ReportFormat::markdown);
    return ok;
}

int cmd_simulate(const Common& c, std::uint64_t seed, std::size_t trials, std::size_t n, std::ostream& out)
{
    const auto cfg = load_config(c);
    const synth::DetectionModel det;
    const std::vector<double> scales {1.0, 1.25, 1.5, 2.0, 3.0};
    const std::vector<double> areas {0.25, 0.5, 1.0, 2.0};

    nlohmann::ordered_json doc;
    doc["theta_small"] = det.theta_small;
    doc["base_rate"] = det.base_rate;
    auto rows = nlohmann::ordered_json::array();
    std::string md = "### Detection probability\n\n| Area / theta_small | mu | Analytic | Monte-Carlo |\n|---|---|---|---|\n";
    for (const double a: areas)
        for (const double mu: scales)
        {
            const double p = det.detect_probability(a * det.theta_small, mu);
            std::mt19937_64 rng(seed);
            std::bernoulli_distribution draw(p);
            std::size_t hits = 0;
            for (std::size_t i = 0; i < trials; ++i)
                hits += draw(rng) ? 1 : 0;
            const double mc = static_cast<double>(hits) / static_cast<double>(trials);
            rows.push_back({{"area_rel", a}, {"scale", mu}, {"analytic", p}, {"monte_carlo", mc}});
            md += fmt::format("| {:.2f} | {:.2f} | {:.4f} | {:.4f} |\n", a, mu, p, mc);
        }
    doc["detection"] = std::move(rows);

    auto sweep = nlohmann::ordered_json::array();
    md += "\n### Threshold sweep (adversarial)\n\n| tau_u | Baseline acc (%) | Corrected acc (%) | Mean calls |\n|---|---|---|---|\n";
    synth::SynthBackend backend(seed);
    const TermFrequencyEmbedder embedder;
    const auto cases = eval::bench_cases(synth::make_pope_cases(seed, n, synth::Split::adversarial));
    const auto base = eval::run_benchmark(cases, eval::Pipeline::baseline, cfg, backend, embedder, {c.parallel, seed});
    for (const double tau: {0.2, 0.3, 0.4})
    {
        Config swept = cfg;
        swept.tau_u = tau;
        const auto r = eval::run_benchmark(cases, eval::Pipeline::corrected, swept, backend, embedder, {c.parallel, seed});
        double calls = 0.0;
        for (const auto& k: r.cases)
            calls += static_cast<double>(k.trace.backend_calls);
        calls /= static_cast<double>(r.cases.size());
        sweep.push_back({{"tau_u", tau}, {"baseline_accuracy", base.metrics.accuracy},
                         {"corrected_accuracy", r.metrics.accuracy}, {"mean_backend_calls", calls}});
        md += fmt::format("| {:.2f} | {:.1f} | {:.1f} | {:.2f} |\n", tau, 100.0 * base.metrics.accuracy,
                          100.0 * r.metrics.accuracy, calls);
    }
    doc["threshold_sweep"] = std::move(sweep);
    const auto dir = out_dir(c);
    write_file(dir / "simulate.json", doc.dump(2) + "\n");
    write_file(dir / "simulate.md", md);
    out << md;
    return ok;
}

std::vector<RefinementTrace> read_traces(const std::vector<std::string>& inputs)
{
    std::vector<fs::path> files;
    for (const auto& in: inputs)
    {
        if (fs::is_directory(in))
        {
            std::vector<fs::path> found;
            for (const auto& e: fs::directory_iterator(in))
            {
                const auto name = e.path().filename().string();
                if (name.ends_with(".trace.json") || name == "traces.json")
                    found.push_back(e.path());
            }
            std::sort(found.begin(), found.end());
            files.insert(files.end(), found.begin(), found.end());
        }
        else
            files.emplace_back(in);
    }
    std::vector<RefinementTrace> traces;
    for (const auto& f: files)
    {
        std::ifstream in(f);
        if (!in)
            throw UsageError(fmt::format("cannot open '{}'", f.string()));
        const auto doc = json::parse(in);
        if (doc.is_array())
            for (const auto& e: doc)
                traces.push_back((e.contains("trace") ? e.at("trace") : e).get<RefinementTrace>());
        else
            traces.push_back(doc.get<RefinementTrace>());
    }
    if (traces.empty())
        throw UsageError("no traces found");
    return traces;
}

int cmd_report(const Common& c, const std::vector<std::string>& inputs, const std::string& format, std::ostream& out)
{
    const auto cfg = load_config(c);
    const auto traces = read_traces(inputs);
    const auto fmt_kind = eval::report_format_from_string(format);
    eval::Report report;
    report.convergence = eval::convergence_report(traces, cfg.tau_u, cfg.max_iterations);
    const auto bytes = eval::render_report(report, fmt_kind);
    write_file(out_dir(c) / fmt::format("report{}", eval::extension(fmt_kind)), bytes);
    out << bytes;
    return ok;
}

} // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err)
{
    CLI::App app {"Uncertainty-guided self-correction for vision-language models", "recheck"};
    app.require_subcommand(1);

    Common common;
    auto* run = app.add_subcommand("run", "correct one image + question and write run.trace.json");
    add_common(*run, common, true);
    std::string image;
    std::string question;
    run->add_option("--image", image, "image file (png, jpeg, or scene .json)")->required();
    run->add_option("--question", question, "question to ask")->required();

    auto* bench = app.add_subcommand("bench", "evaluate a pipeline on POPE-style cases");
    add_common(*bench, common, true);
    CaseSource src;
    add_cases(*bench, src);
    std::string pipeline = "corrected";
    bool compare = false;
    bench->add_option("--pipeline", pipeline, "baseline, corrected, random, origres, nosem");
    bench->add_flag("--compare", compare, "also run the baseline and render the comparison table");

    auto* ablate = app.add_subcommand("ablate", "full framework vs. ablation variants on the same cases");
    add_common(*ablate, common, true);
    add_cases(*ablate, src);
    bool with_nosem = false;
    ablate->add_flag("--with-nosem", with_nosem, "add the no-semantic-consistency variant");

    auto* simulate = app.add_subcommand("simulate", "synthetic-world sweeps over scale and thresholds");
    add_common(*simulate, common, false);
    std::uint64_t sim_seed = 42;
    std::size_t trials = 10000;
    std::size_t sim_n = 100;
    simulate->add_option("--seed", sim_seed, "generator seed");
    simulate->add_option("--trials", trials, "Monte-Carlo trials per cell")->check(CLI::PositiveNumber);
    simulate->add_option("--n", sim_n, "cases per threshold")->check(CLI::PositiveNumber);

    auto* report = app.add_subcommand("report", "render stored traces");
    add_common(*report, common, false);
    std::vector<std::string> inputs;
    std::string format = "markdown";
    report->add_option("inputs", inputs, "trace files or directories")->required();
    report->add_option("--format", format, "json, csv, markdown, gnuplot");

    try
    {
        app.parse(argc, argv);
    }
    catch (const CLI::CallForHelp& e)
    {
        out << app.help();
        return ok;
    }
    catch (const CLI::ParseError& e)
    {
        err << "error: " << e.what() << "\n\n" << app.help();
        return usage_error;
    }

    try
    {
        if (*run)
            return cmd_run(common, image, question, out);
        if (*bench)
            return cmd_bench(common, src, pipeline, compare, out);
        if (*ablate)
            return cmd_ablate(common, src, with_nosem, out);
        if (*simulate)
            return cmd_simulate(common, sim_seed, trials, sim_n, out);
        if (*report)
            return cmd_report(common, inputs, format, out);
    }
    catch (const BackendError& e)
    {
        err << "backend error: " << e.what() << '\n';
        return backend_failure;
    }
    catch (const UsageError& e)
    {
        err << "error: " << e.what() << '\n';
        return usage_error;
    }
    catch (const ValidationError& e)
    {
        err << "error: " << e.what() << '\n';
        return usage_error;
    }
    catch (const std::exception& e)
    {
        err << "error: " << e.what() << '\n';
        return usage_error;
    }
    return usage_error;
}

} // namespace recheck::cli
