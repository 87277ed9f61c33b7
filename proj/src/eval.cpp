// SPDX-License-Identifier: Apache-2.0
#include <recheck/eval.hpp>
#include <recheck/text.hpp>

#include <fmt/format.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

namespace recheck::eval
{

PopeMetrics metrics_from_counts(std::size_t tp, std::size_t fp, std::size_t tn, std::size_t fn)
{
    PopeMetrics m {tp, fp, tn, fn};
    const auto n = static_cast<double>(tp + fp + tn + fn);
    if (n == 0)
        throw ValidationError("metrics need at least one result");
    const auto ratio = [&](std::size_t num, std::size_t den) {
        if (den == 0)
        {
            m.degenerate = true;
            return 0.0;
        }
        return static_cast<double>(num) / static_cast<double>(den);
    };
    m.accuracy = static_cast<double>(tp + tn) / n;
    m.precision = ratio(tp, tp + fp);
    m.recall = ratio(tp, tp + fn);
    if (m.precision + m.recall > 0.0)
        m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
    else
        m.degenerate = true;
    m.yes_ratio = static_cast<double>(tp + fp) / n;
    return m;
}

PopeMetrics pope_metrics(std::span<const std::pair<bool, bool>> results)
{
    if (results.empty())
        throw ValidationError("pope_metrics needs at least one result");
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    for (const auto& [pred, truth]: results)
    {
        if (pred && truth)
            ++tp;
        else if (pred)
            ++fp;
        else if (truth)
            ++fn;
        else
            ++tn;
    }
    return metrics_from_counts(tp, fp, tn, fn);
}

void to_json(json& j, const PopeMetrics& m)
{
    j = json {{"accuracy", m.accuracy}, {"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1},
              {"yes_ratio", m.yes_ratio}, {"tp", m.tp},               {"fp", m.fp},         {"tn", m.tn},
              {"fn", m.fn},             {"degenerate", m.degenerate}};
}

void from_json(const json& j, PopeMetrics& m)
{
    m = metrics_from_counts(j.at("tp").get<std::size_t>(), j.at("fp").get<std::size_t>(), j.at("tn").get<std::size_t>(),
                            j.at("fn").get<std::size_t>());
}

bool parse_yes_no(std::string_view answer)
{
    const auto w = text::words(answer);
    if (w.empty())
        return false;
    if (w.front() == "yes")
        return true;
    if (w.front() == "no")
        return false;
    for (const auto& x: w)
        if (x == "no" || x == "not" || x == "none" || x.ends_with("n't"))
            return false;
    return std::find(w.begin(), w.end(), "yes") != w.end();
}

const std::vector<std::string>& hallucination_categories()
{
    static const std::vector<std::string> c {"attribute", "count", "relation", "existence"};
    return c;
}

HallucinationRate hallucination_rate(std::span<const Annotation> annotations)
{
    if (annotations.empty())
        throw ValidationError("hallucination_rate needs at least one annotation");
    HallucinationRate r;
    for (const auto& c: hallucination_categories())
        r.per_category[c] = {};
    for (const auto& a: annotations)
    {
        if (std::find(hallucination_categories().begin(), hallucination_categories().end(), a.category) ==
            hallucination_categories().end())
            throw ValidationError(fmt::format("case '{}': unknown category '{}'", a.case_id, a.category));
        auto& cat = r.per_category[a.category];
        ++r.total;
        ++cat.total;
        if (a.hallucinated)
        {
            ++r.hallucinated;
            ++cat.hallucinated;
        }
    }
    r.rate = static_cast<double>(r.hallucinated) / static_cast<double>(r.total);
    for (auto& [_, cat]: r.per_category)
        cat.rate = cat.total == 0 ? 0.0 : static_cast<double>(cat.hallucinated) / static_cast<double>(cat.total);
    return r;
}

std::vector<Annotation> parse_annotations_csv(std::string_view content)
{
    std::vector<Annotation> out;
    std::istringstream in {std::string(content)};
    std::string line;
    int lineno = 0;
    bool header = true;
    while (std::getline(in, line))
    {
        ++lineno;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (text::is_blank(line))
            continue;
        if (header)
        {
            header = false;
            if (text::lowercase(text::trim(line)) != "case_id,hallucinated,category")
                throw ValidationError("annotation header must be 'case_id,hallucinated,category'");
            continue;
        }
        std::vector<std::string> fields;
        std::stringstream row(line);
        std::string f;
        while (std::getline(row, f, ','))
            fields.emplace_back(text::trim(f));
        if (fields.size() != 3)
            throw ValidationError(fmt::format("annotations line {}: expected 3 fields", lineno));
        const auto flag = text::lowercase(fields[1]);
        Annotation a;
        a.case_id = fields[0];
        if (flag == "true" || flag == "1")
            a.hallucinated = true;
        else if (flag == "false" || flag == "0")
            a.hallucinated = false;
        else
            throw ValidationError(fmt::format("annotations line {}: bad hallucinated flag '{}'", lineno, fields[1]));
        a.category = text::lowercase(fields[2]);
        out.push_back(std::move(a));
    }
    return out;
}

std::vector<Annotation> load_annotations_csv(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error(fmt::format("cannot open annotations '{}'", path));
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_annotations_csv(buf.str());
}

std::vector<BenchCase> bench_cases(std::span<const synth::PopeCase> cases)
{
    std::vector<BenchCase> out;
    out.reserve(cases.size());
    for (const auto& c: cases)
        out.push_back({c.id, synth::scene_image(c.scene), c.question, c.truth});
    return out;
}

std::vector<BenchCase> load_pope_jsonl(const std::string& path, const std::string& image_dir)
{
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error(fmt::format("cannot open POPE file '{}'", path));
    std::vector<BenchCase> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line))
    {
        ++lineno;
        if (text::is_blank(line))
            continue;
        try
        {
            const auto j = json::parse(line);
            BenchCase c;
            const auto& qid = j.at("question_id");
            c.id = qid.is_string() ? qid.get<std::string>() : qid.dump();
            c.question = j.at("text").get<std::string>();
            const auto label = text::lowercase(j.at("label").get<std::string>());
            if (label != "yes" && label != "no")
                throw ValidationError(fmt::format("label must be yes or no, got '{}'", label));
            c.truth = label == "yes";
            c.image = read_image_file((std::filesystem::path(image_dir) / j.at("image").get<std::string>()).string());
            out.push_back(std::move(c));
        }
        catch (const json::exception& e)
        {
            throw ValidationError(fmt::format("{}:{}: {}", path, lineno, e.what()));
        }
    }
    return out;
}

std::string_view to_string(Pipeline p) noexcept
{
    switch (p)
    {
    case Pipeline::baseline:
        return "baseline";
    case Pipeline::corrected:
        return "corrected";
    case Pipeline::random_refinement:
        return "random";
    case Pipeline::original_resolution:
        return "origres";
    case Pipeline::no_semantic:
        return "nosem";
    }
    return "corrected";
}

Pipeline pipeline_from_string(std::string_view s)
{
    for (auto p: {Pipeline::baseline, Pipeline::corrected, Pipeline::random_refinement, Pipeline::original_resolution,
                  Pipeline::no_semantic})
        if (to_string(p) == s)
            return p;
    throw ValidationError(fmt::format("unknown pipeline '{}' (baseline, corrected, random, origres, nosem)", s));
}

std::string_view display_name(Pipeline p) noexcept
{
    switch (p)
    {
    case Pipeline::baseline:
        return "Baseline";
    case Pipeline::corrected:
        return "Full framework";
    case Pipeline::random_refinement:
        return "Random refinement";
    case Pipeline::original_resolution:
        return "Orig. res. only";
    case Pipeline::no_semantic:
        return "No semantic consistency";
    }
    return "";
}

std::pair<Config, CorrectionOptions> pipeline_setup(Pipeline p, const Config& cfg, std::uint64_t seed)
{
    Config c = cfg;
    CorrectionOptions o;
    o.seed = seed;
    if (p == Pipeline::random_refinement)
        o.uncertainty_guided_regions = false;
    else if (p == Pipeline::original_resolution)
        o.multi_scale = false;
    else if (p == Pipeline::no_semantic)
    {
        const double rest = 1.0 - c.alpha[2];
        if (rest <= 0.0)
            throw ValidationError("cannot drop the semantic component when it carries all the weight");
        for (std::size_t i = 0; i < 4; ++i)
            c.alpha[i] = i == 2 ? 0.0 : c.alpha[i] / rest;
        c.k_samples = 0;
    }
    return {c, o};
}

namespace
{

CaseOutcome run_case(const BenchCase& bc, Pipeline pipeline, const Config& cfg, const CorrectionOptions& options,
                     Backend& backend, const Embedder& embedder)
{
    CaseOutcome out;
    out.id = bc.id;
    out.truth = bc.truth;
    try
    {
        if (pipeline == Pipeline::baseline)
        {
            GenerateRequest req;
            req.image = bc.image;
            req.prompt = bc.question;
            req.max_tokens = cfg.max_tokens;
            req.top_k = cfg.top_k;
            const auto gen = backend.generate(req);
            out.trace.question = bc.question;
            out.trace.final_response = gen.response_text;
            out.trace.backend_calls = 1;
        }
        else
            out.trace = run_correction(bc.image, bc.question, cfg, backend, embedder, options);
        if (out.trace.stop_reason == StopReason::backend_error)
        {
            out.error = out.trace.error;
            return out;
        }
        out.valid = true;
        out.predicted = parse_yes_no(out.trace.final_response);
    }
    catch (const BackendError& e)
    {
        out.error = e.what();
    }
    return out;
}

} // namespace

BenchmarkResult run_benchmark(std::span<const BenchCase> cases, Pipeline pipeline, const Config& cfg_in,
                              Backend& backend, const Embedder& embedder, const BenchOptions& opts)
{
    if (cases.empty())
        throw ValidationError("run_benchmark needs at least one case");
    const auto [cfg, options] = pipeline_setup(pipeline, validate_config(cfg_in), opts.seed);

    BenchmarkResult result;
    result.pipeline = pipeline;
    result.cases.resize(cases.size());
    const auto workers = static_cast<std::size_t>(std::clamp<int>(opts.parallel, 1, 256));
    if (workers == 1)
    {
        for (std::size_t i = 0; i < cases.size(); ++i)
            result.cases[i] = run_case(cases[i], pipeline, cfg, options, backend, embedder);
    }
    else
    {
        std::atomic<std::size_t> next {0};
        std::exception_ptr failure;
        std::mutex failure_mutex;
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < std::min(workers, cases.size()); ++w)
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < cases.size(); i = next++)
                {
                    try
                    {
                        result.cases[i] = run_case(cases[i], pipeline, cfg, options, backend, embedder);
                    }
                    catch (...)
                    {
                        const std::lock_guard lock(failure_mutex);
                        if (!failure)
                            failure = std::current_exception();
                    }
                }
            });
        for (auto& t: pool)
            t.join();
        if (failure)
            std::rethrow_exception(failure);
    }

    std::vector<std::pair<bool, bool>> pairs;
    for (const auto& c: result.cases)
    {
        if (c.valid)
            pairs.emplace_back(c.predicted, c.truth);
        else
            ++result.invalid;
    }
    if (pairs.empty())
    {
        const auto& first = result.cases.front();
        throw ValidationError(
            fmt::format("no valid cases ({} invalid; first: {}: {})", result.invalid, first.id, first.error));
    }
    result.metrics = pope_metrics(pairs);
    return result;
}

ConvergenceReport convergence_report(std::span<const RefinementTrace> traces, double tau_u, int max_iterations,
                                     const AccuracyFn& accuracy_fn)
{
    if (traces.empty())
        throw ValidationError("convergence_report needs at least one trace");
    if (max_iterations < 0)
        throw ValidationError("max_iterations must be non-negative");
    std::size_t horizon = static_cast<std::size_t>(max_iterations) + 1;
    for (const auto& t: traces)
        horizon = std::max(horizon, t.iterations.size());

    ConvergenceReport r;
    r.tau_u = tau_u;
    r.traces = traces.size();
    r.mean_u.assign(horizon, 0.0);
    r.std_u.assign(horizon, 0.0);
    r.convergence_rate.assign(horizon - 1, 0.0);
    if (accuracy_fn)
        r.accuracy.assign(horizon, 0.0);

    const auto n = static_cast<double>(traces.size());
    std::vector<std::vector<double>> u(traces.size(), std::vector<double>(horizon, 0.0));
    for (std::size_t i = 0; i < traces.size(); ++i)
    {
        const auto& its = traces[i].iterations;
        if (its.empty())
            throw ValidationError(fmt::format("trace {} has no iterations", i));
        bool converged = false;
        for (std::size_t t = 0; t < horizon; ++t)
        {
            const auto& it = its[std::min(t, its.size() - 1)];
            u[i][t] = it.uncertainty.u;
            converged = converged || u[i][t] < tau_u;
            if (t > 0 && converged)
                r.convergence_rate[t - 1] += 1.0;
            if (accuracy_fn && accuracy_fn(i, it.response_text))
                r.accuracy[t] += 1.0;
        }
    }
    for (std::size_t t = 0; t < horizon; ++t)
    {
        double sum = 0.0;
        for (const auto& row: u)
            sum += row[t];
        const double mean = sum / n;
        double sq = 0.0;
        for (const auto& row: u)
            sq += (row[t] - mean) * (row[t] - mean);
        r.mean_u[t] = mean;
        r.std_u[t] = std::sqrt(sq / n);
    }
    for (auto& v: r.convergence_rate)
        v /= n;
    for (auto& v: r.accuracy)
        v /= n;
    return r;
}

void to_json(json& j, const ConvergenceReport& r)
{
    j = json {{"tau_u", r.tau_u},   {"traces", r.traces},
              {"mean_u", r.mean_u}, {"std_u", r.std_u},
              {"convergence_rate", r.convergence_rate}, {"accuracy", r.accuracy}};
}

ReportFormat report_format_from_string(std::string_view s)
{
    if (s == "json")
        return ReportFormat::json;
    if (s == "csv")
        return ReportFormat::csv;
    if (s == "markdown" || s == "md")
        return ReportFormat::markdown;
    if (s == "gnuplot" || s == "dat")
        return ReportFormat::gnuplot;
    throw ValidationError(fmt::format("unknown report format '{}' (json, csv, markdown, gnuplot)", s));
}

std::string_view extension(ReportFormat f) noexcept
{
    switch (f)
    {
    case ReportFormat::json:
        return ".json";
    case ReportFormat::csv:
        return ".csv";
    case ReportFormat::markdown:
        return ".md";
    case ReportFormat::gnuplot:
        return ".dat";
    }
    return ".txt";
}

namespace
{

std::string pct(double v) { return fmt::format("{:.1f}", 100.0 * v); }
std::string signed_pct(double v) { return fmt::format("{:+.1f}", 100.0 * v); }

struct MetricField
{
    const char* label;
    double PopeMetrics::*field;
};

constexpr MetricField metric_fields[] = {
    {"Accuracy (%)", &PopeMetrics::accuracy}, {"Precision (%)", &PopeMetrics::precision},
    {"Recall (%)", &PopeMetrics::recall},     {"F1-Score (%)", &PopeMetrics::f1},
    {"Yes-Ratio (%)", &PopeMetrics::yes_ratio},
};

std::string render_markdown(const Report& r)
{
    std::string out;
    auto section = [&](std::string_view title) {
        if (!out.empty())
            out += '\n';
        out += fmt::format("### {}\n\n", title);
    };
    if (!r.comparisons.empty())
    {
        section("POPE results");
        out += "| Split | Metric | Baseline | Ours | Improvement |\n";
        out += "|---|---|---|---|---|\n";
        for (const auto& c: r.comparisons)
            for (const auto& f: metric_fields)
                out += fmt::format("| {} | {} | {} | {} | {} |\n", c.split, f.label, pct(c.baseline.*f.field),
                                   pct(c.ours.*f.field), signed_pct(c.ours.*f.field - c.baseline.*f.field));
    }
    if (!r.ablation.empty())
    {
        section("Ablation");
        out += "| Configuration | Accuracy (%) | Δ vs Full |\n";
        out += "|---|---|---|\n";
        const double ref = r.ablation.front().accuracy;
        for (std::size_t i = 0; i < r.ablation.size(); ++i)
            out += fmt::format("| {} | {} | {} |\n", r.ablation[i].configuration, pct(r.ablation[i].accuracy),
                               i == 0 ? std::string("-") : signed_pct(r.ablation[i].accuracy - ref));
    }
    if (r.metrics)
    {
        section("Metrics");
        out += "| Metric | Value |\n|---|---|\n";
        for (const auto& f: metric_fields)
            out += fmt::format("| {} | {} |\n", f.label, pct((*r.metrics).*f.field));
        out += fmt::format("| TP / FP / TN / FN | {} / {} / {} / {} |\n", r.metrics->tp, r.metrics->fp, r.metrics->tn,
                           r.metrics->fn);
    }
    if (r.convergence)
    {
        const auto& c = *r.convergence;
        section("Convergence");
        out += "| Iteration | Mean u | Std u | Converged (%) | Accuracy (%) |\n";
        out += "|---|---|---|---|---|\n";
        for (std::size_t t = 0; t < c.mean_u.size(); ++t)
            out += fmt::format("| {} | {:.4f} | {:.4f} | {} | {} |\n", t, c.mean_u[t], c.std_u[t],
                               t == 0 ? std::string("-") : pct(c.convergence_rate[t - 1]),
                               c.accuracy.empty() ? std::string("-") : pct(c.accuracy[t]));
    }
    return out;
}

std::string render_csv(const Report& r)
{
    std::string out = "section,row,column,value\n";
    for (const auto& c: r.comparisons)
        for (const auto& f: metric_fields)
        {
            out += fmt::format("pope,{},{} baseline,{:.6f}\n", c.split, f.label, c.baseline.*f.field);
            out += fmt::format("pope,{},{} ours,{:.6f}\n", c.split, f.label, c.ours.*f.field);
        }
    for (const auto& a: r.ablation)
        out += fmt::format("ablation,{},accuracy,{:.6f}\n", a.configuration, a.accuracy);
    if (r.metrics)
        for (const auto& f: metric_fields)
            out += fmt::format("metrics,all,{},{:.6f}\n", f.label, (*r.metrics).*f.field);
    if (r.convergence)
    {
        const auto& c = *r.convergence;
        for (std::size_t t = 0; t < c.mean_u.size(); ++t)
        {
            out += fmt::format("convergence,{},mean_u,{:.6f}\n", t, c.mean_u[t]);
            out += fmt::format("convergence,{},std_u,{:.6f}\n", t, c.std_u[t]);
            if (t > 0)
                out += fmt::format("convergence,{},converged,{:.6f}\n", t, c.convergence_rate[t - 1]);
            if (!c.accuracy.empty())
                out += fmt::format("convergence,{},accuracy,{:.6f}\n", t, c.accuracy[t]);
        }
    }
    return out;
}

std::string render_gnuplot(const Report& r)
{
    if (!r.convergence)
        throw ValidationError("gnuplot output needs a convergence report");
    std::string out = "# iteration mean_u\n";
    for (std::size_t t = 0; t < r.convergence->mean_u.size(); ++t)
        out += fmt::format("{} {:.6f}\n", t, r.convergence->mean_u[t]);
    return out;
}

std::string render_json(const Report& r)
{
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    if (!r.comparisons.empty())
    {
        auto arr = nlohmann::ordered_json::array();
        for (const auto& c: r.comparisons)
            arr.push_back({{"split", c.split},
                           {"baseline", nlohmann::ordered_json::parse(json(c.baseline).dump())},
                           {"ours", nlohmann::ordered_json::parse(json(c.ours).dump())}});
        j["comparisons"] = std::move(arr);
    }
    if (!r.ablation.empty())
    {
        auto arr = nlohmann::ordered_json::array();
        for (const auto& a: r.ablation)
            arr.push_back({{"configuration", a.configuration}, {"accuracy", a.accuracy}});
        j["ablation"] = std::move(arr);
    }
    if (r.metrics)
        j["metrics"] = nlohmann::ordered_json::parse(json(*r.metrics).dump());
    if (r.convergence)
        j["convergence"] = nlohmann::ordered_json::parse(json(*r.convergence).dump());
    return j.dump(2) + "\n";
}

} // namespace

std::string render_report(const Report& report, ReportFormat format)
{
    switch (format)
    {
    case ReportFormat::json:
        return render_json(report);
    case ReportFormat::csv:
        return render_csv(report);
    case ReportFormat::markdown:
        return render_markdown(report);
    case ReportFormat::gnuplot:
        return render_gnuplot(report);
    }
    return {};
}

void emit_report(const Report& report, ReportFormat format, const std::string& path)
{
    const auto bytes = render_report(report, format);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw std::runtime_error(fmt::format("cannot write report '{}'", path));
    out << bytes;
    if (!out)
        throw std::runtime_error(fmt::format("failed writing report '{}'", path));
}

} // namespace recheck::eval
