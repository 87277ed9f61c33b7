// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <recheck/backend.hpp>
#include <recheck/core.hpp>
#include <recheck/refine.hpp>
#include <recheck/synthworld.hpp>

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace recheck::eval
{

struct PopeMetrics
{
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t tn = 0;
    std::size_t fn = 0;
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double yes_ratio = 0.0;
    /// Set when a ratio had a zero denominator and was defined as 0.
    bool degenerate = false;

    friend bool operator==(const PopeMetrics&, const PopeMetrics&) = default;
};

[[nodiscard]] PopeMetrics metrics_from_counts(std::size_t tp, std::size_t fp, std::size_t tn, std::size_t fn);

/// Confusion-matrix metrics over (predicted, truth) pairs; "yes" is the positive class.
[[nodiscard]] PopeMetrics pope_metrics(std::span<const std::pair<bool, bool>> results);

void to_json(json& j, const PopeMetrics& m);
void from_json(const json& j, PopeMetrics& m);

/// Reads a free-text polling answer: a leading yes/no wins, then any negation means
/// "no", then a "yes" anywhere; everything else counts as "no".
[[nodiscard]] bool parse_yes_no(std::string_view answer);

struct Annotation
{
    std::string case_id;
    bool hallucinated = false;
    std::string category; // attribute, count, relation, existence
};

struct CategoryRate
{
    std::size_t total = 0;
    std::size_t hallucinated = 0;
    double rate = 0.0;
};

struct HallucinationRate
{
    std::size_t total = 0;
    std::size_t hallucinated = 0;
    double rate = 0.0;
    std::map<std::string, CategoryRate> per_category;
};

[[nodiscard]] const std::vector<std::string>& hallucination_categories();
[[nodiscard]] HallucinationRate hallucination_rate(std::span<const Annotation> annotations);
/// `case_id,hallucinated,category` with a header row; hallucinated is true/false/1/0.
[[nodiscard]] std::vector<Annotation> parse_annotations_csv(std::string_view content);
[[nodiscard]] std::vector<Annotation> load_annotations_csv(const std::string& path);

struct BenchCase
{
    std::string id;
    Image image;
    std::string question;
    bool truth = false;
};

[[nodiscard]] std::vector<BenchCase> bench_cases(std::span<const synth::PopeCase> cases);

/// POPE JSON-lines ({"question_id", "image", "text", "label"}); images resolve
/// against image_dir.
[[nodiscard]] std::vector<BenchCase> load_pope_jsonl(const std::string& path, const std::string& image_dir);

enum class Pipeline
{
    baseline,
    corrected,
    random_refinement,   // uncertainty guidance off
    original_resolution, // multi-scale off
    no_semantic,         // semantic component off
};

[[nodiscard]] std::string_view to_string(Pipeline p) noexcept;
[[nodiscard]] Pipeline pipeline_from_string(std::string_view s);
[[nodiscard]] std::string_view display_name(Pipeline p) noexcept;

/// Config and run options a pipeline variant uses.
[[nodiscard]] std::pair<Config, CorrectionOptions> pipeline_setup(Pipeline p, const Config& cfg, std::uint64_t seed);

struct CaseOutcome
{
    std::string id;
    bool valid = false;
    bool predicted = false;
    bool truth = false;
    RefinementTrace trace;
    std::string error;
};

struct BenchmarkResult
{
    Pipeline pipeline = Pipeline::corrected;
    PopeMetrics metrics;
    std::vector<CaseOutcome> cases; // input order
    std::size_t invalid = 0;
};

struct BenchOptions
{
    int parallel = 1;
    std::uint64_t seed = 0;
};

/// Evaluates one pipeline over the cases. Backend failures mark a case invalid and
/// exclude it from the metrics; zero valid cases is an error.
[[nodiscard]] BenchmarkResult run_benchmark(std::span<const BenchCase> cases, Pipeline pipeline, const Config& cfg,
                                            Backend& backend, const Embedder& embedder, const BenchOptions& opts = {});

struct ConvergenceReport
{
    double tau_u = 0.0;
    std::size_t traces = 0;
    std::vector<double> mean_u;           // t = 0..T
    std::vector<double> std_u;            // population stddev, t = 0..T
    std::vector<double> convergence_rate; // t = 1..T, fraction with some u_s < tau_u, s <= t
    std::vector<double> accuracy;         // t = 0..T; empty without an accuracy function

    friend bool operator==(const ConvergenceReport&, const ConvergenceReport&) = default;
};

/// Judges response text of trace `index`.
using AccuracyFn = std::function<bool(std::size_t index, std::string_view response)>;

/// Aggregates u_t over traces; shorter traces carry their last value forward.
[[nodiscard]] ConvergenceReport convergence_report(std::span<const RefinementTrace> traces, double tau_u,
                                                   int max_iterations, const AccuracyFn& accuracy_fn = {});

void to_json(json& j, const ConvergenceReport& r);

struct SplitComparison
{
    std::string split;
    PopeMetrics baseline;
    PopeMetrics ours;
};

struct AblationRow
{
    std::string configuration;
    double accuracy = 0.0;
};

struct Report
{
    std::vector<SplitComparison> comparisons;
    std::vector<AblationRow> ablation; // first row is the reference configuration
    std::optional<PopeMetrics> metrics;
    std::optional<ConvergenceReport> convergence;
};

enum class ReportFormat
{
    json,
    csv,
    markdown,
    gnuplot,
};

[[nodiscard]] ReportFormat report_format_from_string(std::string_view s);
[[nodiscard]] std::string_view extension(ReportFormat f) noexcept;

/// Deterministic rendering; identical inputs give identical bytes.
[[nodiscard]] std::string render_report(const Report& report, ReportFormat format);
void emit_report(const Report& report, ReportFormat format, const std::string& path);

} // namespace recheck::eval
