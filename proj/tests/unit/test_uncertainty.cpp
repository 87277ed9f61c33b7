// SPDX-License-Identifier: Apache-2.0
#include <recheck/uncertainty.hpp>

#include <test_support.hpp>

#include <gtest/gtest.h>

#include <fstream>
#include <numeric>
#include <random>

using namespace recheck;

namespace
{

Claim span(std::size_t a, std::size_t b)
{
    Claim c;
    c.span_start = a;
    c.span_end = b;
    return c;
}

/// Returns preset vectors for known strings.
class TableEmbedder final: public Embedder
{
  public:
    std::map<std::string, std::vector<double>, std::less<>> table;
    std::vector<double> embed(std::string_view text) const override { return table.find(text)->second; }
    std::size_t dimension() const override { return table.begin()->second.size(); }
};

} // namespace

// ---- token entropy ----

TEST(TokenEntropy, UniformOverFour)
{
    EXPECT_NEAR(token_entropy(rt::step_of("a", {{"a", .25}, {"b", .25}, {"c", .25}, {"d", .25}})), 1.386294, 1e-5);
}

TEST(TokenEntropy, OneHotIsZero) { EXPECT_EQ(token_entropy(rt::certain("a")), 0.0); }

TEST(TokenEntropy, FairCoin) { EXPECT_NEAR(token_entropy(rt::step_of("a", {{"a", .5}, {"b", .5}})), 0.693147, 1e-5); }

TEST(TokenEntropy, ResidualBucketCountsMissingMass)
{
    // 0.5 listed, 0.5 residual: same as a fair coin.
    EXPECT_NEAR(token_entropy(rt::step_of("a", {{"a", .5}})), std::log(2.0), 1e-12);
    EXPECT_NEAR(token_entropy(rt::step_of("a", {{"a", .6}, {"b", .3}})), rt::ref_entropy({.6, .3}), 1e-12);
}

TEST(ResponseTokenUncertainty, MeanOverNaturalLogBound)
{
    // Entropies 0.2, 0.4, 0.6 nats built as (p, residual) pairs solved numerically.
    auto step_with_entropy = [](double target) {
        double lo = 0.5, hi = 1.0;
        for (int i = 0; i < 200; ++i)
        {
            const double mid = (lo + hi) / 2;
            (rt::ref_entropy({mid}) > target ? lo : hi) = mid;
        }
        return rt::step_of("x", {{"x", (lo + hi) / 2}});
    };
    const std::vector<TokenStep> steps {step_with_entropy(0.2), step_with_entropy(0.4), step_with_entropy(0.6)};
    EXPECT_NEAR(response_token_uncertainty(steps, std::exp(1.0)), 0.4, 1e-9);
}

TEST(ResponseTokenUncertainty, OneHotStepsGiveZero)
{
    const std::vector<TokenStep> steps(5, rt::certain("a"));
    EXPECT_EQ(response_token_uncertainty(steps, 32), 0.0);
}

TEST(ResponseTokenUncertainty, EmptyIsAnError)
{
    try
    {
        (void) response_token_uncertainty({}, 32);
        FAIL();
    }
    catch (const ValidationError& e)
    {
        EXPECT_STREQ(e.what(), "empty response");
    }
}

TEST(ResponseTokenUncertainty, RejectsVocabBoundBelowTopKPlusOne)
{
    const std::vector<TokenStep> steps {rt::step_of("a", {{"a", .25}, {"b", .25}, {"c", .25}})};
    EXPECT_THROW((void) response_token_uncertainty(steps, 3.5), ValidationError);
    EXPECT_NO_THROW((void) response_token_uncertainty(steps, 4));
}

TEST(ResponseTokenUncertainty, RandomStepsMatchReference)
{
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> u(0.01, 1);
    std::vector<TokenStep> steps;
    double h = 0;
    for (int i = 0; i < 10; ++i)
    {
        std::vector<double> w(5);
        for (auto& x: w)
            x = u(rng);
        const double s = std::accumulate(w.begin(), w.end(), 0.0);
        std::vector<std::pair<std::string, double>> probs;
        std::vector<double> ps;
        for (int j = 0; j < 4; ++j)
        {
            probs.emplace_back("t" + std::to_string(j), w[j] / s);
            ps.push_back(w[j] / s);
        }
        steps.push_back(rt::step_of("t0", probs));
        h += rt::ref_entropy(ps);
    }
    EXPECT_TRUE(rt::rel_close(response_token_uncertainty(steps, 32), (h / 10) / std::log(32.0)));
}

TEST(ResponseTokenUncertainty, UniformStepsProperty)
{
    // k listed tokens of mass 1/(k+1) each leave one residual bucket of the same mass,
    // so each step has entropy ln(k+1) and the score is ln(k+1)/ln(vocab_bound).
    for (int k = 1; k <= 8; ++k)
    {
        std::vector<std::pair<std::string, double>> probs;
        for (int i = 0; i < k; ++i)
            probs.emplace_back("t" + std::to_string(i), 1.0 / (k + 1));
        const std::vector<TokenStep> steps(4, rt::step_of("t0", probs));
        EXPECT_NEAR(response_token_uncertainty(steps, k + 1), 1.0, 1e-9);
        EXPECT_NEAR(response_token_uncertainty(steps, 32), std::log(k + 1.0) / std::log(32.0), 1e-9);
    }
}

// ---- attention dispersion ----

TEST(AttentionDispersion, UniformOverSixteenIsOne)
{
    const AttentionMap a(1, 4, 4, std::vector<double>(16, 1.0));
    EXPECT_NEAR(attention_dispersion(a, span(0, 0)), 1.0, 1e-12);
}

TEST(AttentionDispersion, PointMassIsZero)
{
    std::vector<double> w(16, 0.0);
    w[5] = 1.0;
    const AttentionMap a(1, 4, 4, w);
    EXPECT_EQ(attention_dispersion(a, span(0, 0)), 0.0);
}

TEST(AttentionDispersion, RandomFourByNineMatchesHandMean)
{
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<double> raw(4 * 9);
    for (auto& x: raw)
        x = u(rng);
    const AttentionMap a(4, 3, 3, raw);
    EXPECT_TRUE(rt::rel_close(attention_dispersion(a, span(1, 2)), rt::ref_dispersion(raw, 9, 1, 2)));
}

TEST(AttentionDispersion, DegenerateGridIsAnError)
{
    const AttentionMap a(1, 1, 1, {1.0});
    EXPECT_THROW((void) attention_dispersion(a, span(0, 0)), ValidationError);
}

TEST(AttentionDispersion, InvariantUnderRowScaling)
{
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0, 1);
    std::uniform_real_distribution<double> scale(0.01, 100);
    for (int trial = 0; trial < 100; ++trial)
    {
        std::vector<double> raw(3 * 6);
        for (auto& x: raw)
            x = u(rng);
        auto scaled = raw;
        for (std::size_t i = 0; i < 3; ++i)
        {
            const double c = scale(rng);
            for (std::size_t j = 0; j < 6; ++j)
                scaled[i * 6 + j] *= c;
        }
        EXPECT_NEAR(attention_dispersion(AttentionMap(3, 2, 3, raw), span(0, 2)),
                    attention_dispersion(AttentionMap(3, 2, 3, scaled), span(0, 2)), 1e-12);
    }
}

// ---- semantic consistency ----

TEST(SemanticConsistency, IdenticalSamplesGiveZero)
{
    const TermFrequencyEmbedder e;
    const std::vector<std::string> samples(3, "a fork on the table");
    EXPECT_NEAR(semantic_consistency("a fork on the table", samples, e), 0.0, 1e-12);
}

TEST(SemanticConsistency, OrthogonalEmbeddingsGiveOne)
{
    TableEmbedder e;
    e.table = {{"r", {1, 0, 0}}, {"a", {0, 1, 0}}, {"b", {0, 0, 1}}};
    const std::vector<std::string> samples {"a", "b"};
    EXPECT_NEAR(semantic_consistency("r", samples, e), 1.0, 1e-12);
}

TEST(SemanticConsistency, TermFrequencyHandExample)
{
    // "two cats" vs "a dog" share no terms: cos = 0, so u = 1 - (1 + 0)/2.
    const TermFrequencyEmbedder e;
    const std::vector<std::string> samples {"two cats", "a dog"};
    const double cos = rt::ref_tf_cosine({"two", "cats"}, {"a", "dog"});
    EXPECT_EQ(cos, 0.0);
    EXPECT_NEAR(semantic_consistency("two cats", samples, e), 1.0 - (1.0 + cos) / 2.0, 1e-12);

    // A partial overlap: {two, cats} vs {two, dogs} has cos = 1/2.
    const std::vector<std::string> overlap {"two cats", "two dogs"};
    EXPECT_NEAR(semantic_consistency("two cats", overlap, e), 1.0 - (1.0 + 0.5) / 2.0, 1e-12);
}

TEST(SemanticConsistency, NegativeCosineClampsToZero)
{
    TableEmbedder e;
    e.table = {{"r", {1, 0}}, {"a", {-1, 0}}};
    const std::vector<std::string> samples {"a"};
    EXPECT_NEAR(semantic_consistency("r", samples, e), 1.0, 1e-12);
}

TEST(SemanticConsistency, EmptyReferenceIsAnError)
{
    const TermFrequencyEmbedder e;
    const std::vector<std::string> samples {"x"};
    EXPECT_THROW((void) semantic_consistency("", samples, e), ValidationError);
}

TEST(SemanticConsistency, InvariantUnderSampleOrder)
{
    const TermFrequencyEmbedder e;
    std::vector<std::string> samples {"a red car", "the car is blue", "no car here", "a red red car", "bus"};
    const double base = semantic_consistency("a red car", samples, e);
    std::mt19937_64 rng(1);
    for (int i = 0; i < 20; ++i)
    {
        std::shuffle(samples.begin(), samples.end(), rng);
        EXPECT_EQ(semantic_consistency("a red car", samples, e), base);
    }
}

TEST(Embedder, TermFrequencyIsUnitNormAndDeterministic)
{
    const TermFrequencyEmbedder e(64);
    for (const char* s: {"a", "The cat sat on the mat.", "!!!", "x y z x"})
    {
        const auto v = e.embed(s);
        EXPECT_EQ(v.size(), 64u);
        EXPECT_NEAR(std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0)), 1.0, 1e-6);
        EXPECT_EQ(v, e.embed(s));
    }
}

// ---- hedging ----

TEST(HedgeRatio, Examples)
{
    const auto lex = HedgeLexicon::builtin();
    EXPECT_EQ(hedge_ratio("", lex), 0.0);
    EXPECT_EQ(hedge_ratio("the cat sat", lex), 0.0);
    EXPECT_NEAR(hedge_ratio("possibly a cat", lex), 1.0 / 3.0, 1e-9);
    EXPECT_NEAR(hedge_ratio("It APPEARS, perhaps, unclear.", lex), 3.0 / 4.0, 1e-12);
}

TEST(HedgeRatio, NonLexiconTokenStrictlyDecreases)
{
    const auto lex = HedgeLexicon::builtin();
    std::string s = "possibly seems";
    double prev = hedge_ratio(s, lex);
    for (int i = 0; i < 10; ++i)
    {
        s += " cat";
        const double next = hedge_ratio(s, lex);
        EXPECT_LT(next, prev);
        EXPECT_GE(next, 0.0);
        prev = next;
    }
}

TEST(HedgeLexicon, BuiltinCoversQualifiersAndVagueWords)
{
    const auto lex = HedgeLexicon::builtin();
    EXPECT_NEAR(hedge_ratio("It might be something.", lex), 2.0 / 4.0, 1e-12);
    EXPECT_NEAR(hedge_ratio("Various objects could be there", lex), 2.0 / 5.0, 1e-12);
    std::size_t total = lex.hedges.size() + lex.qualifiers.size() + lex.vague.size();
    EXPECT_EQ(total, 11u);
}

TEST(HedgeLexicon, BuiltinMatchesShippedFile)
{
    const auto file = load_hedge_lexicon(rt::source_path("data/hedges.txt"));
    const auto builtin = HedgeLexicon::builtin();
    EXPECT_EQ(file.hedges, builtin.hedges);
    EXPECT_EQ(file.qualifiers, builtin.qualifiers);
    EXPECT_EQ(file.vague, builtin.vague);
    for (const char* w: {"possibly", "appears", "seems", "may", "perhaps", "likely", "unclear"})
        EXPECT_TRUE(builtin.contains(w)) << w;
}

TEST(HedgeLexicon, ParsesSectionsAndRejectsMalformedEntries)
{
    const auto lex = parse_hedge_lexicon("# c\n[hedges]\nmaybe # trailing\n\n[vague]\nkinda\n");
    EXPECT_TRUE(lex.contains("maybe"));
    EXPECT_TRUE(lex.vague.contains("kinda"));
    EXPECT_THROW((void) parse_hedge_lexicon("orphan\n"), ValidationError);
    EXPECT_THROW((void) parse_hedge_lexicon("[hedges]\nMaybe\n"), ValidationError);
    EXPECT_THROW((void) parse_hedge_lexicon("[hedges]\nsort of\n"), ValidationError);
    EXPECT_THROW((void) parse_hedge_lexicon("[other]\n"), ValidationError);
}

// ---- unification ----

TEST(UnifiedScore, Examples)
{
    const std::array<double, 4> alpha {0.30, 0.25, 0.25, 0.20};
    EXPECT_NEAR(unified_score({1, 1, 1, 1}, alpha), 1.0, 1e-12);
    EXPECT_EQ(unified_score({0, 0, 0, 0}, alpha), 0.0);
    EXPECT_NEAR(unified_score({0.5, 0.4, 0.6, 0.1}, alpha), 0.42, 1e-9);
    EXPECT_THROW((void) unified_score({1.5, 0, 0, 0}, alpha), ValidationError);
}

TEST(UnifiedScore, MonotoneInEachComponent)
{
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0, 1);
    const std::array<double, 4> alpha {0.30, 0.25, 0.25, 0.20};
    for (int trial = 0; trial < 1000; ++trial)
    {
        std::array<double, 4> c {u(rng), u(rng), u(rng), u(rng)};
        const double base = unified_score(c, alpha);
        const auto i = static_cast<std::size_t>(trial % 4);
        c[i] = c[i] + (1 - c[i]) * u(rng);
        EXPECT_GE(unified_score(c, alpha), base);
    }
}

// ---- response scoring ----

TEST(ScoreResponse, AllZeroComponents)
{
    std::vector<double> w(4, 0.0);
    w[0] = 1;
    GenerationOutput out;
    out.response_text = "No";
    out.steps = {rt::certain("No")};
    out.attention = AttentionMap(1, 2, 2, w);
    out.image_w = 100;
    out.image_h = 100;
    const std::vector<Claim> claims {span(0, 0)};
    const std::vector<std::string> samples {"No", "No"};
    const auto s = score_response(out, claims, samples, Config {}, TermFrequencyEmbedder {});
    EXPECT_NEAR(s.response.u, 0.0, 1e-12);
}

TEST(ScoreResponse, AllComponentsAtMaximum)
{
    // Token entropy ln 2 (one candidate at 0.5 plus the residual) over vocab_bound 2,
    // uniform attention, orthogonal samples, every word a hedge.
    Config cfg;
    cfg.vocab_bound = 2;
    cfg.top_k = 1;
    auto out = rt::uniform_output("possibly", {rt::step_of("possibly", {{"possibly", .5}})}, 2, 2);
    TableEmbedder e;
    e.table = {{"possibly", {1, 0}}, {"other", {0, 1}}};
    const std::vector<Claim> claims {span(0, 0)};
    const std::vector<std::string> samples {"other"};
    const auto s = score_response(out, claims, samples, cfg, e);
    EXPECT_NEAR(s.response.u, 1.0, 1e-12);
}

TEST(ScoreResponse, FixtureMatchesComposedComponents)
{
    std::ifstream in(rt::source_path("fixtures/score_case1.trace.json"));
    ASSERT_TRUE(in);
    const auto doc = json::parse(in);
    const auto out = doc.at("output").get<GenerationOutput>();
    const auto claims = doc.at("claims").get<std::vector<Claim>>();
    const auto samples = doc.at("samples").get<std::vector<std::string>>();
    const Config cfg;
    const TermFrequencyEmbedder e;
    const auto lex = HedgeLexicon::builtin();

    const double u_token = response_token_uncertainty(out.steps, cfg.vocab_bound);
    const double u_attn =
        (attention_dispersion(*out.attention, claims[0]) + attention_dispersion(*out.attention, claims[1])) / 2;
    const double u_sem = semantic_consistency(out.response_text, samples, e);
    const double u_claim = hedge_ratio(out.response_text, lex);
    const double want = cfg.alpha[0] * u_token + cfg.alpha[1] * u_attn + cfg.alpha[2] * u_sem + cfg.alpha[3] * u_claim;

    const auto s = score_response(out, claims, samples, cfg, e);
    EXPECT_TRUE(rt::rel_close(s.response.u_token, u_token));
    EXPECT_TRUE(rt::rel_close(s.response.u_attn, u_attn));
    EXPECT_TRUE(rt::rel_close(s.response.u_sem, u_sem));
    EXPECT_TRUE(rt::rel_close(s.response.u_claim, u_claim));
    EXPECT_TRUE(rt::rel_close(s.response.u, want));
    // One hedge word among the nine words of the response.
    EXPECT_NEAR(u_claim, 1.0 / 9.0, 1e-12);

    // Component ops against the reference formulas, straight from the raw document.
    const auto& raw = doc.at("output").at("attention").at("data").get_ref<const json::array_t&>();
    std::vector<double> weights;
    for (const auto& v: raw)
        weights.push_back(v.get<double>());
    EXPECT_TRUE(rt::rel_close(attention_dispersion(*out.attention, claims[0]), rt::ref_dispersion(weights, 12, 0, 5)));

    ASSERT_EQ(s.per_claim.size(), 2u);
    const std::span<const TokenStep> first(out.steps.data(), 6);
    EXPECT_TRUE(rt::rel_close(s.per_claim[0].u_token, response_token_uncertainty(first, cfg.vocab_bound)));
    EXPECT_NEAR(s.per_claim[0].u_claim, 1.0 / 5.0, 1e-12);
    EXPECT_EQ(s.per_claim[1].u_claim, 0.0);
}

TEST(ScoreResponse, SamplesRequiredWhenSemanticWeightIsPositive)
{
    auto out = rt::uniform_output("No", {rt::certain("No")}, 2, 2);
    const std::vector<Claim> claims {span(0, 0)};
    EXPECT_THROW((void) score_response(out, claims, {}, Config {}, TermFrequencyEmbedder {}), ValidationError);
    Config cfg;
    cfg.alpha = {0.4, 0.3, 0.0, 0.3};
    cfg.k_samples = 0;
    EXPECT_NO_THROW((void) score_response(out, claims, {}, cfg, TermFrequencyEmbedder {}));
}
