#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <numbers>

#include "lfd/error.hpp"
#include "lfd/objectives.hpp"
#include "lfd/rng.hpp"
#include "support/gradcheck.hpp"

using namespace lfd;
using namespace lfd::objectives;
using lfd::testing::gradient_check;
using lfd::testing::random_tensor;

namespace {

constexpr double kLn2 = std::numbers::ln2;

ErrorKind kind_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("expected an lfd::Error");
    return ErrorKind::Undefined;
}

Tensor log_of(std::size_t rows, std::size_t cols, const std::vector<double>& probs, bool grad = false) {
    std::vector<double> v;
    for (double p : probs) v.push_back(p > 0.0 ? std::log(p) : -1000.0);
    return Tensor({rows, cols}, v, grad);
}

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

// Sort oracle: indices of the k smallest (value, seq, pos) triples.
std::vector<std::vector<std::uint8_t>> oracle_select(const std::vector<std::vector<double>>& losses, double R) {
    std::vector<std::tuple<double, std::size_t, std::size_t>> all;
    for (std::size_t s = 0; s < losses.size(); ++s)
        for (std::size_t t = 0; t < losses[s].size(); ++t) all.emplace_back(losses[s][t], s, t);
    std::sort(all.begin(), all.end());
    std::size_t k = static_cast<std::size_t>(std::floor(R * static_cast<double>(all.size()) + 1e-9));
    k = std::max<std::size_t>(k, 1);
    std::vector<std::vector<std::uint8_t>> mask;
    for (const auto& l : losses) mask.emplace_back(l.size(), 0);
    for (std::size_t i = 0; i < k; ++i) mask[std::get<1>(all[i])][std::get<2>(all[i])] = 1;
    return mask;
}

std::vector<TokenLossVector> to_batch(const std::vector<std::vector<double>>& losses) {
    std::vector<TokenLossVector> out;
    for (const auto& l : losses) out.push_back({l, std::vector<std::uint8_t>(l.size(), 1)});
    return out;
}

std::vector<double> softmax(std::span<const double> z) {
    double mx = *std::max_element(z.begin(), z.end());
    std::vector<double> p;
    double s = 0.0;
    for (double v : z) {
        p.push_back(std::exp(v - mx));
        s += p.back();
    }
    for (double& v : p) v /= s;
    return p;
}

}  // namespace

TEST_CASE("mle_loss examples") {
    const Tensor uniform = log_of(3, 4, std::vector<double>(12, 0.25));
    CHECK(mle_loss(uniform, TokenSequence{0, 1, 2}).loss.item() == doctest::Approx(3.0 * std::log(4.0)).epsilon(1e-14));

    const Tensor sure = log_of(2, 3, {1, 0, 0, 0, 0, 1});
    CHECK(mle_loss(sure, TokenSequence{0, 2}).loss.item() == 0.0);

    const Tensor mixed = log_of(2, 2, {0.5, 0.5, 0.75, 0.25});
    const auto r = mle_loss(mixed, TokenSequence{0, 1});
    CHECK(r.loss.item() == doctest::Approx(kLn2 + std::log(4.0)).epsilon(1e-14));
    REQUIRE(r.tokens.values.size() == 2);
    CHECK(r.tokens.values[1] == doctest::Approx(std::log(4.0)));
    CHECK(kind_of([&] { mle_loss(mixed, TokenSequence{0}); }) == ErrorKind::ContractViolation);
}

TEST_CASE("focal_loss examples") {
    Rng rng(1);
    const Tensor logp = ops::log_softmax_rows(random_tensor(rng, {4, 5}, 1.0, false));
    const TokenSequence y{1, 4, 0, 2};
    CHECK(same_bits(focal_loss(logp, y, 0.0).item(), mle_loss(logp, y).loss.item()));
    CHECK(focal_loss(log_of(2, 2, {1, 0, 0, 1}), TokenSequence{0, 1}, 2.0).item() == 0.0);
    CHECK(focal_loss(log_of(1, 2, {0.5, 0.5}), TokenSequence{0}, 2.0).item() == doctest::Approx(0.25 * kLn2).epsilon(1e-14));
}

TEST_CASE("cp_loss examples") {
    const Tensor sure = log_of(2, 3, {1, 0, 0, 0, 1, 0});
    const TokenSequence y{0, 1};
    CHECK(cp_loss(sure, y, 2.5).item() == mle_loss(sure, y).loss.item());
    const Tensor uniform = log_of(3, 5, std::vector<double>(15, 0.2));
    const TokenSequence yu{0, 3, 4};
    const double gap = mle_loss(uniform, yu).loss.item() - cp_loss(uniform, yu, 1.0).item();
    CHECK(gap == doctest::Approx(3.0 * std::log(5.0)).epsilon(1e-13));
    const Tensor half = log_of(1, 2, {0.5, 0.5});
    CHECK(mle_loss(half, TokenSequence{0}).loss.item() - cp_loss(half, TokenSequence{0}, 1.0).item() ==
          doctest::Approx(kLn2).epsilon(1e-14));
}

TEST_CASE("ul_repeat_loss examples") {
    const Tensor logp = log_of(1, 3, {0.2, 0.5, 0.3});
    CHECK(ul_repeat_loss(logp, TokenSequence{1}, 1.0).item() == mle_loss(logp, TokenSequence{1}).loss.item());

    const Tensor zero_cand = log_of(2, 3, {1, 0, 0, 0, 1, 0});
    CHECK(ul_repeat_loss(zero_cand, TokenSequence{0, 1}, 1.0).item() == doctest::Approx(0.0).epsilon(1e-15));

    const Tensor one_cand = log_of(2, 2, {0.5, 0.5, 0.5, 0.5});
    const double penalty = ul_repeat_loss(one_cand, TokenSequence{0, 1}, 1.0).item() - mle_loss(one_cand, TokenSequence{0, 1}).loss.item();
    CHECK(penalty == doctest::Approx(kLn2).epsilon(1e-14));
    // A repeated target is not its own candidate.
    CHECK(ul_repeat_loss(one_cand, TokenSequence{0, 0}, 1.0).item() == mle_loss(one_cand, TokenSequence{0, 0}).loss.item());
}

TEST_CASE("small_loss_select examples") {
    const auto m = small_loss_select(to_batch({{0.1, 0.5, 0.2, 0.9}}), 0.5);
    CHECK(m[0] == std::vector<std::uint8_t>{1, 0, 1, 0});
    const auto all = small_loss_select(to_batch({{0.4, 0.1}, {0.3}}), 1.0);
    CHECK(all[0] == std::vector<std::uint8_t>{1, 1});
    CHECK(all[1] == std::vector<std::uint8_t>{1});
    const auto tied = small_loss_select(to_batch({{0.3, 0.3}, {0.3, 0.3}}), 0.5);
    CHECK(tied[0] == std::vector<std::uint8_t>{1, 1});
    CHECK(tied[1] == std::vector<std::uint8_t>{0, 0});
    CHECK(kind_of([] { small_loss_select(std::vector<TokenLossVector>{}, 0.5); }) == ErrorKind::EmptyInput);
    CHECK(kind_of([] { small_loss_select(to_batch({{0.1}}), 0.0); }) == ErrorKind::ContractViolation);
}

TEST_CASE("small_loss_select respects the validity mask") {
    std::vector<TokenLossVector> batch{{{0.0, 5.0, 1.0}, {0, 1, 1}}};
    const auto m = small_loss_select(batch, 0.5);
    CHECK(m[0] == std::vector<std::uint8_t>{0, 0, 1});
}

TEST_CASE("small_loss_select matches the sort oracle") {
    Rng rng(314);
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<std::vector<double>> losses(1 + rng.index(5));
        const bool coarse = trial % 3 == 0;
        for (auto& seq : losses) {
            seq.resize(1 + rng.index(8));
            for (double& v : seq) v = coarse ? static_cast<double>(rng.index(3)) : rng.uniform() * 4.0;
        }
        const double R = 0.05 + 0.95 * rng.uniform();
        const auto got = small_loss_select(to_batch(losses), R);
        CHECK(got == oracle_select(losses, R));
        std::size_t n = 0, kept = 0;
        for (const auto& m : got) {
            n += m.size();
            kept += static_cast<std::size_t>(std::count(m.begin(), m.end(), 1));
        }
        CHECK(kept == std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(R * static_cast<double>(n) + 1e-9))));
    }
}

TEST_CASE("truncated_ce_loss at R = 1 is bit-identical to batch MLE") {
    Rng rng(6);
    std::vector<Tensor> logps;
    std::vector<TokenSequence> ys;
    for (int s = 0; s < 3; ++s) {
        logps.push_back(ops::log_softmax_rows(random_tensor(rng, {static_cast<std::size_t>(2 + s), 5}, 1.0, false)));
        TokenSequence y;
        for (int t = 0; t < 2 + s; ++t) y.push_back(static_cast<TokenId>(rng.index(5)));
        ys.push_back(y);
    }
    const auto a = truncated_ce_loss(logps, ys, 1.0);
    const auto b = mle_batch_loss(logps, ys);
    CHECK(same_bits(a.loss.item(), b.loss.item()));
    CHECK(a.token_count == b.token_count);
}

TEST_CASE("truncated_ce_loss favours the confident sequence") {
    // Sequence 0 puts 0.99 on every target, sequence 1 only 0.3.
    const Tensor easy = log_of(3, 2, {0.99, 0.01, 0.99, 0.01, 0.99, 0.01});
    const Tensor hard = log_of(3, 2, {0.3, 0.7, 0.3, 0.7, 0.3, 0.7});
    const std::vector<Tensor> logps{hard, easy};
    const std::vector<TokenSequence> ys{{0, 0, 0}, {0, 0, 0}};
    const auto r = truncated_ce_loss(logps, ys, 0.5);
    CHECK(r.token_count == 3);
    CHECK(r.loss.item() == doctest::Approx(-3.0 * std::log(0.99)).epsilon(1e-12));
}

TEST_CASE("truncated_ce_loss gradients skip unselected tokens") {
    Rng rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<Tensor> logits{random_tensor(rng, {4, 5}), random_tensor(rng, {3, 5})};
        const std::vector<TokenSequence> ys{{0, 1, 2, 3}, {4, 0, 1}};
        auto loss = [&] {
            std::vector<Tensor> logps;
            for (const auto& l : logits) logps.push_back(ops::log_softmax_rows(l));
            return truncated_ce_loss(logps, ys, 0.5).loss;
        };
        CHECK(gradient_check(logits, loss).max_relative_error <= 1e-4);

        std::vector<TokenLossVector> losses;
        for (std::size_t s = 0; s < 2; ++s) {
            const Tensor lp = ops::log_softmax_rows(logits[s]);
            TokenLossVector v;
            for (std::size_t t = 0; t < ys[s].size(); ++t) v.values.push_back(-lp.at(t, static_cast<std::size_t>(ys[s][t])));
            losses.push_back(v);
        }
        const auto mask = small_loss_select(losses, 0.5);
        for (std::size_t s = 0; s < 2; ++s)
            for (std::size_t t = 0; t < ys[s].size(); ++t)
                if (!mask[s][t])
                    for (std::size_t v = 0; v < 5; ++v) CHECK(logits[s].grad()[t * 5 + v] == 0.0);
    }
}

TEST_CASE("truncated_ce_loss is non-decreasing in R") {
    Rng rng(23);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<Tensor> logps{ops::log_softmax_rows(random_tensor(rng, {6, 4}, 2.0, false)),
                                  ops::log_softmax_rows(random_tensor(rng, {5, 4}, 2.0, false))};
        std::vector<TokenSequence> ys(2);
        for (std::size_t s = 0; s < 2; ++s)
            for (std::size_t t = 0; t < logps[s].rows(); ++t) ys[s].push_back(static_cast<TokenId>(rng.index(4)));
        double prev = -1.0;
        for (double R = 0.1; R <= 1.0 + 1e-12; R += 0.1) {
            const double v = truncated_ce_loss(logps, ys, std::min(R, 1.0)).loss.item();
            CHECK(v >= prev - 1e-12);
            prev = v;
        }
    }
}

TEST_CASE("poe_sigma and poe_loss examples") {
    const Tensor pd = log_of(1, 2, {0.8, 0.2});
    const Tensor pm = log_of(1, 2, {0.5, 0.5});
    const auto combined = softmax(poe_sigma(pd, pm).values());
    CHECK(combined[0] == doctest::Approx(0.8).epsilon(1e-14));
    CHECK(combined[1] == doctest::Approx(0.2).epsilon(1e-14));
    CHECK(poe_loss(pd, pm, TokenSequence{1}).item() == doctest::Approx(-std::log(0.2)).epsilon(1e-14));

    const Tensor sure_d = log_of(1, 3, {0, 1, 0});
    const Tensor sure_m = log_of(1, 3, {0, 1, 0});
    const auto det = softmax(poe_sigma(sure_d, sure_m).values());
    CHECK(det[1] == doctest::Approx(1.0).epsilon(1e-14));

    Rng rng(2);
    const Tensor uniform_d = log_of(3, 4, std::vector<double>(12, 0.25));
    const Tensor main = ops::log_softmax_rows(random_tensor(rng, {3, 4}, 1.0, false));
    const TokenSequence y{3, 0, 2};
    const Tensor sigma = poe_sigma(uniform_d, main);
    for (std::size_t r = 0; r < 3; ++r) {
        const auto p = softmax(sigma.values().subspan(r * 4, 4));
        for (std::size_t v = 0; v < 4; ++v) CHECK(p[v] == doctest::Approx(std::exp(main.at(r, v))).epsilon(1e-13));
    }
    CHECK(poe_loss(uniform_d, main, y).item() == doctest::Approx(mle_loss(main, y).loss.item()).epsilon(1e-13));
    CHECK(kind_of([&] { poe_sigma(pd, main); }) == ErrorKind::ContractViolation);
}

TEST_CASE("poe identity and shift invariance") {
    Rng rng(88);
    for (int trial = 0; trial < 200; ++trial) {
        const Tensor d = ops::log_softmax_rows(random_tensor(rng, {1, 6}, 3.0, false));
        const Tensor m = ops::log_softmax_rows(random_tensor(rng, {1, 6}, 3.0, false));
        const auto p = softmax(poe_sigma(d, m).values());
        double z = 0.0;
        for (std::size_t v = 0; v < 6; ++v) z += std::exp(d[v]) * std::exp(m[v]);
        for (std::size_t v = 0; v < 6; ++v) CHECK(std::abs(p[v] - std::exp(d[v]) * std::exp(m[v]) / z) <= 1e-9);

        const double shift = 10.0 * rng.normal();
        const Tensor shifted = ops::add_scalar(d, shift);
        const auto q = softmax(poe_sigma(shifted, m).values());
        const auto s1 = poe_sigma(d, m).values(), s2 = poe_sigma(shifted, m).values();
        CHECK(std::max_element(s1.begin(), s1.end()) - s1.begin() == std::max_element(s2.begin(), s2.end()) - s2.begin());
        for (std::size_t v = 0; v < 6; ++v) CHECK(std::abs(p[v] - q[v]) <= 1e-12);
    }
}

TEST_CASE("poe_loss sends no gradient into the expert") {
    Rng rng(41);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor expert_logits = random_tensor(rng, {3, 5});
        Tensor main_logits = random_tensor(rng, {3, 5});
        const TokenSequence y{1, 4, 2};
        auto loss = [&] {
            return poe_loss(ops::log_softmax_rows(expert_logits), ops::log_softmax_rows(main_logits), y);
        };
        CHECK(gradient_check({main_logits}, loss).max_relative_error <= 1e-4);
        expert_logits.zero_grad();
        Tape tape;
        TapeScope scope(tape);
        tape.backward(loss());
        for (double g : expert_logits.grad()) CHECK(g == 0.0);
    }
}

TEST_CASE("lfd_loss examples and lambda algebra") {
    const Tensor pd = log_of(1, 2, {0.8, 0.2});
    const Tensor pm = log_of(1, 2, {0.5, 0.5});
    const TokenSequence y{1};
    CHECK(lfd_loss(pd, pm, y, 0.5).item() == doctest::Approx(kLn2 + 0.5 * -std::log(0.2)).epsilon(1e-14));

    Rng rng(9);
    const Tensor d = ops::log_softmax_rows(random_tensor(rng, {4, 6}, 1.0, false));
    const Tensor m = ops::log_softmax_rows(random_tensor(rng, {4, 6}, 1.0, false));
    const TokenSequence yy{0, 5, 2, 2};
    CHECK(same_bits(lfd_loss(d, m, yy, 0.0).item(), mle_loss(m, yy).loss.item()));
    const Tensor uniform = log_of(4, 6, std::vector<double>(24, 1.0 / 6.0));
    CHECK(lfd_loss(uniform, m, yy, 1.0).item() == doctest::Approx(2.0 * mle_loss(m, yy).loss.item()).epsilon(1e-13));

    const double base = lfd_loss(d, m, yy, 0.0).item();
    const double poe = poe_loss(d, m, yy).item();
    for (double lambda : {0.25, 0.5, 1.0, 3.0}) {
        const double diff = lfd_loss(d, m, yy, lambda).item() - base;
        CHECK(std::abs(diff - lambda * poe) <= 1e-12 * std::max(1.0, std::abs(lambda * poe)));
    }
    CHECK(kind_of([&] { lfd_loss(d, m, yy, -0.1); }) == ErrorKind::ContractViolation);
}

TEST_CASE("every loss passes random gradient checks") {
    Rng rng(1234);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor logits = random_tensor(rng, {5, 6});
        Tensor expert = random_tensor(rng, {5, 6});
        TokenSequence y;
        for (int t = 0; t < 5; ++t) y.push_back(static_cast<TokenId>(rng.index(6)));
        y[3] = y[1];
        auto lp = [&] { return ops::log_softmax_rows(logits); };
        auto ep = [&] { return ops::log_softmax_rows(expert); };
        std::vector<std::pair<const char*, std::function<Tensor()>>> cases{
            {"mle", [&] { return mle_loss(lp(), y).loss; }},
            {"focal", [&] { return focal_loss(lp(), y, 2.0); }},
            {"focal_frac", [&] { return focal_loss(lp(), y, 1.5); }},
            {"cp", [&] { return cp_loss(lp(), y, 2.5); }},
            {"ul_repeat", [&] { return ul_repeat_loss(lp(), y, 1.0); }},
            {"poe", [&] { return poe_loss(ep(), lp(), y); }},
            {"lfd", [&] { return lfd_loss(ep(), lp(), y, 0.5); }},
        };
        for (auto& [name, fn] : cases) {
            CAPTURE(name);
            CAPTURE(trial);
            CHECK(gradient_check({logits}, fn).max_relative_error <= 1e-4);
        }
    }
}

TEST_CASE("objective config validation and dispatch") {
    const auto cfg = objective_config_from_json(Json{{"kind", "truncated_ce"}, {"R", 0.7}});
    CHECK(cfg.kind == ObjectiveKind::truncated_ce);
    CHECK(objective_config_from_json(to_json(cfg)) == cfg);
    CHECK(kind_of([] { objective_config_from_json(Json{{"kind", "mle"}, {"R", 1.5}}); }) == ErrorKind::InvalidConfig);
    CHECK(kind_of([] { objective_config_from_json(Json{{"kind", "mle"}, {"gamma", -1.0}}); }) == ErrorKind::InvalidConfig);
    CHECK(kind_of([] { objective_config_from_json(Json{{"kind", "mle"}, {"beta", 1.0}}); }) == ErrorKind::InvalidConfig);

    const std::vector<Tensor> logps{log_of(2, 2, {0.5, 0.5, 0.5, 0.5})};
    const std::vector<TokenSequence> ys{{0, 1}};
    ObjectiveConfig face;
    face.kind = ObjectiveKind::face;
    CHECK(kind_of([&] { batch_objective(face, logps, ys); }) == ErrorKind::Unimplemented);
    face.kind = ObjectiveKind::dialogue_ul;
    CHECK(kind_of([&] { batch_objective(face, logps, ys); }) == ErrorKind::Unimplemented);

    ObjectiveConfig poe;
    poe.kind = ObjectiveKind::poe_combined;
    poe.lambda = 0.0;
    CHECK(same_bits(batch_objective(poe, logps, ys, logps).loss.item(), mle_batch_loss(logps, ys).loss.item()));
}
