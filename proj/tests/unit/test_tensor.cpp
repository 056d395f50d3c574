#include <doctest.h>

#include <cmath>
#include <cstring>
#include <functional>
#include <limits>
#include <numbers>

#include "lfd/error.hpp"
#include "lfd/rng.hpp"
#include "lfd/tensor.hpp"
#include "support/gradcheck.hpp"

using namespace lfd;
using lfd::testing::gradient_check;
using lfd::testing::random_tensor;

namespace {

ErrorKind kind_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("expected an lfd::Error");
    return ErrorKind::Undefined;
}

}  // namespace

TEST_CASE("log_softmax symmetric row") {
    const Tensor out = ops::log_softmax_rows(Tensor({1, 2}, {0.0, 0.0}));
    CHECK(out[0] == doctest::Approx(-std::numbers::ln2).epsilon(1e-15));
    CHECK(out[1] == doctest::Approx(-std::numbers::ln2).epsilon(1e-15));
}

TEST_CASE("log_softmax large logits do not overflow") {
    const Tensor out = ops::log_softmax_rows(Tensor({1, 2}, {1000.0, 0.0}));
    CHECK(std::abs(out[0]) < 1e-300);
    CHECK(out[1] == doctest::Approx(-1000.0).epsilon(1e-15));
}

TEST_CASE("log_softmax agrees with extended-precision evaluation") {
    const Tensor out = ops::log_softmax_rows(Tensor({1, 3}, {1.0, 2.0, 3.0}));
    const long double lse = std::log(std::exp(1.0L) + std::exp(2.0L) + std::exp(3.0L));
    for (int i = 0; i < 3; ++i) {
        const long double expected = static_cast<long double>(i + 1) - lse;
        CHECK(std::abs(static_cast<long double>(out[i]) - expected) < 1e-14L);
    }
    long double total = 0.0L;
    for (int i = 0; i < 3; ++i) total += std::exp(static_cast<long double>(out[i]));
    CHECK(std::abs(total - 1.0L) < 1e-14L);
}

TEST_CASE("log_softmax rejects non-finite input") {
    Tensor t({1, 2}, {0.0, 1.0});
    t.mutable_values()[1] = std::numeric_limits<double>::quiet_NaN();
    CHECK(kind_of([&] { ops::log_softmax_rows(t); }) == ErrorKind::InvalidValue);
    CHECK(kind_of([&] { Tensor({1}, {std::numeric_limits<double>::infinity()}); }) == ErrorKind::InvalidValue);
}

TEST_CASE("log_softmax rows have zero logsumexp") {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        const Tensor x = random_tensor(rng, {4, 7}, 10.0, false);
        const Tensor y = ops::log_softmax_rows(x);
        for (std::size_t r = 0; r < 4; ++r) {
            double mx = -1e300;
            for (std::size_t c = 0; c < 7; ++c) mx = std::max(mx, y.at(r, c));
            double s = 0.0;
            for (std::size_t c = 0; c < 7; ++c) s += std::exp(y.at(r, c) - mx);
            CHECK(std::abs(mx + std::log(s)) < 1e-9);
        }
    }
}

TEST_CASE("backward of sum is all ones") {
    Tensor w({2, 3}, {1, 2, 3, 4, 5, 6}, true);
    Tape tape;
    TapeScope scope(tape);
    tape.backward(ops::sum(w));
    for (double g : w.grad()) CHECK(g == 1.0);
    CHECK(tape.size() == 0);
}

TEST_CASE("backward of half squared norm is the tensor") {
    Tensor w({3}, {0.5, -2.0, 3.0}, true);
    Tape tape;
    TapeScope scope(tape);
    tape.backward(ops::scale(ops::sum(ops::mul(w, w)), 0.5));
    for (std::size_t i = 0; i < 3; ++i) CHECK(w.grad()[i] == doctest::Approx(w[i]));
}

TEST_CASE("backward rejects non-scalar loss") {
    Tensor w({2}, {1.0, 2.0}, true);
    Tape tape;
    TapeScope scope(tape);
    const Tensor y = ops::scale(w, 2.0);
    CHECK(kind_of([&] { tape.backward(y); }) == ErrorKind::ContractViolation);
}

TEST_CASE("fan-out accumulates gradients") {
    Tensor x({2}, {1.5, -0.5}, true);
    Tape tape;
    TapeScope scope(tape);
    tape.backward(ops::sum(ops::add(ops::mul(x, x), x)));
    CHECK(x.grad()[0] == doctest::Approx(4.0));
    CHECK(x.grad()[1] == doctest::Approx(0.0));
}

TEST_CASE("no tape means no gradient bookkeeping") {
    Tensor x({2}, {1.0, 2.0}, true);
    const Tensor y = ops::sum(ops::mul(x, x));
    CHECK_FALSE(y.requires_grad());
    CHECK(x.grad().empty());
}

TEST_CASE("causal softmax masks the future exactly") {
    Rng rng(3);
    const Tensor s = ops::softmax_rows(random_tensor(rng, {3, 3}, 1.0, false), true);
    CHECK(s.at(0, 1) == 0.0);
    CHECK(s.at(0, 2) == 0.0);
    CHECK(s.at(1, 2) == 0.0);
    CHECK(s.at(0, 0) == doctest::Approx(1.0));
}

TEST_CASE("random three-layer MLP matches central differences") {
    Rng rng(2024);
    Tensor input = random_tensor(rng, {4, 5}, 1.0, false);
    Tensor w1 = random_tensor(rng, {5, 6}, 0.5), b1 = random_tensor(rng, {6}, 0.1);
    Tensor w2 = random_tensor(rng, {6, 6}, 0.5), b2 = random_tensor(rng, {6}, 0.1);
    Tensor w3 = random_tensor(rng, {6, 3}, 0.5), b3 = random_tensor(rng, {3}, 0.1);
    auto loss = [&] {
        Tensor h = ops::gelu(ops::add_rowwise(ops::matmul(input, w1), b1));
        h = ops::gelu(ops::add_rowwise(ops::matmul(h, w2), b2));
        const Tensor out = ops::log_softmax_rows(ops::add_rowwise(ops::matmul(h, w3), b3));
        const std::vector<std::size_t> rows{0, 1, 2, 3}, cols{0, 2, 1, 0};
        return ops::neg(ops::sum(ops::gather(out, rows, cols)));
    };
    const auto r = gradient_check({w1, b1, w2, b2, w3, b3}, loss);
    CHECK(r.max_relative_error <= 1e-4);
}

TEST_CASE("every differentiable op passes random gradient checks") {
    Rng rng(77);
    const int trials = 20;
    for (int trial = 0; trial < trials; ++trial) {
        Tensor a = random_tensor(rng, {3, 4});
        Tensor b = random_tensor(rng, {3, 4});
        Tensor m = random_tensor(rng, {4, 2});
        Tensor bias = random_tensor(rng, {4});
        Tensor gain = random_tensor(rng, {4});
        std::vector<double> positive(12);
        for (double& x : positive) x = 0.2 + rng.uniform();
        Tensor pos({3, 4}, positive, true);
        Tensor weights = random_tensor(rng, {3, 4});
        auto weighted = [&](const Tensor& t) {
            // Random projection so no op is checked only through a plain sum.
            if (t.shape() == weights.shape()) return ops::sum(ops::mul(t, weights));
            return ops::sum(ops::mul(t, t));
        };
        std::vector<std::pair<const char*, std::function<Tensor()>>> cases{
            {"add", [&] { return weighted(ops::add(a, b)); }},
            {"sub", [&] { return weighted(ops::sub(a, b)); }},
            {"mul", [&] { return weighted(ops::mul(a, b)); }},
            {"scale", [&] { return weighted(ops::scale(a, -1.7)); }},
            {"add_scalar", [&] { return weighted(ops::add_scalar(ops::mul(a, a), 0.3)); }},
            {"exp", [&] { return weighted(ops::exp(a)); }},
            {"log", [&] { return weighted(ops::log(pos)); }},
            {"pow", [&] { return weighted(ops::pow(pos, 2.5)); }},
            {"clamp_min", [&] { return weighted(ops::clamp_min(pos, 0.7)); }},
            {"relu", [&] { return weighted(ops::relu(a)); }},
            {"gelu", [&] { return weighted(ops::gelu(a)); }},
            {"add_rowwise", [&] { return weighted(ops::add_rowwise(a, bias)); }},
            {"matmul", [&] { return weighted(ops::matmul(ops::matmul(a, m), ops::transpose(m))); }},
            {"transpose", [&] { return weighted(ops::transpose(ops::transpose(a))); }},
            {"softmax", [&] { return weighted(ops::softmax_rows(a)); }},
            {"softmax_causal", [&] { return weighted(ops::softmax_rows(ops::matmul(ops::transpose(a), a), true)); }},
            {"log_softmax", [&] { return weighted(ops::log_softmax_rows(a)); }},
            {"layer_norm", [&] { return weighted(ops::layer_norm_rows(a, gain, bias)); }},
            {"slice_rows", [&] { return ops::sum(ops::mul(ops::slice_rows(a, 1, 2), ops::slice_rows(b, 0, 2))); }},
            {"slice_cols", [&] { return ops::sum(ops::mul(ops::slice_cols(a, 1, 2), ops::slice_cols(b, 2, 2))); }},
            {"concat_cols",
             [&] {
                 std::vector<Tensor> parts{ops::slice_cols(a, 0, 1), ops::slice_cols(b, 1, 3)};
                 return weighted(ops::concat_cols(parts));
             }},
            {"gather",
             [&] {
                 const std::vector<std::size_t> rows{0, 2, 2, 1}, cols{3, 0, 0, 1};
                 const Tensor g = ops::gather(a, rows, cols);
                 return ops::sum(ops::mul(g, g));
             }},
            {"embedding",
             [&] {
                 const std::vector<std::int32_t> ids{2, 0, 2};
                 const Tensor e = ops::embedding(a, ids);
                 return ops::sum(ops::mul(e, ops::slice_rows(b, 0, 3)));
             }},
        };
        for (auto& [name, fn] : cases) {
            CAPTURE(name);
            CAPTURE(trial);
            const auto r = gradient_check({a, b, m, bias, gain, pos}, fn);
            CHECK(r.max_relative_error <= 1e-4);
        }
    }
}

TEST_CASE("identical seeds give bit-identical values and gradients") {
    auto run = [] {
        Rng rng(5);
        Tensor w = random_tensor(rng, {4, 4});
        Tensor x = random_tensor(rng, {3, 4}, 1.0, false);
        Tape tape;
        TapeScope scope(tape);
        const Tensor y = ops::log_softmax_rows(ops::matmul(x, w));
        const Tensor loss = ops::neg(ops::sum(y));
        tape.backward(loss);
        std::vector<double> out(y.values().begin(), y.values().end());
        out.insert(out.end(), w.grad().begin(), w.grad().end());
        return out;
    };
    const auto first = run();
    const auto second = run();
    REQUIRE(first.size() == second.size());
    for (std::size_t i = 0; i < first.size(); ++i) CHECK(std::memcmp(&first[i], &second[i], sizeof(double)) == 0);
}

TEST_CASE("dropout is identity at rate zero and scales kept units") {
    Rng rng(1);
    const Tensor x({1, 1000}, std::vector<double>(1000, 1.0));
    CHECK(ops::dropout(x, 0.0, rng).node() == x.node());
    const Tensor y = ops::dropout(x, 0.5, rng);
    std::size_t kept = 0;
    for (double v : y.values()) {
        CHECK((v == 0.0 || v == 2.0));
        kept += v != 0.0;
    }
    CHECK(kept > 400);
    CHECK(kept < 600);
}

TEST_CASE("shape mismatches are contract violations") {
    const Tensor a({2, 2}, {1, 2, 3, 4});
    const Tensor b({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(kind_of([&] { ops::add(a, b); }) == ErrorKind::ContractViolation);
    CHECK(kind_of([&] { ops::matmul(b, a); }) == ErrorKind::ContractViolation);
    CHECK(kind_of([&] { Tensor({2, 2}, {1.0}); }) == ErrorKind::ContractViolation);
}
