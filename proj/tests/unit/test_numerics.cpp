#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <string>

#include "mplbench/numerics/grad_check.hpp"
#include "mplbench/numerics/ops.hpp"
#include "mplbench/numerics/random.hpp"
#include "support/checks.hpp"

using namespace mplbench::numerics;
using checks::random_tensor;

namespace {

// Straight triple loop, independent of the library's matmul.
std::vector<double> naive_matmul(std::span<const double> a, std::span<const double> b,
                                 std::size_t n, std::size_t k, std::size_t m) {
    std::vector<double> out(n * m, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            for (std::size_t p = 0; p < k; ++p) {
                out[i * m + j] += a[i * k + p] * b[p * m + j];
            }
        }
    }
    return out;
}

std::string error_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const std::exception& e) {
        return e.what();
    }
    return {};
}

} // namespace

TEST_CASE("softmax of equal logits is uniform") {
    const auto out = softmax(Tensor::from_data({3}, {0.0, 0.0, 0.0}));
    for (const double v : out.data()) {
        CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    }
}

TEST_CASE("cross entropy of uniform logits over 100 classes is ln 100") {
    const auto logits = Tensor::zeros({1, 100});
    for (const std::uint32_t target : {0u, 57u, 99u}) {
        const std::vector<std::uint32_t> t{target};
        CHECK(cross_entropy(logits, t).item() == doctest::Approx(std::log(100.0)).epsilon(1e-14));
    }
}

TEST_CASE("matmul agrees with a triple-loop oracle") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const auto a = random_tensor(rng, {2, 3}, -2, 2, false);
        const auto b = random_tensor(rng, {3, 2}, -2, 2, false);
        const auto got = matmul(a, b);
        const auto want = naive_matmul(a.data(), b.data(), 2, 3, 2);
        REQUIRE(got.shape() == Shape{2, 2});
        for (std::size_t i = 0; i < want.size(); ++i) {
            CHECK(got.data()[i] == doctest::Approx(want[i]).epsilon(1e-14));
        }
    }
}

TEST_CASE("shape mismatch diagnostics name both shapes") {
    const auto a = Tensor::zeros({2, 3});
    const auto b = Tensor::zeros({2, 2});
    const auto msg = error_of([&] { (void)matmul(a, b); });
    CHECK(msg.find("2x3") != std::string::npos);
    CHECK(msg.find("2x2") != std::string::npos);
    const auto msg_add = error_of([&] { (void)add(a, b); });
    CHECK(msg_add.find("2x3") != std::string::npos);
    CHECK(msg_add.find("2x2") != std::string::npos);
}

TEST_CASE("backward of a sum gives ones") {
    Rng rng(1);
    auto x = random_tensor(rng, {3, 5});
    backward(sum(x));
    for (const double g : x.grad()) {
        CHECK(g == 1.0);
    }
}

TEST_CASE("backward of sum(x*x) gives 2x") {
    Rng rng(2);
    auto x = random_tensor(rng, {4, 2});
    backward(sum(mul(x, x)));
    for (std::size_t i = 0; i < x.numel(); ++i) {
        CHECK(x.grad()[i] == doctest::Approx(2.0 * x.data()[i]).epsilon(1e-15));
    }
}

TEST_CASE("backward rejects non-scalar losses") {
    auto x = Tensor::zeros({2, 2}, true);
    CHECK_THROWS_AS(backward(x), std::invalid_argument);
}

TEST_CASE("leaf gradients accumulate across backward calls until zeroed") {
    Rng rng(5);
    auto x = random_tensor(rng, {3});
    backward(sum(mul(x, x)));
    backward(sum(mul(x, x)));
    for (std::size_t i = 0; i < x.numel(); ++i) {
        CHECK(x.grad()[i] == doctest::Approx(4.0 * x.data()[i]).epsilon(1e-15));
    }
    x.zero_grad();
    backward(sum(x));
    for (const double g : x.grad()) {
        CHECK(g == 1.0);
    }
}

TEST_CASE("every reachable leaf that requires grad receives one") {
    Rng rng(6);
    auto w = random_tensor(rng, {3, 2});
    auto b = random_tensor(rng, {2});
    auto x = random_tensor(rng, {4, 3}, -2, 2, false);
    backward(sum(gelu(add_rowwise(matmul(x, w), b))));
    CHECK(w.has_grad());
    CHECK(b.has_grad());
    CHECK_FALSE(x.has_grad());
    CHECK(w.grad().size() == w.numel());
}

TEST_CASE("grad_check on a quadratic form is essentially exact") {
    Rng rng(7);
    const auto a = random_tensor(rng, {4, 4}, -1, 1, false);
    auto x = random_tensor(rng, {4, 1});
    const auto report = grad_check([&] { return sum(matmul(transpose(x), matmul(a, x))); }, {x});
    CHECK(report.max_relative_error < 1e-6);
    CHECK(report.coordinates_checked == 4);
}

TEST_CASE("grad_check on a layer norm and softmax chain") {
    Rng rng(8);
    auto x = random_tensor(rng, {5, 6});
    auto g = random_tensor(rng, {6});
    auto b = random_tensor(rng, {6});
    const auto report = grad_check(
        [&] { return checks::weighted_sum(softmax(layer_norm(x, g, b)), 11); }, {x, g, b});
    CHECK(report.max_relative_error < 1e-4);
}

TEST_CASE("grad_check samples at most the requested coordinates per tensor") {
    Rng rng(9);
    auto big = random_tensor(rng, {20, 10});
    auto small = random_tensor(rng, {7});
    const auto report = grad_check([&] { return add(sum(mul(big, big)), sum(small)); }, {big, small});
    CHECK(report.coordinates_checked == 50 + 7);
}

TEST_CASE("grad_check rejects non-finite forward values") {
    auto x = Tensor::from_data({1}, {1.0}, true);
    CHECK_THROWS_AS(grad_check([&] { return scale(sum(x), std::numeric_limits<double>::infinity()); }, {x}),
                    std::domain_error);
}

TEST_CASE("every primitive passes a finite-difference check") {
    for (const std::uint64_t seed : {1u, 2u, 3u}) {
        for (const auto& [name, err] : checks::primitive_grad_errors(seed)) {
            INFO(name << " seed " << seed);
            CHECK(err < 1e-4);
        }
    }
}

TEST_CASE("softmax rows sum to one and layer norm rows have zero mean") {
    Rng rng(10);
    const auto x = random_tensor(rng, {16, 9}, -20, 20, false);
    const auto s = softmax(x);
    const auto ones = Tensor::from_data({9}, std::vector<double>(9, 1.0));
    const auto zeros = Tensor::zeros({9});
    const auto ln = layer_norm(x, ones, zeros);
    for (std::size_t r = 0; r < 16; ++r) {
        double total = 0.0;
        double mean_ln = 0.0;
        for (std::size_t c = 0; c < 9; ++c) {
            total += s.at(r, c);
            mean_ln += ln.at(r, c) / 9.0;
        }
        CHECK(std::abs(total - 1.0) < 1e-12);
        CHECK(std::abs(mean_ln) < 1e-9);
    }
}

TEST_CASE("forward values and gradients are bit-identical across repeats") {
    auto run = [] {
        Rng rng(12);
        auto q = random_tensor(rng, {5, 4});
        auto k = random_tensor(rng, {5, 4});
        auto v = random_tensor(rng, {5, 4});
        const auto loss = checks::weighted_sum(attention(q, k, v), 4);
        backward(loss);
        std::vector<double> out{loss.item()};
        for (const auto* t : {&q, &k, &v}) {
            out.insert(out.end(), t->grad().begin(), t->grad().end());
        }
        return out;
    };
    CHECK(run() == run());
}

TEST_CASE("NoGradGuard stops graph recording") {
    auto x = Tensor::from_data({2}, {1.0, 2.0}, true);
    Tensor y;
    {
        NoGradGuard guard;
        CHECK_FALSE(grad_mode_enabled());
        y = sum(mul(x, x));
    }
    CHECK(grad_mode_enabled());
    CHECK_FALSE(y.requires_grad());
}

TEST_CASE("mutable_data is refused on computed tensors") {
    auto x = Tensor::from_data({2}, {1.0, 2.0}, true);
    auto y = scale(x, 2.0);
    CHECK_THROWS(y.mutable_data());
}

TEST_CASE("rng streams are deterministic and independent") {
    Rng a(derive_seed(42, 1));
    Rng b(derive_seed(42, 1));
    Rng c(derive_seed(42, 2));
    bool differs = false;
    for (int i = 0; i < 100; ++i) {
        const auto x = a.next_u64();
        CHECK(x == b.next_u64());
        differs = differs || x != c.next_u64();
    }
    CHECK(differs);
    CHECK(derive_seed(1, 2, 3) != derive_seed(1, 3, 2));
}

TEST_CASE("rng uniform, uniform_int and normal stay in range with sane moments") {
    Rng rng(77);
    double sum_u = 0.0;
    double sum_n = 0.0;
    double sum_n2 = 0.0;
    std::vector<int> counts(7, 0);
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        sum_u += u;
        const auto k = rng.uniform_int(7);
        REQUIRE(k < 7);
        ++counts[k];
        const double z = rng.normal();
        sum_n += z;
        sum_n2 += z * z;
    }
    CHECK(sum_u / n == doctest::Approx(0.5).epsilon(0.01));
    CHECK(std::abs(sum_n / n) < 0.01);
    CHECK(sum_n2 / n == doctest::Approx(1.0).epsilon(0.02));
    for (const int c : counts) {
        CHECK(c == doctest::Approx(n / 7.0).epsilon(0.03));
    }
}

TEST_CASE("rng state round-trips through serialize and restore") {
    Rng a(9);
    (void)a.normal(); // leaves a cached spare behind
    const auto saved = a.serialize();
    Rng b(0);
    b.restore(saved);
    CHECK(a == b);
    for (int i = 0; i < 10; ++i) {
        CHECK(a.normal() == b.normal());
    }
}
