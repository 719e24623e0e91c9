#include <filesystem>

#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "semcom/checkpoint.hpp"
#include "semcom/nn.hpp"

using namespace semcom;
using nn::Matrix;

TEST(Mlp, InputGradientMatchesFiniteDifferences) {
    Rng rng(1);
    nn::Mlp net({3, 5, 4, 2}, rng);
    gradcheck::jitter_biases(net, rng);
    Matrix x(3, 4), w(2, 4);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.normal();
    nn::Mlp::Cache cache;
    net.forward(x, &cache);
    auto g = net.zero_grads();
    const Matrix dx = net.backward(cache, w, g);
    const double h = 1e-6;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        Matrix xp = x, xm = x;
        xp.data()[i] += h;
        xm.data()[i] -= h;
        const double num = (net.forward(xp).cwiseProduct(w).sum() - net.forward(xm).cwiseProduct(w).sum()) / (2 * h);
        EXPECT_NEAR(dx.data()[i], num, 1e-7 * std::max(1.0, std::abs(num)));
    }
}

TEST(Mlp, ParameterRoundTrip) {
    Rng rng(2);
    nn::Mlp a({2, 3, 1}, rng);
    nn::Mlp b({2, 3, 1}, rng);
    b.set_parameters(a.parameters());
    EXPECT_EQ(a.parameters(), b.parameters());
    EXPECT_EQ(a.parameter_count(), 13u);
    EXPECT_THROW(b.set_parameters(std::vector<double>(5)), Error);
}

TEST(Adam, FitsALinearTarget) {
    Rng rng(3);
    nn::Mlp net({1, 1}, rng);
    nn::Adam opt(net, {0.05, 0.9, 0.999, 1e-8, 0.0});
    Matrix x(1, 16);
    for (Eigen::Index k = 0; k < 16; ++k) x(0, k) = -1 + 2.0 * static_cast<double>(k) / 15;
    const Matrix y = (3 * x).array() - 1;
    for (int step = 0; step < 2000; ++step) {
        nn::Mlp::Cache c;
        const Matrix out = net.forward(x, &c);
        auto g = net.zero_grads();
        net.backward(c, 2 * (out - y) / 16.0, g);
        opt.step(net, std::move(g));
    }
    EXPECT_NEAR(net.weights()[0](0, 0), 3.0, 1e-3);
    EXPECT_NEAR(net.biases()[0][0], -1.0, 1e-3);
}

TEST(GradientCheck, CriticAndPolicyOnMicroNetworks) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto r = gradcheck::run(seed);
        EXPECT_LT(r.critic, 1e-4) << "seed " << seed;
        EXPECT_LT(r.policy, 1e-4) << "seed " << seed;
    }
}

TEST(Checkpoint, RoundTripAndBadMagic) {
    const auto path = std::filesystem::temp_directory_path() / "semcom_test_ckpt.bin";
    const std::vector<NamedArray> arrays{{"a", {2, 3}, {1, 2, 3, 4, 5, 6}}, {"b", {1}, {-0.5}}};
    write_checkpoint(path, arrays);
    const auto back = read_checkpoint(path);
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(find_array(back, "a").values, arrays[0].values);
    EXPECT_EQ(find_array(back, "a").shape, arrays[0].shape);
    EXPECT_THROW(find_array(back, "zz"), Error);
    std::ofstream(path) << "garbage";
    EXPECT_THROW(read_checkpoint(path), Error);
}
