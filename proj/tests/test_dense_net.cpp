#include "koopflow/dense_net.hpp"
#include "koopflow/oracle.hpp"

#include <doctest.h>

#include <cmath>

using namespace koopflow;

namespace {

// Plain loops, no Eigen products.
Vec reference_forward(const DenseNet& net, const Vec& x)
{
    std::vector<double> u(x.data(), x.data() + x.size());
    const auto& layers = net.layers();
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& W = layers[l].weight;
        std::vector<double> h(static_cast<std::size_t>(W.rows()));
        for (Index i = 0; i < W.rows(); ++i) {
            double acc = layers[l].bias(i);
            for (Index j = 0; j < W.cols(); ++j)
                acc += W(i, j) * u[static_cast<std::size_t>(j)];
            h[static_cast<std::size_t>(i)] = (l + 1 < layers.size()) ? (acc > 0 ? acc : std::exp(acc) - 1.0) : acc;
        }
        u = std::move(h);
    }
    return Eigen::Map<Vec>(u.data(), static_cast<Index>(u.size()));
}

DenseNet random_net(std::vector<Index> dims, std::uint64_t seed)
{
    Rng rng(seed);
    DenseNet net = DenseNet::he_initialized(std::move(dims), rng, false);
    for (auto& l : net.layers())
        for (Index i = 0; i < l.bias.size(); ++i)
            l.bias(i) = 0.3 * rng.normal();
    return net;
}

// Batched dual input: values then one identity tangent per input dimension.
Mat dual_input(const Mat& X)
{
    const Index n = X.rows(), B = X.cols();
    Mat dual = Mat::Zero(n, (n + 1) * B);
    dual.leftCols(B) = X;
    for (Index j = 0; j < n; ++j)
        dual.block(j, (j + 1) * B, 1, B).setOnes();
    return dual;
}

// sum_b |net(x_b)|^2 + 0.5 sum_b |J(x_b)|_F^2
double value_jacobian_loss(const DenseNet& net, const Mat& X)
{
    const Mat out = net.forward_dual(dual_input(X), X.cols());
    const Index B = X.cols();
    return out.leftCols(B).squaredNorm() + 0.5 * out.rightCols(out.cols() - B).squaredNorm();
}

Vec value_jacobian_gradient(const DenseNet& net, const Mat& X, double w_value = 1.0)
{
    NetTape tape;
    const Mat out = net.forward_dual(dual_input(X), X.cols(), &tape);
    const Index B = X.cols();
    Mat g = out;
    g.leftCols(B) *= 2.0 * w_value;
    Vec grad = Vec::Zero(net.parameter_count());
    net.backward_dual(g, tape, {grad.data(), static_cast<std::size_t>(grad.size())});
    return grad;
}

} // namespace

TEST_CASE("elu is continuous with a continuous derivative at zero")
{
    CHECK(elu(0.0) == 0.0);
    CHECK(std::abs(elu(1e-12) - elu(-1e-12)) <= 2.1e-12);
    CHECK(std::abs(elu_prime(1e-12) - elu_prime(-1e-12)) <= 1e-11);
    CHECK(elu_prime(0.0) == 1.0);
    CHECK(elu(-1.0) == doctest::Approx(std::exp(-1.0) - 1.0).epsilon(1e-15));
    CHECK(elu(3.0) == 3.0);
}

TEST_CASE("net_forward")
{
    SUBCASE("zero final layer gives the zero map")
    {
        Rng rng(1);
        const DenseNet net = DenseNet::he_initialized({1, 120, 120, 120, 1}, rng, true);
        for (double x : {-4.0, 0.0, 2.5})
            CHECK(net.forward(Vec::Constant(1, x)).isZero(0.0));
    }
    SUBCASE("single identity layer")
    {
        DenseNet net({3, 3});
        net.layers()[0].weight.setIdentity();
        Vec x(3);
        x << 1.5, -2, 0.25;
        CHECK(net.forward(x) == x);
    }
    SUBCASE("matches a loop-based re-implementation")
    {
        for (std::uint64_t s = 0; s < 5; ++s) {
            const DenseNet net = random_net({2, 7, 5, 3}, s);
            Rng rng(100 + s);
            for (int i = 0; i < 20; ++i) {
                Vec x(2);
                x << rng.uniform(-3, 3), rng.uniform(-3, 3);
                CHECK((net.forward(x) - reference_forward(net, x)).cwiseAbs().maxCoeff() <= 1e-14);
            }
        }
    }
    SUBCASE("batched dual value block equals pointwise forward")
    {
        const DenseNet net = random_net({2, 6, 6, 2}, 3);
        Rng rng(4);
        Mat X(2, 5);
        for (Index i = 0; i < X.size(); ++i)
            X(i) = rng.uniform(-2, 2);
        const Mat out = net.forward_dual(dual_input(X), 5);
        for (Index b = 0; b < 5; ++b) {
            CHECK((out.col(b) - net.forward(X.col(b))).norm() <= 1e-14);
            const Mat J = net.input_jacobian(X.col(b));
            CHECK((out.col(5 + b) - J.col(0)).norm() <= 1e-14);
            CHECK((out.col(10 + b) - J.col(1)).norm() <= 1e-14);
        }
    }
    SUBCASE("dimension errors")
    {
        DenseNet net({2, 3});
        CHECK_THROWS_AS(net.forward(Vec::Zero(3)), ConfigError);
        CHECK_THROWS_AS(DenseNet({2}), ConfigError);
        CHECK_THROWS_AS(DenseNet({2, 0, 1}), ConfigError);
    }
}

TEST_CASE("net_input_jacobian")
{
    SUBCASE("linear net returns W everywhere")
    {
        DenseNet net({2, 3});
        net.layers()[0].weight << 1, 2, 3, 4, 5, 6;
        net.layers()[0].bias << 7, 8, 9;
        for (double a : {-1.0, 0.0, 10.0})
            CHECK(net.input_jacobian(Vec::Constant(2, a)) == net.layers()[0].weight);
    }
    SUBCASE("zero final layer gives the zero matrix")
    {
        Rng rng(2);
        const DenseNet net = DenseNet::he_initialized({1, 16, 16, 1}, rng, true);
        CHECK(net.input_jacobian(Vec::Constant(1, 0.7)).isZero(0.0));
    }
    SUBCASE("finite-difference property over random nets")
    {
        for (std::uint64_t s = 0; s < 10; ++s) {
            const DenseNet net = random_net({2, 9, 9, 9, 2}, s);
            Rng rng(50 + s);
            for (int i = 0; i < 10; ++i) {
                Vec x(2);
                x << rng.uniform(-3, 3), rng.uniform(-3, 3);
                const Mat fd = fd_jacobian([&](const Vec& v) { return net.forward(v); }, x);
                CHECK(relative_error(net.input_jacobian(x), fd) < 1e-6);
            }
        }
    }
}

TEST_CASE("loss_gradient")
{
    SUBCASE("loss on values and Jacobian entries matches finite differences")
    {
        for (bool zero_output : {false, true}) {
            Rng rng(7);
            DenseNet net = DenseNet::he_initialized({2, 8, 8, 2}, rng, zero_output);
            Mat X(2, 6);
            for (Index i = 0; i < X.size(); ++i)
                X(i) = rng.uniform(-2, 2);
            const Vec g = value_jacobian_gradient(net, X);
            Vec p(net.parameter_count());
            net.write_parameters({p.data(), static_cast<std::size_t>(p.size())});
            Vec fd(p.size());
            const double h = 1e-6;
            for (Index i = 0; i < p.size(); ++i) {
                DenseNet probe = net;
                Vec q = p;
                q(i) += h;
                probe.read_parameters({q.data(), static_cast<std::size_t>(q.size())});
                const double lp = value_jacobian_loss(probe, X);
                q(i) -= 2 * h;
                probe.read_parameters({q.data(), static_cast<std::size_t>(q.size())});
                fd(i) = (lp - value_jacobian_loss(probe, X)) / (2 * h);
            }
            CHECK(relative_error(g, fd) < 1e-4);
        }
    }
    SUBCASE("output bias gets exactly zero gradient from a Jacobian-only loss")
    {
        const DenseNet net = random_net({2, 5, 5, 2}, 9);
        Mat X = Mat::Random(2, 4);
        const Vec g = value_jacobian_gradient(net, X, 0.0);
        const Index nb = net.layers().back().bias.size();
        CHECK(g.tail(nb).isZero(0.0));
        CHECK(g.head(g.size() - nb).norm() > 0.0);
    }
    SUBCASE("quadratic-in-parameters loss has the closed-form gradient")
    {
        // Single affine layer: L = sum_b |W x_b + b - y_b|^2, dL/dW = 2 sum r x^T, dL/db = 2 sum r.
        DenseNet net({3, 2});
        net.layers()[0].weight << 0.5, -1, 2, 0.1, 0.3, -0.7;
        net.layers()[0].bias << 0.2, -0.4;
        Mat X(3, 4), Y(2, 4);
        X << 1, 2, -1, 0.5, 0, 1, 3, -2, 2, -1, 0, 1;
        Y << 1, 0, -1, 2, 0.5, 0.5, 1, -3;
        const Mat W = net.layers()[0].weight;
        const Vec b = net.layers()[0].bias;
        const Mat R = (W * X).colwise() + b - Y;

        NetTape tape;
        const Mat out = net.forward_dual(X, 4, &tape);
        Vec grad = Vec::Zero(net.parameter_count());
        net.backward_dual(2.0 * (out - Y), tape, {grad.data(), static_cast<std::size_t>(grad.size())});
        const RowMat gW = 2.0 * R * X.transpose();
        const Vec gb = 2.0 * R.rowwise().sum();
        CHECK((grad.head(6) - Eigen::Map<const Vec>(gW.data(), 6)).cwiseAbs().maxCoeff() <= 1e-10);
        CHECK((grad.tail(2) - gb).cwiseAbs().maxCoeff() <= 1e-10);
    }
}

TEST_CASE("flatten and unflatten round trip exactly")
{
    DenseNet a = random_net({1, 4, 1}, 1), b = random_net({1, 3, 3, 1}, 2);
    const Vec p = flatten({&a, &b});
    CHECK(p.size() == a.parameter_count() + b.parameter_count());
    DenseNet a2({1, 4, 1}), b2({1, 3, 3, 1});
    unflatten(p, {&a2, &b2});
    CHECK(flatten({&a2, &b2}) == p);
    for (std::size_t l = 0; l < a.layers().size(); ++l) {
        CHECK(a2.layers()[l].weight == a.layers()[l].weight);
        CHECK(a2.layers()[l].bias == a.layers()[l].bias);
    }
    CHECK_THROWS_AS(unflatten(p.head(p.size() - 1), {&a2, &b2}), ConfigError);
}

TEST_CASE("ParamIndex maps flat indices back to slots")
{
    DenseNet a({2, 3, 1}), b({1, 2});
    const ParamIndex idx({&a, &b});
    CHECK(idx.size() == 9 + 4 + 2 + 2);
    auto s = idx.locate(0);
    CHECK((s.net == 0 && s.layer == 0 && !s.is_bias && s.row == 0 && s.col == 0));
    s = idx.locate(5);
    CHECK((s.row == 2 && s.col == 1 && !s.is_bias));
    s = idx.locate(6);
    CHECK((s.is_bias && s.row == 0 && s.layer == 0));
    s = idx.locate(12);
    CHECK((s.net == 0 && s.layer == 1 && s.is_bias));
    s = idx.locate(14);
    CHECK((s.net == 1 && s.layer == 0 && !s.is_bias && s.row == 1));
    CHECK(idx.net_range(1) == std::pair<std::size_t, std::size_t>{13, 17});
    CHECK_THROWS_AS(idx.locate(17), ConfigError);

    // Writing through a located slot changes exactly that entry.
    Vec p = Vec::Zero(17);
    p(10) = 1.0;
    unflatten(p, {&a, &b});
    s = idx.locate(10);
    CHECK(a.layers()[s.layer].weight(s.row, s.col) == 1.0);
}

TEST_CASE("adam_step")
{
    const AdamConfig cfg;
    SUBCASE("zero gradient leaves parameters unchanged")
    {
        Vec p(3);
        p << 1, -2, 3;
        const Vec p0 = p;
        AdamState st;
        for (int i = 0; i < 10; ++i)
            adam_step(p, Vec::Zero(3), st, cfg);
        CHECK(p == p0);
    }
    SUBCASE("first step is -lr g / (|g| + eps)")
    {
        Vec p = Vec::Zero(3), g(3);
        g << 0.5, -2e-3, 40;
        AdamState st;
        adam_step(p, g, st, cfg);
        for (Index i = 0; i < 3; ++i)
            CHECK(p(i) == doctest::Approx(-cfg.lr * g(i) / (std::abs(g(i)) + cfg.eps)).epsilon(1e-12));
        CHECK(st.step == 1);
    }
    SUBCASE("constant gradient steps approach lr in magnitude")
    {
        Vec p = Vec::Zero(2), g(2);
        g << 3.0, -0.01;
        AdamState st;
        Vec prev = p;
        for (int i = 0; i < 2000; ++i) {
            prev = p;
            adam_step(p, g, st, cfg);
        }
        const Vec step = p - prev;
        CHECK(step(0) == doctest::Approx(-cfg.lr).epsilon(1e-6));
        CHECK(step(1) == doctest::Approx(cfg.lr).epsilon(1e-4));
    }
    SUBCASE("size mismatch")
    {
        Vec p = Vec::Zero(2);
        AdamState st;
        CHECK_THROWS_AS(adam_step(p, Vec::Zero(3), st, cfg), ConfigError);
    }
}
