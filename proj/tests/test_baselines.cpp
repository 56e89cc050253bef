#include "koopflow/baselines.hpp"
#include "koopflow/oracle.hpp"

#include <doctest.h>

#include <cmath>

using namespace koopflow;

namespace {

Vec v2(double a, double b)
{
    Vec x(2);
    x << a, b;
    return x;
}

Mat random_matrix(Index n, Rng& rng, double scale)
{
    Mat M(n, n);
    for (Index i = 0; i < M.size(); ++i)
        M(i) = scale * rng.normal();
    return M;
}

TrajectoryDataset dataset_of(const VectorFieldSpec& sys, int n, int steps, double dt)
{
    const auto box = symmetric_box(2, 5.0);
    return generate_dataset(sys, box, boundary_starts(box, n, 1), dt, steps);
}

} // namespace

TEST_CASE("monomial dictionaries")
{
    const auto d1 = monomial_dictionary(2, 1);
    CHECK(dict_eval(d1, v2(2, 3)) == Eigen::Vector3d(1, 2, 3));
    CHECK(monomial_dictionary(2, 2).size() == 6);
    CHECK(monomial_dictionary(2, 5).size() == 21);
    CHECK(monomial_dictionary(3, 4).size() == 35);
    CHECK(monomial_dictionary(2, 5, true).size() == 36);
    CHECK(monomial_dictionary(2, 8, true).size() == 81);

    const auto d2 = monomial_dictionary(2, 2);
    Vec expect(6);
    expect << 1, 2, 3, 4, 6, 9;
    CHECK(dict_eval(d2, v2(2, 3)) == expect);

    Vec scale = v2(2, 4);
    const auto ds = monomial_dictionary(2, 2, false, scale);
    CHECK(dict_eval(ds, v2(2, 4)) == Vec::Ones(6));
    CHECK_THROWS_AS(monomial_dictionary(2, 2, false, Vec::Ones(3)), ConfigError);
    CHECK_THROWS_AS(monomial_dictionary(2, -1), ConfigError);
    CHECK_THROWS_AS(dict_eval(d2, Vec::Zero(3)), ConfigError);
}

TEST_CASE("rbf dictionaries")
{
    Mat centers(2, 3);
    centers << 0, 1, -2, 0, 2, 1;
    const auto d = rbf_dictionary(centers, 0.5);
    CHECK(d.size() == 6);
    const Vec at = dict_eval(d, centers.col(1));
    CHECK(at(0) == 1.0);
    CHECK(at.segment(1, 2) == centers.col(1));
    CHECK(at(4) == 1.0);
    CHECK(at(3) == doctest::Approx(std::exp(-0.5 * 5.0)).epsilon(1e-15));
    CHECK_THROWS_AS(rbf_dictionary(centers, 0.0), ConfigError);

    const auto ds = dataset_of(make_ex1(), 24, 199, 0.065);
    const auto r36 = rbf_from_data(ds, 36, 7);
    CHECK(r36.size() == 36);
    CHECK(r36.centers.cols() == 33);
    CHECK(r36.gamma > 0.0);
    CHECK(rbf_from_data(ds, 196, 7).size() == 196);
    CHECK(rbf_from_data(ds, 36, 7).centers == r36.centers);
    CHECK(rbf_from_data(ds, 36, 8).centers != r36.centers);
    // Centers are distinct dataset states.
    const Mat X = ds.states_matrix();
    for (Index c = 0; c < r36.centers.cols(); ++c) {
        bool found = false;
        for (Index i = 0; i < X.cols() && !found; ++i)
            found = X.col(i) == r36.centers.col(c);
        CHECK(found);
    }
    CHECK_THROWS_AS(rbf_from_data(ds, 3, 0), ConfigError);
    CHECK_THROWS_AS(rbf_from_data(dataset_of(make_ex1(), 1, 3, 0.065), 36, 0), DegenerateDataError);
}

TEST_CASE("dictionary gradients against finite differences")
{
    const auto ds = dataset_of(make_ex1(), 6, 50, 0.065);
    Vec scale = v2(5.0, 7.0);
    const std::vector<Dictionary> dicts{monomial_dictionary(2, 5), monomial_dictionary(2, 5, true, scale),
                                        monomial_dictionary(2, 8, true, scale), rbf_from_data(ds, 36, 3)};
    Rng rng(4);
    for (const auto& d : dicts)
        for (int i = 0; i < 20; ++i) {
            const Vec x = v2(rng.uniform(-5, 5), rng.uniform(-5, 5));
            const Mat fd = fd_jacobian([&](const Vec& v) { return dict_eval(d, v); }, x);
            CHECK(relative_error(dict_grad(d, x), fd) < 1e-6);
        }
}

TEST_CASE("fit_generator_edmd")
{
    Mat A(2, 2);
    A << -1.0, 0.5, -0.2, -0.6;
    const auto lin = make_linear(A);
    SUBCASE("linear dictionary closes under linear dynamics")
    {
        const auto ds = dataset_of(lin, 8, 60, 0.05);
        const auto m = fit_generator_edmd(ds, monomial_dictionary(2, 1));
        CHECK((m.L.block(1, 1, 2, 2) - A).cwiseAbs().maxCoeff() <= 1e-8);
        CHECK(m.L.row(0).cwiseAbs().maxCoeff() <= 1e-8);
        CHECK(m.L.block(1, 0, 2, 1).cwiseAbs().maxCoeff() <= 1e-8);
        Mat sel = Mat::Zero(2, 3);
        sel(0, 1) = sel(1, 2) = 1.0;
        CHECK((m.C - sel).cwiseAbs().maxCoeff() <= 1e-8);

        // Multi-step prediction against the closed form.
        const Vec x0 = v2(3, -4);
        const Mat P = predict_edmd(m, x0, 0.05, 100);
        for (int k = 0; k <= 100; k += 10)
            CHECK((P.col(k) - expm(A * (0.05 * k)) * x0).cwiseAbs().maxCoeff() <= 1e-6);
    }
    SUBCASE("spectral abscissa is a diagnostic, not a constraint")
    {
        const auto ds = dataset_of(make_ex1(), 24, 199, 0.065);
        const auto m = fit_generator_edmd(ds, monomial_dictionary(2, 5, true));
        CHECK(m.L.rows() == 36);
        CHECK(std::isfinite(spectral_abscissa(m.L)));
        CHECK(m.fit_reconstruction.residual_rms <= 1e-6);
    }
    SUBCASE("errors")
    {
        TrajectoryDataset empty{{}, make_ex1(), symmetric_box(2, 5.0), 0};
        CHECK_THROWS_AS(fit_generator_edmd(empty, monomial_dictionary(2, 2)), DegenerateDataError);
        CHECK_THROWS_AS(fit_generator_edmd(dataset_of(lin, 2, 5, 0.1), monomial_dictionary(3, 2)), ConfigError);
    }
}

TEST_CASE("expm")
{
    SUBCASE("diagonal matrix")
    {
        Vec d(4);
        d << -3.0, 0.0, 0.25, -0.7;
        const Mat E = expm(Mat(d.asDiagonal()));
        for (Index i = 0; i < 4; ++i)
            CHECK(std::abs(E(i, i) - std::exp(d(i))) <= 1e-13);
        CHECK((E - Mat(E.diagonal().asDiagonal())).cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("truncated Taylor series for small random matrices")
    {
        Rng rng(5);
        for (int t = 0; t < 10; ++t) {
            Mat M = random_matrix(6, rng, 1.0);
            M *= 0.45 / M.norm();
            Mat series = Mat::Identity(6, 6), term = Mat::Identity(6, 6);
            for (int k = 1; k <= 30; ++k) {
                term = term * M / static_cast<double>(k);
                series += term;
            }
            CHECK((expm(M) - series).cwiseAbs().maxCoeff() <= 1e-10);
        }
    }
    SUBCASE("group property for commuting arguments")
    {
        Rng rng(6);
        const Mat M = random_matrix(5, rng, 0.4);
        CHECK((expm(2.0 * M) - expm(M) * expm(M)).norm() <= 1e-12 * expm(2.0 * M).norm());
    }
    CHECK_THROWS_AS(expm(Mat::Zero(2, 3)), ConfigError);
}

TEST_CASE("predict_edmd")
{
    GeneratorEdmdModel m;
    m.dict = monomial_dictionary(2, 2);
    m.L = Mat::Zero(6, 6);
    m.C = Mat::Zero(2, 6);
    m.C(0, 1) = m.C(1, 2) = 1.0;
    const Mat P = predict_edmd(m, v2(1.5, -2), 0.1, 20);
    for (int k = 0; k <= 20; ++k)
        CHECK(P.col(k) == v2(1.5, -2));
    CHECK_THROWS_AS(predict_edmd(m, v2(1, 1), 0.0, 5), ConfigError);
    CHECK_THROWS_AS(predict_edmd(m, v2(1, 1), 0.1, -1), ConfigError);
}
